use std::collections::HashSet;

use super::{DdiDataset, DdiPair, EntityId, KnowledgeGraph, RelationId, Triplet, Vocab};
use crate::error::{Error, Result};

/// Relation name used for interaction class `c` in the propagation graph.
pub fn ddi_relation_name(class: u32) -> String {
    format!("ddi:{class}")
}

fn parse_ddi_relation(name: &str) -> Option<u32> {
    name.strip_prefix("ddi:")?.parse().ok()
}

/// Which triplets feed message passing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphSource {
    /// Knowledge-graph triplets plus training interactions.
    KnowledgeGraph,
    /// Training interactions only (the no-KG ablation).
    InteractionsOnly,
}

/// Builds the message-passing graph.
///
/// The output relation table lists the KG's own relations first, then one
/// relation per interaction class (`ddi:0 .. ddi:C-1`) as a contiguous
/// range. KG relations already named `ddi:<c>` are folded into that range.
/// Every training pair contributes one `(u, ddi:c, v)` triplet per label.
/// Any interaction-range triplet joining a `holdout` pair, in either
/// direction, is dropped.
pub fn build_propagation_graph(
    kg: &KnowledgeGraph,
    train: &DdiDataset,
    holdout: &[DdiPair],
    source: GraphSource,
) -> Result<KnowledgeGraph> {
    let num_classes = train.num_classes;
    let class_count = u32::try_from(num_classes).map_err(|_| Error::IdOverflow(u32::MAX as u64))?;

    // Map every KG relation into the new table.
    let mut plain = Vec::new();
    let mut remap = vec![RelationId(0); kg.num_relations()];
    let mut is_ddi = vec![false; kg.num_relations()];
    for (r, name) in kg.relations().names().iter().enumerate() {
        match parse_ddi_relation(name) {
            Some(c) if c < class_count => is_ddi[r] = true,
            Some(c) => log::warn!(
                "relation {name:?} names class {c} but the dataset has {num_classes} classes; treated as a plain relation"
            ),
            None => {}
        }
        if !is_ddi[r] {
            remap[r] = RelationId(plain.len() as u32);
            plain.push(name.clone());
        }
    }
    let offset = plain.len() as u32;
    for (r, name) in kg.relations().names().iter().enumerate() {
        if is_ddi[r] {
            remap[r] = RelationId(offset + parse_ddi_relation(name).expect("checked"));
        }
    }
    let relations = Vocab::from_names(plain.into_iter().chain((0..class_count).map(ddi_relation_name)))?;

    let blocked: HashSet<(EntityId, EntityId)> = holdout.iter().flat_map(|p| [(p.u, p.v), (p.v, p.u)]).collect();

    let mut triplets = Vec::new();
    if source == GraphSource::KnowledgeGraph {
        for t in kg.triplets() {
            let relation = remap[t.relation.index()];
            let in_ddi_range = relation.0 >= offset;
            if in_ddi_range && blocked.contains(&(t.head, t.tail)) {
                continue;
            }
            triplets.push(Triplet {
                head: t.head,
                relation,
                tail: t.tail,
            });
        }
    }
    for p in &train.pairs {
        kg.check_entity(p.u)?;
        kg.check_entity(p.v)?;
        for &c in &p.labels {
            if c >= class_count {
                return Err(Error::OutOfRange {
                    kind: "label",
                    id: c as usize,
                    count: num_classes,
                });
            }
            triplets.push(Triplet {
                head: p.u,
                relation: RelationId(offset + c),
                tail: p.v,
            });
        }
    }

    let mut g = KnowledgeGraph::new(kg.entities().clone(), relations, triplets)?
        .with_ddi_relations(offset..offset + class_count);
    g.entity_types = kg.entity_types.clone();
    Ok(g)
}
