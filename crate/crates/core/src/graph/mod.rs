//! Typed multi-relational knowledge graph and the drug-pair dataset.
//!
//! The graph stores its triplets sorted by `(head, relation, tail)` so the
//! out-adjacency of each entity is a contiguous range of the triplet list.
//! The in-adjacency is a permutation of triplet indices sorted by tail, also
//! with per-entity ranges. Both indices are built once; the graph is
//! immutable afterwards.

mod io;
mod propagation;
mod sampling;
mod split;
mod subgraph;

pub use io::{load_ddi, load_kg, parse_ddi, parse_kg, write_id_map};
pub use propagation::{build_propagation_graph, ddi_relation_name, GraphSource};
pub use sampling::{sample_negative_tail, DegreeTable, NEGATIVE_RETRY_BUDGET};
pub use split::{split_dataset, SplitRatios};
pub use subgraph::{bfs_distances, extract_enclosing_subgraph, DistanceMap, EnclosingSubgraph, LocalEdge};

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triplet {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triplet {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }

    pub fn reversed(self) -> Self {
        Triplet {
            head: self.tail,
            relation: self.relation,
            tail: self.head,
        }
    }
}

/// Bidirectional name <-> id table. Ids are assigned in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::new();
        for n in names {
            let n = n.into();
            if v.get(&n).is_some() {
                return Err(Error::invalid(format!("duplicate name {n:?} in vocabulary")));
            }
            v.intern(&n)?;
        }
        Ok(v)
    }

    /// Numeric names `"0"`, `"1"`, ...
    pub fn numbered(n: usize) -> Self {
        Vocab::from_names((0..n).map(|i| i.to_string())).expect("distinct names")
    }

    pub fn intern(&mut self, name: &str) -> Result<u32> {
        if let Some(&id) = self.index.get(name) {
            return Ok(id);
        }
        let id = u32::try_from(self.names.len()).map_err(|_| Error::IdOverflow(u32::MAX as u64))?;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    entity_types: Option<Vec<String>>,
    ddi_relations: Range<u32>,
    triplets: Vec<Triplet>,
    out_offsets: Vec<usize>,
    in_offsets: Vec<usize>,
    in_order: Vec<usize>,
}

impl KnowledgeGraph {
    /// Builds the graph, collapsing duplicate triplets.
    pub fn new(entities: Vocab, relations: Vocab, mut triplets: Vec<Triplet>) -> Result<Self> {
        let n = entities.len();
        for t in &triplets {
            check_range("entity", t.head.index(), n)?;
            check_range("entity", t.tail.index(), n)?;
            check_range("relation", t.relation.index(), relations.len())?;
        }
        triplets.sort_unstable();
        triplets.dedup();

        let mut out_offsets = vec![0usize; n + 1];
        let mut in_offsets = vec![0usize; n + 1];
        for t in &triplets {
            out_offsets[t.head.index() + 1] += 1;
            in_offsets[t.tail.index() + 1] += 1;
        }
        for i in 0..n {
            out_offsets[i + 1] += out_offsets[i];
            in_offsets[i + 1] += in_offsets[i];
        }
        let mut in_order: Vec<usize> = (0..triplets.len()).collect();
        in_order.sort_by_key(|&i| (triplets[i].tail, i));

        Ok(KnowledgeGraph {
            entities,
            relations,
            entity_types: None,
            ddi_relations: 0..0,
            triplets,
            out_offsets,
            in_offsets,
            in_order,
        })
    }

    /// Graph over numbered entities and relations, for programmatic use.
    pub fn from_triplets(num_entities: usize, num_relations: usize, triplets: Vec<Triplet>) -> Result<Self> {
        Self::new(Vocab::numbered(num_entities), Vocab::numbered(num_relations), triplets)
    }

    pub fn with_entity_types(mut self, types: Vec<String>) -> Result<Self> {
        if types.len() != self.num_entities() {
            return Err(Error::invalid("entity type table length mismatch"));
        }
        self.entity_types = Some(types);
        Ok(self)
    }

    pub(crate) fn with_ddi_relations(mut self, range: Range<u32>) -> Self {
        self.ddi_relations = range;
        self
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triplets(&self) -> usize {
        self.triplets.len()
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn entity_type(&self, e: EntityId) -> Option<&str> {
        self.entity_types.as_ref().map(|t| t[e.index()].as_str())
    }

    /// Relation ids reserved for interaction labels, `offset..offset + C`.
    pub fn ddi_relations(&self) -> Range<u32> {
        self.ddi_relations.clone()
    }

    pub fn is_ddi_relation(&self, r: RelationId) -> bool {
        self.ddi_relations.contains(&r.0)
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.out_edges(t.head).binary_search(t).is_ok()
    }

    pub fn out_edges(&self, e: EntityId) -> &[Triplet] {
        let i = e.index();
        &self.triplets[self.out_offsets[i]..self.out_offsets[i + 1]]
    }

    pub fn in_edges(&self, e: EntityId) -> impl Iterator<Item = &Triplet> + '_ {
        let i = e.index();
        self.in_order[self.in_offsets[i]..self.in_offsets[i + 1]]
            .iter()
            .map(move |&k| &self.triplets[k])
    }

    /// Neighbors along edges of either direction (with repeats for parallel
    /// edges).
    pub fn undirected_neighbors(&self, e: EntityId) -> impl Iterator<Item = EntityId> + '_ {
        self.out_edges(e)
            .iter()
            .map(|t| t.tail)
            .chain(self.in_edges(e).map(|t| t.head))
    }

    pub fn degree(&self, e: EntityId) -> usize {
        let i = e.index();
        (self.out_offsets[i + 1] - self.out_offsets[i]) + (self.in_offsets[i + 1] - self.in_offsets[i])
    }

    pub fn check_entity(&self, e: EntityId) -> Result<()> {
        check_range("entity", e.index(), self.num_entities())
    }

    /// Same graph with `extra` appended to the entity table (as isolated
    /// nodes) when the vocabulary has grown.
    pub fn with_entities(self, entities: Vocab) -> Result<Self> {
        if entities.len() < self.entities.len() || entities.names()[..self.entities.len()] != *self.entities.names() {
            return Err(Error::invalid("entity table may only be extended"));
        }
        let types = self.entity_types.clone().map(|mut t| {
            for name in &entities.names()[t.len()..] {
                t.push(entity_type_of(name).to_string());
            }
            t
        });
        let mut g =
            KnowledgeGraph::new(entities, self.relations, self.triplets)?.with_ddi_relations(self.ddi_relations);
        g.entity_types = types;
        Ok(g)
    }
}

pub(crate) fn check_range(kind: &'static str, id: usize, count: usize) -> Result<()> {
    if id >= count {
        return Err(Error::OutOfRange { kind, id, count });
    }
    Ok(())
}

/// `Type::name` entity naming (as in Hetionet exports); untyped otherwise.
pub(crate) fn entity_type_of(name: &str) -> &str {
    name.split_once("::").map(|(t, _)| t).unwrap_or("entity")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    MultiClass,
    MultiLabel,
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::MultiClass => "multi-class",
            TaskMode::MultiLabel => "multi-label",
        })
    }
}

impl std::str::FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi-class" => Ok(TaskMode::MultiClass),
            "multi-label" => Ok(TaskMode::MultiLabel),
            other => Err(Error::invalid(format!(
                "unknown task mode {other:?} (expected multi-class or multi-label)"
            ))),
        }
    }
}

/// One drug pair with its interaction class labels (sorted, distinct).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DdiPair {
    pub u: EntityId,
    pub v: EntityId,
    pub labels: Vec<u32>,
}

impl DdiPair {
    pub fn new(u: u32, v: u32, labels: Vec<u32>) -> Self {
        DdiPair {
            u: EntityId(u),
            v: EntityId(v),
            labels,
        }
    }

    /// The single label of a multi-class pair.
    pub fn label(&self) -> u32 {
        self.labels[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdiDataset {
    pub pairs: Vec<DdiPair>,
    pub mode: TaskMode,
    pub num_classes: usize,
}

impl DdiDataset {
    pub fn new(pairs: Vec<DdiPair>, mode: TaskMode, num_classes: usize) -> Result<Self> {
        for (i, p) in pairs.iter().enumerate() {
            if p.labels.is_empty() {
                return Err(Error::invalid(format!("pair {i} has no labels")));
            }
            if mode == TaskMode::MultiClass && p.labels.len() != 1 {
                return Err(Error::TaskModeMismatch(format!(
                    "pair {i} carries {} labels in multi-class mode",
                    p.labels.len()
                )));
            }
            if let Some(&l) = p.labels.iter().find(|&&l| l as usize >= num_classes) {
                return Err(Error::OutOfRange {
                    kind: "label",
                    id: l as usize,
                    count: num_classes,
                });
            }
        }
        Ok(DdiDataset {
            pairs,
            mode,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of (pair, label) edges per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for p in &self.pairs {
            for &l in &p.labels {
                counts[l as usize] += 1;
            }
        }
        counts
    }

    pub(crate) fn subset(&self, idx: &[usize]) -> DdiDataset {
        DdiDataset {
            pairs: idx.iter().map(|&i| self.pairs[i].clone()).collect(),
            mode: self.mode,
            num_classes: self.num_classes,
        }
    }
}
