//! Reasoning pathways: the part of an enclosing subgraph that survives
//! attention pruning, with DOT and JSON export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::graph::{EnclosingSubgraph, EntityId, KnowledgeGraph};
use crate::model::AttentionMask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathwayNode {
    pub id: u32,
    pub name: String,
    pub entity_type: String,
    pub is_center: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathwayEdge {
    pub source: u32,
    pub target: u32,
    pub relation: String,
    /// Attention weight, rounded to 6 decimals.
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathwayGraph {
    pub nodes: Vec<PathwayNode>,
    pub edges: Vec<PathwayEdge>,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Keeps the unpruned edges of `sub` with their weights, then the nodes they
/// touch plus both centers. Nodes keep subgraph order.
///
/// With several masks (one per layer) an edge is kept if any layer keeps it
/// and carries its largest weight.
pub fn summarize_pathway(
    sub: &EnclosingSubgraph,
    masks: &[AttentionMask],
    graph: &KnowledgeGraph,
) -> Result<PathwayGraph> {
    if masks.is_empty() {
        return Err(Error::invalid("no attention mask to summarize"));
    }
    if let Some(m) = masks.iter().find(|m| m.len() != sub.num_edges()) {
        return Err(Error::invalid(format!(
            "mask has {} entries for {} subgraph edges",
            m.len(),
            sub.num_edges()
        )));
    }
    let mut keep_node = vec![false; sub.num_nodes()];
    keep_node[0] = true;
    keep_node[1] = true;
    let mut edges = Vec::new();
    for (i, e) in sub.edges.iter().enumerate() {
        let weight = masks
            .iter()
            .filter(|m| !m.pruned[i])
            .map(|m| m.alpha[i])
            .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |b| b.max(a))));
        let Some(weight) = weight else { continue };
        keep_node[e.head] = true;
        keep_node[e.tail] = true;
        edges.push(PathwayEdge {
            source: sub.nodes[e.head].0,
            target: sub.nodes[e.tail].0,
            relation: graph.relations().name(e.relation.0).to_string(),
            weight: round6(weight),
        });
    }
    let nodes = sub
        .nodes
        .iter()
        .zip(&keep_node)
        .enumerate()
        .filter(|(_, (_, &k))| k)
        .map(|(i, (&e, _))| node_info(graph, e, i < 2))
        .collect();
    Ok(PathwayGraph { nodes, edges })
}

fn node_info(graph: &KnowledgeGraph, e: EntityId, is_center: bool) -> PathwayNode {
    let name = graph.entities().name(e.0).to_string();
    let entity_type = graph
        .entity_type(e)
        .unwrap_or_else(|| crate::graph::entity_type_of(&name))
        .to_string();
    PathwayNode {
        id: e.0,
        name,
        entity_type,
        is_center,
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Position of `weight` on the ramp from just above `gamma` (0) to 1 (1).
fn ramp(weight: f64, gamma: f64) -> f64 {
    let span = 1.0 - gamma;
    if span <= 0.0 {
        return 1.0;
    }
    ((weight - gamma) / span).clamp(0.0, 1.0)
}

/// Graphviz source. Edge darkness and `penwidth` grow linearly with
/// `(α - γ) / (1 - γ)`. With `undirected`, antiparallel edges of the same
/// relation are merged and keep the larger weight.
pub fn pathway_dot(p: &PathwayGraph, gamma: f64, undirected: bool) -> String {
    let (kind, arrow) = if undirected { ("graph", "--") } else { ("digraph", "->") };
    let mut out = format!("{kind} pathway {{\n  node [shape=ellipse, fontsize=10];\n");
    for n in &p.nodes {
        let shape = if n.is_center { "doublecircle" } else { "ellipse" };
        writeln!(
            out,
            "  n{} [label=\"{}\", shape={shape}, tooltip=\"{}\"];",
            n.id,
            dot_escape(&n.name),
            dot_escape(&n.entity_type)
        )
        .expect("string write");
    }

    let mut edges: Vec<(u32, u32, &str, f64)> = p
        .edges
        .iter()
        .map(|e| (e.source, e.target, e.relation.as_str(), e.weight))
        .collect();
    if undirected {
        let mut merged: BTreeMap<(u32, u32, &str), f64> = BTreeMap::new();
        for (s, t, r, w) in edges {
            let key = (s.min(t), s.max(t), r);
            let slot = merged.entry(key).or_insert(w);
            *slot = slot.max(w);
        }
        edges = merged.into_iter().map(|((s, t, r), w)| (s, t, r, w)).collect();
    }
    for (s, t, r, w) in edges {
        let x = ramp(w, gamma);
        let gray = ((1.0 - x) * 200.0).round() as u8;
        writeln!(
            out,
            "  n{s} {arrow} n{t} [label=\"{} ({w:.3})\", penwidth={:.2}, color=\"#{gray:02x}{gray:02x}{gray:02x}\"];",
            dot_escape(r),
            1.0 + 4.0 * x
        )
        .expect("string write");
    }
    out.push_str("}\n");
    out
}

/// JSON document with sorted keys; identical inputs give identical bytes.
pub fn pathway_json(p: &PathwayGraph) -> Result<String> {
    let value = json!({ "nodes": p.nodes, "edges": p.edges });
    Ok(serde_json::to_string_pretty(&value)? + "\n")
}

pub fn export_dot(p: &PathwayGraph, gamma: f64, undirected: bool, path: &Path) -> Result<()> {
    std::fs::write(path, pathway_dot(p, gamma, undirected)).map_err(|e| Error::io(path, e))
}

pub fn export_json(p: &PathwayGraph, path: &Path) -> Result<()> {
    std::fs::write(path, pathway_json(p)?).map_err(|e| Error::io(path, e))
}

pub fn load_json(path: &Path) -> Result<PathwayGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl PathwayGraph {
    pub fn edge_set(&self) -> BTreeSet<(u32, String, u32)> {
        self.edges
            .iter()
            .map(|e| (e.source, e.relation.clone(), e.target))
            .collect()
    }

    pub fn node_ids(&self) -> BTreeSet<u32> {
        self.nodes.iter().map(|n| n.id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{extract_enclosing_subgraph, Triplet, Vocab};

    fn fixture() -> (KnowledgeGraph, EnclosingSubgraph) {
        let entities = Vocab::from_names(["Compound::a", "Compound::b", "Gene::g", "Gene::h"]).unwrap();
        let relations = Vocab::from_names(["binds", "regulates"]).unwrap();
        let kg = KnowledgeGraph::new(
            entities,
            relations,
            vec![
                Triplet::new(0, 0, 2),
                Triplet::new(1, 0, 2),
                Triplet::new(0, 1, 3),
                Triplet::new(3, 1, 1),
            ],
        )
        .unwrap();
        let sub = extract_enclosing_subgraph(&kg, EntityId(0), EntityId(1), 2, &[]).unwrap();
        (kg, sub)
    }

    fn mask(alpha: &[f64]) -> AttentionMask {
        AttentionMask {
            raw: alpha.to_vec(),
            alpha: alpha.to_vec(),
            pruned: alpha.iter().map(|&a| a == 0.0).collect(),
        }
    }

    #[test]
    fn all_pruned_leaves_the_centers() {
        let (kg, sub) = fixture();
        let p = summarize_pathway(&sub, &[mask(&vec![0.0; sub.num_edges()])], &kg).unwrap();
        assert_eq!(p.node_ids(), [0, 1].into());
        assert!(p.edges.is_empty());
        let dot = pathway_dot(&p, 0.0, false);
        assert_eq!(dot.matches("shape=doublecircle").count(), 2);
        assert!(!dot.contains("->"));
    }

    #[test]
    fn one_kept_edge() {
        let (kg, sub) = fixture();
        let mut alpha = vec![0.0; sub.num_edges()];
        let i = sub.global_edges().position(|t| t == Triplet::new(0, 0, 2)).unwrap();
        alpha[i] = 0.4;
        let p = summarize_pathway(&sub, &[mask(&alpha)], &kg).unwrap();
        assert_eq!(p.node_ids(), [0, 1, 2].into());
        assert_eq!(p.edges.len(), 1);
        assert_eq!(p.edges[0].relation, "binds");
        assert_eq!(p.nodes[2].entity_type, "Gene");
    }

    #[test]
    fn nothing_pruned_keeps_everything() {
        let (kg, sub) = fixture();
        let p = summarize_pathway(&sub, &[AttentionMask::ones(sub.num_edges())], &kg).unwrap();
        assert_eq!(p.nodes.len(), sub.num_nodes());
        assert_eq!(p.edges.len(), sub.num_edges());
        assert!(p.edges.iter().all(|e| e.weight == 1.0));
    }

    #[test]
    fn json_round_trip_and_stable_bytes() {
        let (kg, sub) = fixture();
        let alpha: Vec<f64> = (0..sub.num_edges()).map(|i| 0.1234567 * (i + 1) as f64).collect();
        let p = summarize_pathway(&sub, &[mask(&alpha)], &kg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        export_json(&p, &path).unwrap();
        assert_eq!(load_json(&path).unwrap(), p);
        assert_eq!(pathway_json(&p).unwrap(), std::fs::read_to_string(&path).unwrap());
        let text = pathway_json(&p).unwrap();
        assert!(text.find("\"edges\"").unwrap() < text.find("\"nodes\"").unwrap());
        assert!(text.contains("0.123457"));
    }

    #[test]
    fn ramp_endpoints() {
        let p = PathwayGraph {
            nodes: vec![],
            edges: vec![PathwayEdge {
                source: 0,
                target: 1,
                relation: "r".into(),
                weight: 0.999999,
            }],
        };
        let dot = pathway_dot(&p, 0.0, false);
        assert!(dot.contains("penwidth=5.00"), "{dot}");
        assert!(dot.contains("#000000"), "{dot}");
        assert_eq!(ramp(0.0, 0.0), 0.0);
        assert_eq!(ramp(0.5, 0.0), 0.5);
    }

    #[test]
    fn undirected_merges_antiparallel_edges() {
        let edge = |s, t, w| PathwayEdge {
            source: s,
            target: t,
            relation: "r".into(),
            weight: w,
        };
        let p = PathwayGraph {
            nodes: vec![],
            edges: vec![edge(0, 1, 0.2), edge(1, 0, 0.8)],
        };
        let dot = pathway_dot(&p, 0.0, true);
        assert_eq!(dot.matches(" -- ").count(), 1);
        assert!(dot.contains("(0.800)"));
        assert_eq!(pathway_dot(&p, 0.0, false).matches(" -> ").count(), 2);
    }
}
