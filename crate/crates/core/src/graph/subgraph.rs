//! Capped BFS and enclosing-subgraph extraction around a drug pair.

use std::collections::HashMap;

use super::{EntityId, KnowledgeGraph, RelationId, Triplet};
use crate::error::{Error, Result};

/// Hop distances from one source, only for nodes within the cap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceMap {
    source: EntityId,
    cap: u32,
    dist: HashMap<EntityId, u32>,
}

impl DistanceMap {
    pub fn get(&self, e: EntityId) -> Option<u32> {
        self.dist.get(&e).copied()
    }

    pub fn source(&self) -> EntityId {
        self.source
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, u32)> + '_ {
        self.dist.iter().map(|(&e, &d)| (e, d))
    }
}

/// Breadth-first distances treating every triplet as an undirected edge.
/// Nodes farther than `cap` hops are absent from the map.
pub fn bfs_distances(kg: &KnowledgeGraph, source: EntityId, cap: u32) -> Result<DistanceMap> {
    kg.check_entity(source)?;
    if cap < 1 {
        return Err(Error::invalid("bfs cap must be at least 1"));
    }
    let mut dist = HashMap::new();
    dist.insert(source, 0);
    let mut frontier = vec![source];
    for depth in 1..=cap {
        let mut next = Vec::new();
        for &node in &frontier {
            for nb in kg.undirected_neighbors(node) {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(nb) {
                    slot.insert(depth);
                    next.push(nb);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(DistanceMap { source, cap, dist })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalEdge {
    pub head: usize,
    pub relation: RelationId,
    pub tail: usize,
}

/// Induced subgraph on `(N_k(u) ∩ N_k(v)) ∪ {u, v}`.
///
/// Local index 0 is `u`, 1 is `v`, the rest follow in ascending global id.
/// Distances are clamped to `k`; unreachable counts as `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnclosingSubgraph {
    pub k: u32,
    pub nodes: Vec<EntityId>,
    pub dist_u: Vec<u32>,
    pub dist_v: Vec<u32>,
    pub edges: Vec<LocalEdge>,
}

impl EnclosingSubgraph {
    pub fn center(&self) -> (EntityId, EntityId) {
        (self.nodes[0], self.nodes[1])
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as global triplets, in local edge order.
    pub fn global_edges(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.edges.iter().map(|e| Triplet {
            head: self.nodes[e.head],
            relation: e.relation,
            tail: self.nodes[e.tail],
        })
    }

    /// Reorders the non-center nodes: new local slot `2 + i` holds the node
    /// that was at `2 + order[i]`. Edges and distances follow their nodes.
    pub fn permute_non_centers(&self, order: &[usize]) -> Result<Self> {
        let n = self.nodes.len();
        if order.len() + 2 != n {
            return Err(Error::invalid("permutation length mismatch"));
        }
        let mut old_to_new = vec![usize::MAX; n];
        old_to_new[0] = 0;
        old_to_new[1] = 1;
        for (i, &o) in order.iter().enumerate() {
            if o + 2 >= n || old_to_new[o + 2] != usize::MAX {
                return Err(Error::invalid("not a permutation"));
            }
            old_to_new[o + 2] = i + 2;
        }
        let mut out = self.clone();
        for old in 0..n {
            let new = old_to_new[old];
            out.nodes[new] = self.nodes[old];
            out.dist_u[new] = self.dist_u[old];
            out.dist_v[new] = self.dist_v[old];
        }
        for e in &mut out.edges {
            e.head = old_to_new[e.head];
            e.tail = old_to_new[e.tail];
        }
        Ok(out)
    }

    /// Every node and triplet of `kg`, centered on `(u, v)`, as used by
    /// full-graph propagation. Distances are clamped to `k` as usual.
    pub fn whole_graph(kg: &KnowledgeGraph, u: EntityId, v: EntityId, k: u32) -> Result<Self> {
        if u == v {
            return Err(Error::invalid("centers must differ"));
        }
        let du = bfs_distances(kg, u, k)?;
        let dv = bfs_distances(kg, v, k)?;
        let mut nodes = vec![u, v];
        nodes.extend(
            (0..kg.num_entities() as u32)
                .map(EntityId)
                .filter(|&e| e != u && e != v),
        );
        Ok(assemble(kg, nodes, &du, &dv, k, &[]))
    }
}

/// Extracts the enclosing subgraph of `(u, v)` with hop budget `k`, leaving
/// out every triplet listed in `exclude` in both directions.
pub fn extract_enclosing_subgraph(
    kg: &KnowledgeGraph,
    u: EntityId,
    v: EntityId,
    k: u32,
    exclude: &[Triplet],
) -> Result<EnclosingSubgraph> {
    if u == v {
        return Err(Error::invalid(format!(
            "enclosing subgraph needs distinct centers, got {u} twice"
        )));
    }
    let du = bfs_distances(kg, u, k)?;
    let dv = bfs_distances(kg, v, k)?;

    let mut rest: Vec<EntityId> = du
        .iter()
        .map(|(e, _)| e)
        .filter(|&e| e != u && e != v && dv.get(e).is_some())
        .collect();
    rest.sort_unstable();
    let mut nodes = Vec::with_capacity(rest.len() + 2);
    nodes.push(u);
    nodes.push(v);
    nodes.extend(rest);
    Ok(assemble(kg, nodes, &du, &dv, k, exclude))
}

fn assemble(
    kg: &KnowledgeGraph,
    nodes: Vec<EntityId>,
    du: &DistanceMap,
    dv: &DistanceMap,
    k: u32,
    exclude: &[Triplet],
) -> EnclosingSubgraph {
    let local: HashMap<EntityId, usize> = nodes.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let clamp = |d: Option<u32>| d.map_or(k, |d| d.min(k));
    let dist_u = nodes.iter().map(|&e| clamp(du.get(e))).collect();
    let dist_v = nodes.iter().map(|&e| clamp(dv.get(e))).collect();

    let excluded = |t: &Triplet| exclude.iter().any(|x| x == t || x.reversed() == *t);
    let mut edges = Vec::new();
    for (li, &e) in nodes.iter().enumerate() {
        for t in kg.out_edges(e) {
            if let Some(&lt) = local.get(&t.tail) {
                if !excluded(t) {
                    edges.push(LocalEdge {
                        head: li,
                        relation: t.relation,
                        tail: lt,
                    });
                }
            }
        }
    }
    EnclosingSubgraph {
        k,
        nodes,
        dist_u,
        dist_v,
        edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn undirected(n: usize, pairs: &[(u32, u32)]) -> KnowledgeGraph {
        let t = pairs
            .iter()
            .flat_map(|&(a, b)| [Triplet::new(a, 0, b), Triplet::new(b, 0, a)])
            .collect();
        KnowledgeGraph::from_triplets(n, 1, t).unwrap()
    }

    #[test]
    fn path_graph_distances() {
        // Oracle for 0-1-2-3 from 0: BFS by hand on the edge list.
        let g = undirected(4, &[(0, 1), (1, 2), (2, 3)]);
        let d = bfs_distances(&g, EntityId(0), 2).unwrap();
        assert_eq!(d.get(EntityId(0)), Some(0));
        assert_eq!(d.get(EntityId(1)), Some(1));
        assert_eq!(d.get(EntityId(2)), Some(2));
        assert_eq!(d.get(EntityId(3)), None);
    }

    #[test]
    fn direction_is_ignored() {
        let g = KnowledgeGraph::from_triplets(3, 1, vec![Triplet::new(1, 0, 0), Triplet::new(1, 0, 2)]).unwrap();
        let d = bfs_distances(&g, EntityId(0), 3).unwrap();
        assert_eq!(d.get(EntityId(2)), Some(2));
    }

    #[test]
    fn isolated_source_and_star() {
        let g = undirected(5, &[(0, 1), (0, 2), (0, 3)]);
        let d = bfs_distances(&g, EntityId(4), 3).unwrap();
        assert_eq!(d.len(), 1);
        let d = bfs_distances(&g, EntityId(0), 1).unwrap();
        for leaf in 1..4 {
            assert_eq!(d.get(EntityId(leaf)), Some(1));
        }
        assert!(bfs_distances(&g, EntityId(9), 1).is_err());
        assert!(bfs_distances(&g, EntityId(0), 0).is_err());
    }

    #[test]
    fn small_intersection_example() {
        // Edges {0-2, 2-1, 0-3, 3-4}, u=0, v=1, k=1.
        let g = undirected(5, &[(0, 2), (2, 1), (0, 3), (3, 4)]);
        let s = extract_enclosing_subgraph(&g, EntityId(0), EntityId(1), 1, &[]).unwrap();
        assert_eq!(s.nodes, vec![EntityId(0), EntityId(1), EntityId(2)]);
        assert_eq!(s.dist_u, vec![0, 1, 1]);
        assert_eq!(s.dist_v, vec![1, 0, 1]);
        let mut e: Vec<_> = s.global_edges().map(|t| (t.head.0, t.tail.0)).collect();
        e.sort();
        assert_eq!(e, vec![(0, 2), (1, 2), (2, 0), (2, 1)]);
    }

    #[test]
    fn disconnected_centers() {
        let g = undirected(4, &[(0, 2), (1, 3)]);
        for k in 1..4 {
            let s = extract_enclosing_subgraph(&g, EntityId(0), EntityId(1), k, &[]).unwrap();
            assert_eq!(s.nodes, vec![EntityId(0), EntityId(1)]);
            assert!(s.edges.is_empty());
            assert_eq!(s.dist_u, vec![0, k]);
            assert_eq!(s.dist_v, vec![k, 0]);
        }
    }

    #[test]
    fn exclusion_removes_only_target() {
        let g = KnowledgeGraph::from_triplets(
            3,
            2,
            vec![
                Triplet::new(0, 1, 1),
                Triplet::new(1, 1, 0),
                Triplet::new(0, 0, 2),
                Triplet::new(2, 0, 1),
            ],
        )
        .unwrap();
        let full = extract_enclosing_subgraph(&g, EntityId(0), EntityId(1), 2, &[]).unwrap();
        let cut = extract_enclosing_subgraph(&g, EntityId(0), EntityId(1), 2, &[Triplet::new(0, 1, 1)]).unwrap();
        assert_eq!(full.num_edges(), 4);
        assert_eq!(cut.num_edges(), 2);
        assert_eq!(full.nodes, cut.nodes);
        assert_eq!(full.dist_u, cut.dist_u);
        assert!(cut.global_edges().all(|t| t.relation.0 == 0));
    }

    #[test]
    fn equal_centers_rejected() {
        let g = undirected(2, &[(0, 1)]);
        assert!(extract_enclosing_subgraph(&g, EntityId(0), EntityId(0), 1, &[]).is_err());
    }

    #[test]
    fn permutation_moves_edges_with_nodes() {
        let g = undirected(5, &[(0, 2), (2, 1), (0, 3), (3, 1), (2, 3)]);
        let s = extract_enclosing_subgraph(&g, EntityId(0), EntityId(1), 1, &[]).unwrap();
        let p = s.permute_non_centers(&[1, 0]).unwrap();
        assert_eq!(p.nodes[2], s.nodes[3]);
        let mut a: Vec<_> = s.global_edges().collect();
        let mut b: Vec<_> = p.global_edges().collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
