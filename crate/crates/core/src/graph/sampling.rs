//! Degree-biased negative sampling, `P(w) ∝ degree(w)^{3/4}`.

use std::collections::HashSet;

use rand::Rng;

use super::{EntityId, KnowledgeGraph, Triplet};
use crate::error::{Error, Result};

/// Rejections tolerated before falling back to uniform sampling over the
/// admissible entities.
pub const NEGATIVE_RETRY_BUDGET: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct DegreeTable {
    degree: Vec<usize>,
    cumulative: Vec<f64>,
}

impl DegreeTable {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        let degree = (0..kg.num_entities() as u32).map(|e| kg.degree(EntityId(e))).collect();
        Self::from_degrees(degree)
    }

    pub fn from_degrees(degree: Vec<usize>) -> Self {
        let mut acc = 0.0;
        let cumulative = degree
            .iter()
            .map(|&d| {
                acc += (d as f64).powf(0.75);
                acc
            })
            .collect();
        DegreeTable { degree, cumulative }
    }

    pub fn degree(&self, e: EntityId) -> usize {
        self.degree[e.index()]
    }

    pub fn len(&self) -> usize {
        self.degree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degree.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn cumulative_weight(&self) -> &[f64] {
        &self.cumulative
    }

    /// One draw from the global `d^{3/4}` distribution; `None` when every
    /// entity has degree zero.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<EntityId> {
        let total = self.total_weight();
        if total <= 0.0 {
            return None;
        }
        let x = rng.gen::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= x);
        Some(EntityId(i.min(self.cumulative.len() - 1) as u32))
    }
}

/// Replaces the tail of `positive` with an entity `w` such that `w` is
/// neither endpoint and `(u, r, w)` is not in `forbidden`.
pub fn sample_negative_tail<R: Rng + ?Sized>(
    degrees: &DegreeTable,
    positive: Triplet,
    forbidden: &HashSet<Triplet>,
    rng: &mut R,
) -> Result<EntityId> {
    let admissible = |w: EntityId| {
        w != positive.tail
            && w != positive.head
            && !forbidden.contains(&Triplet {
                head: positive.head,
                relation: positive.relation,
                tail: w,
            })
    };
    for _ in 0..NEGATIVE_RETRY_BUDGET {
        match degrees.draw(rng) {
            Some(w) if admissible(w) => return Ok(w),
            Some(_) => {}
            None => break,
        }
    }
    let candidates: Vec<EntityId> = (0..degrees.len() as u32)
        .map(EntityId)
        .filter(|&w| admissible(w))
        .collect();
    if candidates.is_empty() {
        return Err(Error::invalid(format!(
            "no admissible negative tail for ({}, {}, {})",
            positive.head, positive.relation.0, positive.tail
        )));
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}
