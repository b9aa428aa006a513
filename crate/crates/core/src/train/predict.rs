use rayon::prelude::*;

use super::metrics::argmax;
use super::{Context, Example};
use crate::error::{Error, Result, StageExt};
use crate::graph::{EntityId, TaskMode};
use crate::model::{forward, Mode, ModelParams};

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub u: EntityId,
    pub v: EntityId,
    pub labels: Vec<u32>,
    pub logits: Vec<f64>,
    /// Softmax probabilities (multi-class) or per-relation sigmoids
    /// (multi-label).
    pub scores: Vec<f64>,
    /// Edges surviving pruning in the first attention mask (all edges when
    /// summarization is off).
    pub kept_edges: usize,
}

impl PredictionRecord {
    /// Highest-scoring class; the lowest id wins ties.
    pub fn predicted(&self) -> usize {
        argmax(&self.logits)
    }
}

/// Score of the negative counterpart `(u, relation, tail)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeRecord {
    pub u: EntityId,
    pub tail: EntityId,
    pub relation: u32,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub mode: TaskMode,
    pub num_classes: usize,
    pub records: Vec<PredictionRecord>,
    pub negatives: Vec<NegativeRecord>,
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scores every example (and its negatives) with dropout off.
pub fn predict(params: &ModelParams, examples: &[Example], ctx: Context<'_>) -> Result<Predictions> {
    let per_example: Vec<(PredictionRecord, Vec<NegativeRecord>)> = examples
        .par_iter()
        .map(|ex| -> Result<_> {
            let (logits, masks) = forward(params, ctx.config, &ex.subgraph, ctx.fingerprints, Mode::Eval)?;
            let kept_edges = masks.first().map_or(ex.subgraph.num_edges(), |m| m.num_kept());
            let logits = logits.into_data();
            let scores = match ctx.mode {
                TaskMode::MultiClass => softmax(&logits),
                TaskMode::MultiLabel => logits.iter().map(|&x| sigmoid(x)).collect(),
            };
            let mut negatives = Vec::new();
            if ctx.mode == TaskMode::MultiLabel {
                if ex.negatives.len() != ex.pair.labels.len() {
                    return Err(Error::invalid("multi-label evaluation needs one negative per label"));
                }
                for neg in &ex.negatives {
                    let (nl, _) = forward(params, ctx.config, &neg.subgraph, ctx.fingerprints, Mode::Eval)?;
                    negatives.push(NegativeRecord {
                        u: ex.pair.u,
                        tail: neg.tail,
                        relation: neg.relation,
                        score: sigmoid(nl.get(0, neg.relation as usize)),
                    });
                }
            }
            let record = PredictionRecord {
                u: ex.pair.u,
                v: ex.pair.v,
                labels: ex.pair.labels.clone(),
                logits,
                scores,
                kept_edges,
            };
            Ok((record, negatives))
        })
        .collect::<Result<_>>()
        .stage("prediction")?;

    let mut records = Vec::with_capacity(per_example.len());
    let mut negatives = Vec::new();
    for (r, n) in per_example {
        records.push(r);
        negatives.extend(n);
    }
    Ok(Predictions {
        mode: ctx.mode,
        num_classes: params.num_classes(),
        records,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicted_class_and_ties() {
        let rec = |logits: Vec<f64>| PredictionRecord {
            u: EntityId(0),
            v: EntityId(1),
            labels: vec![0],
            scores: softmax(&logits),
            logits,
            kept_edges: 0,
        };
        assert_eq!(rec(vec![0.1, 0.9, 0.3]).predicted(), 1);
        assert_eq!(rec(vec![0.0, 0.0, 4.0, 1.0, 1.0, 4.0]).predicted(), 2);
    }

    #[test]
    fn probabilities_sum_to_one_and_sigmoid_of_zero() {
        let p = softmax(&[3.0, -1.0, 700.0, 0.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
