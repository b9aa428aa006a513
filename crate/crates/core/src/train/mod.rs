//! Losses, the training loop, inference and evaluation.

mod fit;
pub mod metrics;
mod predict;
mod report;

pub use fit::{fit, init_model, EpochRecord, FitInputs, FitOutcome};
pub use predict::{predict, NegativeRecord, PredictionRecord, Predictions};
pub(crate) use predict::{sigmoid, softmax};
pub use report::{evaluate, read_history, write_history, ApVariant, MetricsReport, RelationRow};

use std::collections::HashSet;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::graph::{
    extract_enclosing_subgraph, sample_negative_tail, DdiPair, DegreeTable, EnclosingSubgraph, EntityId,
    KnowledgeGraph, RelationId, TaskMode, Triplet,
};
use crate::model::{forward_on_tape, ExampleGrads, FingerprintTable, Mode, ModelConfig, ModelParams};
use crate::tensor::{AdamConfig, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub task_mode: TaskMode,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            lr: 5e-3,
            weight_decay: 1e-5,
            clip_norm: 10.0,
            task_mode: TaskMode::MultiClass,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return fail("train.batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            return fail("train.lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("train.weight_decay must be non-negative");
        }
        if !(self.clip_norm > 0.0) {
            return fail("train.clip_norm must be positive");
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `-log softmax(logits)[label]` with max subtraction.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::OutOfRange {
            kind: "label",
            id: label,
            count: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// `-log sigmoid(pos[r]) - log(1 - sigmoid(neg[r]))` in softplus form.
pub fn bce_with_negative(logits_pos: &[f64], logits_neg: &[f64], r: usize) -> Result<f64> {
    if r >= logits_pos.len() || r >= logits_neg.len() {
        return Err(Error::OutOfRange {
            kind: "relation",
            id: r,
            count: logits_pos.len().min(logits_neg.len()),
        });
    }
    Ok(softplus(-logits_pos[r]) + softplus(logits_neg[r]))
}

/// Sum of per-edge losses.
pub fn total_loss(edge_losses: &[f64]) -> Result<f64> {
    if edge_losses.is_empty() {
        return Err(Error::invalid("loss over an empty batch"));
    }
    Ok(edge_losses.iter().sum())
}

/// A corrupted counterpart `(u, r, tail)` of a positive interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct Negative {
    pub relation: u32,
    pub tail: EntityId,
    pub subgraph: EnclosingSubgraph,
}

/// A pair with its extracted subgraph and, in multi-label mode, one
/// negative per label (aligned with `pair.labels`).
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub pair: DdiPair,
    pub subgraph: EnclosingSubgraph,
    pub negatives: Vec<Negative>,
}

impl Example {
    /// Loss terms this example contributes: one per label.
    pub fn num_edges(&self) -> usize {
        self.pair.labels.len()
    }
}

fn ddi_relation(graph: &KnowledgeGraph, class: u32) -> Result<RelationId> {
    let range = graph.ddi_relations();
    if class >= range.end - range.start {
        return Err(Error::OutOfRange {
            kind: "interaction class",
            id: class as usize,
            count: (range.end - range.start) as usize,
        });
    }
    Ok(RelationId(range.start + class))
}

/// The interaction triplets of `pair` in the propagation graph.
pub fn target_triplets(graph: &KnowledgeGraph, pair: &DdiPair) -> Result<Vec<Triplet>> {
    pair.labels
        .iter()
        .map(|&c| {
            Ok(Triplet {
                head: pair.u,
                relation: ddi_relation(graph, c)?,
                tail: pair.v,
            })
        })
        .collect()
}

/// Degree-biased negative tails over the interaction graph.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    degrees: DegreeTable,
    forbidden: HashSet<Triplet>,
}

impl NegativeSampler {
    /// Degrees count interaction-range triplets of `graph`; every triplet of
    /// `known` (both directions) is excluded as a negative.
    pub fn new<'a>(graph: &KnowledgeGraph, known: impl IntoIterator<Item = &'a DdiPair>) -> Result<Self> {
        let mut degree = vec![0usize; graph.num_entities()];
        let mut forbidden = HashSet::new();
        for t in graph.triplets() {
            if graph.is_ddi_relation(t.relation) {
                degree[t.head.index()] += 1;
                degree[t.tail.index()] += 1;
                forbidden.insert(*t);
                forbidden.insert(t.reversed());
            }
        }
        for p in known {
            for t in target_triplets(graph, p)? {
                forbidden.insert(t);
                forbidden.insert(t.reversed());
            }
        }
        Ok(NegativeSampler {
            degrees: DegreeTable::from_degrees(degree),
            forbidden,
        })
    }

    pub fn sample(&self, graph: &KnowledgeGraph, pair: &DdiPair, class: u32, rng: &mut ChaCha8Rng) -> Result<EntityId> {
        let positive = Triplet {
            head: pair.u,
            relation: ddi_relation(graph, class)?,
            tail: pair.v,
        };
        sample_negative_tail(&self.degrees, positive, &self.forbidden, rng)
    }
}

/// Independent stream for `(seed, purpose, epoch, index)`.
pub(crate) fn example_rng(seed: u64, purpose: &str, epoch: u64, index: usize) -> ChaCha8Rng {
    let mut rng = crate::rng::seeded(seed, purpose);
    rng.set_stream((epoch << 40) ^ index as u64);
    rng
}

fn negatives_for(
    graph: &KnowledgeGraph,
    pair: &DdiPair,
    k: u32,
    sampler: &NegativeSampler,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Negative>> {
    pair.labels
        .iter()
        .map(|&r| {
            let tail = sampler.sample(graph, pair, r, rng)?;
            let subgraph = extract_enclosing_subgraph(graph, pair.u, tail, k, &[])?;
            Ok(Negative {
                relation: r,
                tail,
                subgraph,
            })
        })
        .collect()
}

/// Builds one example: the target's own interaction edges are left out of
/// its subgraph. Negatives are drawn when a sampler is given.
pub fn prepare_example(
    graph: &KnowledgeGraph,
    pair: &DdiPair,
    k: u32,
    sampler: Option<&NegativeSampler>,
    rng: &mut ChaCha8Rng,
) -> Result<Example> {
    let exclude = target_triplets(graph, pair)?;
    let subgraph = extract_enclosing_subgraph(graph, pair.u, pair.v, k, &exclude)?;
    let negatives = match sampler {
        Some(s) => negatives_for(graph, pair, k, s, rng)?,
        None => Vec::new(),
    };
    Ok(Example {
        pair: pair.clone(),
        subgraph,
        negatives,
    })
}

/// Prepares every pair in parallel; negatives use stream `(seed, stream, i)`.
pub fn prepare_examples(
    graph: &KnowledgeGraph,
    pairs: &[DdiPair],
    k: u32,
    sampler: Option<&NegativeSampler>,
    seed: u64,
    stream: u64,
) -> Result<Vec<Example>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = example_rng(seed, "negatives", stream, i);
            prepare_example(graph, p, k, sampler, &mut rng)
        })
        .collect()
}

/// Read-only inputs shared by every forward pass.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub config: &'a ModelConfig,
    pub mode: TaskMode,
    pub fingerprints: Option<&'a FingerprintTable>,
}

struct Recorded {
    loss: Var,
    entity: Vec<(Vec<EntityId>, Var)>,
}

/// Records the loss of one example on `tape`. `rng` switches dropout on.
fn record_loss(
    tape: &mut Tape,
    params: &ModelParams,
    shared: &crate::model::SharedVars,
    ex: &Example,
    ctx: Context<'_>,
    trainable: bool,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Recorded> {
    let mut entity = Vec::new();
    let mut run = |tape: &mut Tape, sub: &EnclosingSubgraph, rng: &mut Option<&mut ChaCha8Rng>| -> Result<Var> {
        let rows = params.bind_entities(tape, &sub.nodes, trainable)?;
        entity.push((sub.nodes.clone(), rows));
        let mode = match rng {
            Some(r) => Mode::Train(&mut **r),
            None => Mode::Eval,
        };
        Ok(forward_on_tape(tape, shared, rows, sub, ctx.config, ctx.fingerprints, mode)?.logits)
    };
    let logits = run(tape, &ex.subgraph, &mut rng)?;
    let loss = match ctx.mode {
        TaskMode::MultiClass => tape.cross_entropy(logits, ex.pair.label() as usize)?,
        TaskMode::MultiLabel => {
            if ex.negatives.len() != ex.pair.labels.len() {
                return Err(Error::invalid("multi-label example needs one negative per label"));
            }
            let mut total: Option<Var> = None;
            for neg in &ex.negatives {
                let neg_logits = run(tape, &neg.subgraph, &mut rng)?;
                let r = neg.relation as usize;
                let p = tape.pick(logits, 0, r)?;
                let p = tape.scale(p, -1.0)?;
                let p = tape.softplus(p)?;
                let n = tape.pick(neg_logits, 0, r)?;
                let n = tape.softplus(n)?;
                let term = tape.add(p, n)?;
                total = Some(match total {
                    Some(t) => tape.add(t, term)?,
                    None => term,
                });
            }
            total.ok_or_else(|| Error::invalid("example without labels"))?
        }
    };
    Ok(Recorded { loss, entity })
}

/// Loss and gradients of one example.
pub fn example_grads(
    params: &ModelParams,
    ex: &Example,
    ctx: Context<'_>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ExampleGrads> {
    let mut tape = Tape::new();
    let shared = params.bind_shared(&mut tape, true);
    let rec = record_loss(&mut tape, params, &shared, ex, ctx, true, rng)?;
    let loss = tape.value(rec.loss).get(0, 0);
    let mut grads = tape.backward(rec.loss)?;
    Ok(ExampleGrads {
        entity: rec
            .entity
            .into_iter()
            .map(|(nodes, v)| (nodes, grads.take(v)))
            .collect(),
        shared: shared.vars().into_iter().map(|v| grads.take(v)).collect(),
        loss,
    })
}

/// Loss of one example with dropout off.
pub fn example_loss(params: &ModelParams, ex: &Example, ctx: Context<'_>) -> Result<f64> {
    let mut tape = Tape::new();
    let shared = params.bind_shared(&mut tape, false);
    let rec = record_loss(&mut tape, params, &shared, ex, ctx, false, None)?;
    Ok(tape.value(rec.loss).get(0, 0))
}

/// Mean per-edge loss over `examples`, dropout off. Summation follows
/// example order, so the value does not depend on the thread count.
pub fn mean_loss(params: &ModelParams, examples: &[Example], ctx: Context<'_>) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("loss over an empty example set"));
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| example_loss(params, ex, ctx))
        .collect::<Result<_>>()
        .stage("evaluation loss")?;
    let edges: usize = examples.iter().map(Example::num_edges).sum();
    Ok(losses.iter().sum::<f64>() / edges as f64)
}
