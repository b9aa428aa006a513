//! Margin-ranking translational embeddings used to seed the entity table.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Triplet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranseConfig {
    /// Zero disables pretraining; the entity table keeps its Glorot init.
    pub epochs: usize,
    pub margin: f64,
    pub lr: f64,
}

impl Default for TranseConfig {
    fn default() -> Self {
        TranseConfig {
            epochs: 50,
            margin: 1.0,
            lr: 0.01,
        }
    }
}

fn normalize(row: &mut [f64]) {
    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        row.iter_mut().for_each(|x| *x /= n);
    }
}

fn distance(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    h.iter()
        .zip(r)
        .zip(t)
        .map(|((a, b), c)| (a + b - c).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Unit direction of `h + r - t` (zero when the residual vanishes).
fn residual_direction(h: &[f64], r: &[f64], t: &[f64]) -> Vec<f64> {
    let res: Vec<f64> = h.iter().zip(r).zip(t).map(|((a, b), c)| a + b - c).collect();
    let n = res.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return res;
    }
    res.into_iter().map(|x| x / n).collect()
}

/// Entity embeddings (`num_entities x d`) trained with one corrupted head or
/// tail per triplet per epoch.
pub fn transe_pretrain(kg: &KnowledgeGraph, d: usize, config: &TranseConfig, seed: u64) -> Result<Tensor> {
    Ok(transe_pretrain_traced(kg, d, config, seed)?.0)
}

/// As [`transe_pretrain`], also returning the mean positive-triplet distance
/// after each epoch.
pub fn transe_pretrain_traced(
    kg: &KnowledgeGraph,
    d: usize,
    config: &TranseConfig,
    seed: u64,
) -> Result<(Tensor, Vec<f64>)> {
    if kg.num_triplets() == 0 {
        return Err(Error::invalid("TransE needs at least one triplet"));
    }
    if kg.num_entities() < 2 {
        return Err(Error::invalid("TransE needs at least two entities to corrupt triplets"));
    }
    if d == 0 || config.margin <= 0.0 || config.lr <= 0.0 {
        return Err(Error::invalid("TransE needs d >= 1, margin > 0 and lr > 0"));
    }
    let mut rng = crate::rng::seeded(seed, "transe");
    let limit = 6.0 / (d as f64).sqrt();
    let mut ent = Tensor::uniform(kg.num_entities(), d, limit, &mut rng);
    let mut rel = Tensor::uniform(kg.num_relations(), d, limit, &mut rng);
    for i in 0..ent.rows() {
        normalize(ent.row_mut(i));
    }
    for i in 0..rel.rows() {
        normalize(rel.row_mut(i));
    }

    let n = kg.num_entities() as u32;
    let mut order: Vec<Triplet> = kg.triplets().to_vec();
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &t in &order {
            let corrupt_head = rng.gen_bool(0.5);
            let original = if corrupt_head { t.head } else { t.tail };
            let mut other = EntityId(rng.gen_range(0..n - 1));
            if other >= original {
                other.0 += 1;
            }
            let neg = if corrupt_head {
                Triplet { head: other, ..t }
            } else {
                Triplet { tail: other, ..t }
            };
            sgd_step(&mut ent, &mut rel, t, neg, config);
            for e in [t.head, t.tail, other] {
                normalize(ent.row_mut(e.index()));
            }
        }
        let mean = kg
            .triplets()
            .iter()
            .map(|t| {
                distance(
                    ent.row(t.head.index()),
                    rel.row(t.relation.index()),
                    ent.row(t.tail.index()),
                )
            })
            .sum::<f64>()
            / kg.num_triplets() as f64;
        trace.push(mean);
    }
    Ok((ent, trace))
}

fn sgd_step(ent: &mut Tensor, rel: &mut Tensor, pos: Triplet, neg: Triplet, config: &TranseConfig) {
    let view = |t: Triplet, ent: &Tensor, rel: &Tensor| {
        (
            ent.row(t.head.index()).to_vec(),
            rel.row(t.relation.index()).to_vec(),
            ent.row(t.tail.index()).to_vec(),
        )
    };
    let (ph, pr, pt) = view(pos, ent, rel);
    let (nh, nr, nt) = view(neg, ent, rel);
    let loss = config.margin + distance(&ph, &pr, &pt) - distance(&nh, &nr, &nt);
    if loss <= 0.0 {
        return;
    }
    let gp = residual_direction(&ph, &pr, &pt);
    let gn = residual_direction(&nh, &nr, &nt);
    let lr = config.lr;
    let update = |row: &mut [f64], g: &[f64], sign: f64| {
        for (x, d) in row.iter_mut().zip(g) {
            *x -= sign * lr * d;
        }
    };
    // d/dh = g, d/dt = -g, d/dr = g for each residual; the negative enters
    // the loss with a minus sign.
    update(ent.row_mut(pos.head.index()), &gp, 1.0);
    update(ent.row_mut(pos.tail.index()), &gp, -1.0);
    update(rel.row_mut(pos.relation.index()), &gp, 1.0);
    update(ent.row_mut(neg.head.index()), &gn, -1.0);
    update(ent.row_mut(neg.tail.index()), &gn, 1.0);
    update(rel.row_mut(neg.relation.index()), &gn, -1.0);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kg() -> KnowledgeGraph {
        KnowledgeGraph::from_triplets(2, 1, vec![Triplet::new(0, 0, 1)]).unwrap()
    }

    #[test]
    fn zero_epochs_returns_the_initialisation() {
        let cfg = TranseConfig {
            epochs: 0,
            ..TranseConfig::default()
        };
        let (a, trace) = transe_pretrain_traced(&kg(), 8, &cfg, 3).unwrap();
        assert!(trace.is_empty());
        let mut rng = crate::rng::seeded(3, "transe");
        let mut init = Tensor::uniform(2, 8, 6.0 / 8f64.sqrt(), &mut rng);
        for i in 0..2 {
            normalize(init.row_mut(i));
        }
        assert_eq!(a, init);
    }

    #[test]
    fn single_triplet_distance_falls() {
        let cfg = TranseConfig {
            epochs: 10,
            margin: 1.0,
            lr: 0.01,
        };
        let (_, trace) = transe_pretrain_traced(&kg(), 16, &cfg, 11).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]), "{trace:?}");
        assert!(trace[9] < trace[0]);
    }

    #[test]
    fn seeded() {
        let cfg = TranseConfig {
            epochs: 3,
            ..TranseConfig::default()
        };
        assert_eq!(
            transe_pretrain(&kg(), 4, &cfg, 5).unwrap(),
            transe_pretrain(&kg(), 4, &cfg, 5).unwrap()
        );
    }

    #[test]
    fn rows_are_unit_length() {
        let cfg = TranseConfig {
            epochs: 2,
            ..TranseConfig::default()
        };
        let e = transe_pretrain(&kg(), 4, &cfg, 5).unwrap();
        for i in 0..e.rows() {
            let n: f64 = e.row(i).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
