use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{example_grads, example_rng, mean_loss, prepare_examples, Context, Example, NegativeSampler, TrainConfig};
use crate::error::{Error, Result, StageExt};
use crate::graph::{DdiDataset, KnowledgeGraph, TaskMode};
use crate::model::{transe_pretrain, FingerprintTable, ModelConfig, ModelParams};
use crate::tensor::{clip_global_norm, AdamState, Tensor};

/// Stream ids for the negatives drawn once for validation.
const DEV_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-edge training loss (dropout on).
    pub train_loss: f64,
    /// Mean per-edge validation loss; `None` without a dev split.
    pub val_loss: Option<f64>,
}

pub struct FitInputs<'a> {
    /// Propagation graph built from the training split.
    pub graph: &'a KnowledgeGraph,
    pub train: &'a DdiDataset,
    pub dev: &'a DdiDataset,
    pub fingerprints: Option<&'a FingerprintTable>,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams,
    /// Optimizer state at that same epoch.
    pub optimizer: AdamState,
    pub history: Vec<EpochRecord>,
    /// 1-based; 0 when no epoch ran.
    pub best_epoch: usize,
    pub config: ModelConfig,
}

/// Fresh parameters, with the entity table replaced by TransE vectors when
/// `config.transe.epochs > 0`.
pub fn init_model(graph: &KnowledgeGraph, config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::init(config, graph.num_entities(), graph.num_relations(), seed)?;
    if config.transe.epochs > 0 {
        params.entity_embed = transe_pretrain(graph, config.dim, &config.transe, seed).stage("TransE pretraining")?;
    }
    Ok(params)
}

fn flatten(grads: ModelParams) -> Vec<Tensor> {
    let mut g = grads;
    g.tensors_mut()
        .into_iter()
        .map(|t| std::mem::replace(t, Tensor::zeros(0, 0)))
        .collect()
}

/// Trains with Adam on summed per-edge losses and keeps the snapshot with
/// the lowest validation loss (earliest on ties). Without a dev split the
/// last epoch is kept.
pub fn fit(inputs: FitInputs<'_>, model_config: &ModelConfig, train_config: &TrainConfig) -> Result<FitOutcome> {
    train_config.validate()?;
    let FitInputs {
        graph,
        train,
        dev,
        fingerprints,
    } = inputs;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if train.mode != train_config.task_mode {
        return Err(Error::TaskModeMismatch(format!(
            "dataset is {} but training is configured for {}",
            train.mode, train_config.task_mode
        )));
    }
    let mut config = model_config.clone();
    if config.num_classes == 0 {
        config.num_classes = train.num_classes;
    } else if config.num_classes != train.num_classes {
        return Err(Error::Config(format!(
            "model.num_classes = {} but the dataset has {} classes",
            config.num_classes, train.num_classes
        )));
    }
    config.clamp_bases(graph.num_relations());
    if graph.ddi_relations().len() != config.num_classes {
        return Err(Error::invalid(
            "propagation graph interaction relations do not match the class count",
        ));
    }
    let seed = train_config.seed;
    let ctx = Context {
        config: &config,
        mode: train.mode,
        fingerprints,
    };

    let mut params = init_model(graph, &config, seed)?;
    let mut adam = AdamState::new(&params.tensors(), train_config.adam);

    let sampler = match train.mode {
        TaskMode::MultiLabel => Some(NegativeSampler::new(graph, train.pairs.iter().chain(&dev.pairs))?),
        TaskMode::MultiClass => None,
    };
    // Multi-class subgraphs never change, so extract them once.
    let fixed_train = match train.mode {
        TaskMode::MultiClass => {
            Some(prepare_examples(graph, &train.pairs, config.k, None, seed, 0).stage("train subgraphs")?)
        }
        TaskMode::MultiLabel => None,
    };
    let dev_examples: Vec<Example> =
        prepare_examples(graph, &dev.pairs, config.k, sampler.as_ref(), seed, DEV_STREAM).stage("dev subgraphs")?;
    if dev_examples.is_empty() {
        log::warn!("dev split is empty; the final epoch will be kept");
    }

    let mut history = Vec::with_capacity(train_config.epochs);
    let mut best: Option<(f64, ModelParams, AdamState, usize)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=train_config.epochs {
        let epoch_stage = format!("epoch {epoch}");
        let mut shuffle_rng = example_rng(seed, "shuffle", epoch as u64, 0);
        order.shuffle(&mut shuffle_rng);

        let fresh;
        let examples: &[Example] = match &fixed_train {
            Some(e) => e,
            None => {
                fresh = prepare_examples(graph, &train.pairs, config.k, sampler.as_ref(), seed, epoch as u64)
                    .stage(&epoch_stage)?;
                &fresh
            }
        };

        let mut loss_sum = 0.0;
        let mut edge_count = 0usize;
        for (b, batch) in order.chunks(train_config.batch_size).enumerate() {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = example_rng(seed, "dropout", epoch as u64, i);
                    example_grads(&params, &examples[i], ctx, Some(&mut rng))
                })
                .collect::<Result<_>>()
                .stage(&format!("{epoch_stage}, batch {b}"))?;

            let mut grads = params.zeros_like();
            for (g, &i) in results.iter().zip(batch) {
                grads.accumulate(g)?;
                loss_sum += g.loss;
                edge_count += examples[i].num_edges();
            }
            let mut flat = flatten(grads);
            clip_global_norm(&mut flat, train_config.clip_norm);
            adam.step(
                &mut params.tensors_mut(),
                &flat,
                train_config.lr,
                train_config.weight_decay,
            )?;
        }

        let train_loss = loss_sum / edge_count as f64;
        let val_loss = if dev_examples.is_empty() {
            None
        } else {
            Some(mean_loss(&params, &dev_examples, ctx).stage(&epoch_stage)?)
        };
        log::info!(
            "epoch {epoch}/{}: train loss {train_loss:.6}{}",
            train_config.epochs,
            val_loss.map_or(String::new(), |v| format!(", val loss {v:.6}"))
        );
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        let better = match (val_loss, &best) {
            (Some(v), Some((s, ..))) => v < *s,
            _ => true,
        };
        if better {
            best = Some((val_loss.unwrap_or(f64::INFINITY), params.clone(), adam.clone(), epoch));
        }
    }

    let (params, optimizer, best_epoch) = match best {
        Some((_, p, a, e)) => (p, a, e),
        None => (params, adam, 0),
    };
    Ok(FitOutcome {
        params,
        optimizer,
        history,
        best_epoch,
        config,
    })
}
