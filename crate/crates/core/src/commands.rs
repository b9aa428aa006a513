//! End-to-end commands behind the `ddikg` binary: data preparation, training,
//! evaluation, explanation, parameter sweeps and the propagation benchmark.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, CheckpointMeta, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::error::{Error, Result, StageExt};
use crate::explain::{export_dot, export_json, summarize_pathway, PathwayGraph};
use crate::graph::{
    build_propagation_graph, extract_enclosing_subgraph, load_ddi, load_kg, split_dataset, write_id_map, DdiDataset,
    DdiPair, EnclosingSubgraph, EntityId, GraphSource, KnowledgeGraph, TaskMode, Triplet,
};
use crate::model::{forward, load_fingerprints, AttentionMask, FingerprintTable, Mode, ModelConfig, ModelParams};
use crate::train::metrics::argmax;
use crate::train::{
    evaluate, fit, init_model, predict, prepare_examples, sigmoid, softmax, write_history, Context, FitInputs,
    FitOutcome, MetricsReport, NegativeSampler, Predictions,
};

/// Loaded data for one run.
pub struct Prepared {
    /// Input KG with every interacting drug in its entity table.
    pub kg: KnowledgeGraph,
    /// Message-passing graph (KG plus training interactions, or training
    /// interactions only under the no-KG ablation).
    pub graph: KnowledgeGraph,
    pub train: DdiDataset,
    pub dev: DdiDataset,
    pub test: DdiDataset,
    pub fingerprints: Option<FingerprintTable>,
}

impl Prepared {
    pub fn split(&self, split: Split) -> &DdiDataset {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    fn all_pairs(&self) -> impl Iterator<Item = &DdiPair> {
        self.train.pairs.iter().chain(&self.dev.pairs).chain(&self.test.pairs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!(
                "unknown split {other:?}; valid: train, dev, test"
            ))),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads the KG, interactions and fingerprints, splits the interactions
/// with `train.seed` and builds the propagation graph. Dev and test pairs
/// never appear in it.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let model = config.model_config();
    let kg = load_kg(&config.data.kg_file).stage("loading KG")?;
    let mut entities = kg.entities().clone();
    let data = load_ddi(&config.data.ddi_file, config.train.task_mode, &mut entities).stage("loading interactions")?;
    let kg = kg.with_entities(entities)?;
    let (train, dev, test) = split_dataset(&data, config.data.split, config.data.stratified, config.train.seed)?;
    log::info!(
        "{} entities, {} triplets; {} / {} / {} train / dev / test pairs",
        kg.num_entities(),
        kg.num_triplets(),
        train.len(),
        dev.len(),
        test.len()
    );
    let holdout: Vec<DdiPair> = dev.pairs.iter().chain(&test.pairs).cloned().collect();
    let source = if model.use_kg() {
        GraphSource::KnowledgeGraph
    } else {
        GraphSource::InteractionsOnly
    };
    let graph = build_propagation_graph(&kg, &train, &holdout, source)?;

    let fingerprints = match (&config.data.fingerprint_file, model.use_fingerprint()) {
        (Some(path), true) => {
            let fp = load_fingerprints(path, model.fingerprint_bits, graph.entities()).stage("loading fingerprints")?;
            let drugs: BTreeSet<EntityId> = data.pairs.iter().flat_map(|p| [p.u, p.v]).collect();
            fp.warn_missing(drugs, graph.entities());
            Some(fp)
        }
        (None, true) => {
            log::warn!("no fingerprint file configured; fingerprint inputs are all zero");
            None
        }
        _ => None,
    };
    Ok(Prepared {
        kg,
        graph,
        train,
        dev,
        test,
        fingerprints,
    })
}

/// Stream ids for evaluation negatives, fixed per split.
fn eval_stream(split: Split) -> u64 {
    u64::MAX - 1 - split as u64
}

/// Predictions and metrics for one split.
pub fn evaluate_split(
    prepared: &Prepared,
    params: &ModelParams,
    model: &ModelConfig,
    config: &RunConfig,
    split: Split,
) -> Result<(MetricsReport, Predictions)> {
    let data = prepared.split(split);
    if data.is_empty() {
        return Err(Error::invalid(format!("the {split:?} split is empty")));
    }
    let sampler = match data.mode {
        TaskMode::MultiLabel => Some(NegativeSampler::new(&prepared.graph, prepared.all_pairs())?),
        TaskMode::MultiClass => None,
    };
    let examples = prepare_examples(
        &prepared.graph,
        &data.pairs,
        model.k,
        sampler.as_ref(),
        config.train.seed,
        eval_stream(split),
    )
    .stage("evaluation subgraphs")?;
    let ctx = Context {
        config: model,
        mode: data.mode,
        fingerprints: prepared.fingerprints.as_ref(),
    };
    let preds = predict(params, &examples, ctx)?;
    let report = evaluate(
        &preds,
        &prepared.train.class_counts(),
        &config.eval.bins()?,
        config.eval.ap_variant,
    )?;
    Ok((report, preds))
}

pub struct TrainOutput {
    pub prepared: Prepared,
    pub outcome: FitOutcome,
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub history_path: PathBuf,
}

/// Trains and writes `checkpoint.bin`, `history.csv`, `entities.tsv`,
/// `relations.tsv` and `config.toml` into `data.out_dir`.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutput> {
    let prepared = prepare(config)?;
    let model = config.model_config();
    let outcome = fit(
        FitInputs {
            graph: &prepared.graph,
            train: &prepared.train,
            dev: &prepared.dev,
            fingerprints: prepared.fingerprints.as_ref(),
        },
        &model,
        &config.train,
    )?;
    let out = &config.data.out_dir;
    ensure_dir(out)?;
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            run: config.clone(),
            model: outcome.config.clone(),
            best_epoch: outcome.best_epoch,
            adam_step: outcome.optimizer.step,
            adam_config: outcome.optimizer.config,
            entities: prepared.graph.entities().names().to_vec(),
            relations: prepared.graph.relations().names().to_vec(),
        },
        params: outcome.params.clone(),
        optimizer: outcome.optimizer.clone(),
    };
    let checkpoint_path = out.join("checkpoint.bin");
    let history_path = out.join("history.csv");
    checkpoint.save(&checkpoint_path)?;
    write_history(&history_path, &outcome.history)?;
    write_id_map(prepared.graph.entities(), out.join("entities.tsv"))?;
    write_id_map(prepared.graph.relations(), out.join("relations.tsv"))?;
    let cfg_path = out.join("config.toml");
    fs::write(&cfg_path, config.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    log::info!(
        "best epoch {} of {}; checkpoint written to {}",
        outcome.best_epoch,
        outcome.history.len(),
        checkpoint_path.display()
    );
    Ok(TrainOutput {
        prepared,
        outcome,
        checkpoint,
        checkpoint_path,
        history_path,
    })
}

/// Rebuilds the data of a checkpointed run and checks that its vocabulary
/// matches the stored one.
fn reload(checkpoint: &Checkpoint, run: &RunConfig) -> Result<Prepared> {
    let prepared = prepare(run)?;
    if prepared.graph.entities().names() != checkpoint.meta.entities.as_slice()
        || prepared.graph.relations().names() != checkpoint.meta.relations.as_slice()
    {
        return Err(Error::Checkpoint(
            "data files do not reproduce the checkpoint's entity and relation tables".into(),
        ));
    }
    Ok(prepared)
}

/// Writes `metrics.csv`, `per_relation.csv` and `relation_bins.csv`.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    report.write_metrics_csv(&dir.join("metrics.csv"))?;
    report.write_relations_csv(&dir.join("per_relation.csv"))?;
    report.write_bins_csv(&dir.join("relation_bins.csv"))
}

/// Evaluates a checkpoint on `split`. `override_config` may point at other
/// data files and evaluation settings; its task mode must match the
/// checkpoint's.
pub fn cmd_eval(
    checkpoint_path: &Path,
    override_config: Option<&RunConfig>,
    split: Split,
    out_dir: Option<&Path>,
) -> Result<MetricsReport> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let mut run = checkpoint.meta.run.clone();
    if let Some(o) = override_config {
        if o.train.task_mode != run.train.task_mode {
            return Err(Error::TaskModeMismatch(format!(
                "checkpoint was trained for {} but the evaluation data is {}",
                run.train.task_mode, o.train.task_mode
            )));
        }
        run.data = o.data.clone();
        run.eval = o.eval.clone();
    }
    let prepared = reload(&checkpoint, &run)?;
    let (report, _) = evaluate_split(&prepared, &checkpoint.params, &checkpoint.meta.model, &run, split)?;
    write_report(&report, out_dir.unwrap_or(&run.data.out_dir))?;
    for (name, v) in &report.summary {
        log::info!("{name} = {v:.6}");
    }
    Ok(report)
}

pub struct ExplainRequest<'a> {
    pub checkpoint: &'a Path,
    pub drug_u: &'a str,
    pub drug_v: &'a str,
    pub gamma: Option<f64>,
    pub undirected: bool,
    pub out_dir: Option<&'a Path>,
}

#[derive(Debug)]
pub struct ExplainOutput {
    pub pathway: PathwayGraph,
    pub subgraph: EnclosingSubgraph,
    pub predicted: usize,
    pub probability: f64,
    pub relation_name: String,
    pub dot_path: PathBuf,
    pub json_path: PathBuf,
}

/// Looks up a drug by name; the error lists the closest known names.
pub fn resolve_entity(graph: &KnowledgeGraph, name: &str) -> Result<EntityId> {
    if let Some(id) = graph.entities().get(name) {
        return Ok(EntityId(id));
    }
    let mut scored: Vec<(usize, &String)> = graph
        .entities()
        .names()
        .iter()
        .map(|n| (strsim::levenshtein(name, n), n))
        .collect();
    scored.sort();
    let nearest: Vec<&str> = scored.iter().take(5).map(|(_, n)| n.as_str()).collect();
    Err(Error::invalid(format!(
        "unknown drug {name:?}; nearest known names: {}",
        nearest.join(", ")
    )))
}

/// Scores one pair, then writes its reasoning pathway as `pathway.dot` and
/// `pathway.json`. The pair's own interaction edges are hidden from the
/// subgraph.
pub fn cmd_explain(req: ExplainRequest<'_>) -> Result<ExplainOutput> {
    let checkpoint = Checkpoint::load(req.checkpoint)?;
    let run = checkpoint.meta.run.clone();
    let prepared = reload(&checkpoint, &run)?;
    let graph = &prepared.graph;
    let u = resolve_entity(graph, req.drug_u)?;
    let v = resolve_entity(graph, req.drug_v)?;
    if u == v {
        return Err(Error::invalid("the two drugs must differ"));
    }
    let mut model = checkpoint.meta.model.clone();
    if let Some(g) = req.gamma {
        model.gamma = g;
    }
    model.validate(graph.num_relations())?;

    let exclude: Vec<Triplet> = graph
        .out_edges(u)
        .iter()
        .filter(|t| t.tail == v)
        .chain(graph.out_edges(v).iter().filter(|t| t.tail == u))
        .filter(|t| graph.is_ddi_relation(t.relation))
        .copied()
        .collect();
    let sub = extract_enclosing_subgraph(graph, u, v, model.k, &exclude)?;
    let (logits, mut masks) = forward(
        &checkpoint.params,
        &model,
        &sub,
        prepared.fingerprints.as_ref(),
        Mode::Eval,
    )?;
    if masks.is_empty() {
        masks.push(AttentionMask::ones(sub.num_edges()));
    }
    let logits = logits.into_data();
    let scores = match run.train.task_mode {
        TaskMode::MultiClass => softmax(&logits),
        TaskMode::MultiLabel => logits.iter().map(|&x| sigmoid(x)).collect(),
    };
    let predicted = argmax(&logits);
    let relation_name = graph
        .relations()
        .name(graph.ddi_relations().start + predicted as u32)
        .to_string();

    let pathway = summarize_pathway(&sub, &masks, graph)?;
    let dir = req.out_dir.unwrap_or(&run.data.out_dir);
    ensure_dir(dir)?;
    let dot_path = dir.join("pathway.dot");
    let json_path = dir.join("pathway.json");
    export_dot(&pathway, model.gamma, req.undirected, &dot_path)?;
    export_json(&pathway, &json_path)?;
    log::info!(
        "pathway keeps {} of {} edges and {} of {} nodes",
        pathway.edges.len(),
        sub.num_edges(),
        pathway.nodes.len(),
        sub.num_nodes()
    );
    Ok(ExplainOutput {
        pathway,
        subgraph: sub,
        predicted,
        probability: scores[predicted],
        relation_name,
        dot_path,
        json_path,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    K,
    Dim,
    Gamma,
}

impl SweepAxis {
    pub const NAMES: [&'static str; 3] = ["k", "dim", "gamma"];

    /// Copy of `config` with this axis set to `value`.
    pub fn apply(self, config: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = config.clone();
        let whole = |name: &str| -> Result<usize> {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(Error::invalid(format!(
                    "{name} must be a positive integer, got {value}"
                )));
            }
            Ok(value as usize)
        };
        match self {
            SweepAxis::K => c.model.k = whole("k")? as u32,
            SweepAxis::Dim => c.model.dim = whole("dim")?,
            SweepAxis::Gamma => c.model.gamma = value,
        }
        Ok(c)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepAxis::K),
            "dim" | "d" => Ok(SweepAxis::Dim),
            "gamma" => Ok(SweepAxis::Gamma),
            other => Err(Error::invalid(format!(
                "invalid sweep axis {other:?}; valid axes: {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::K => "k",
            SweepAxis::Dim => "dim",
            SweepAxis::Gamma => "gamma",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub metrics: Vec<(String, f64)>,
    /// Mean number of unpruned subgraph edges over the test pairs.
    pub mean_kept_edges: f64,
}

/// One train + test evaluation per value, everything else at `config`.
/// Each run writes its artifacts under `<out_dir>/<axis>_<value>/`; the
/// table goes to `<out_dir>/sweep_<axis>.csv`.
pub fn cmd_sweep(config: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let root = config.data.out_dir.clone();
    let mut rows = Vec::new();
    for &value in values {
        let mut run = axis.apply(config, value)?;
        run.data.out_dir = root.join(format!("{axis}_{value}"));
        let stage = format!("{axis} = {value}");
        let trained = cmd_train(&run).stage(&stage)?;
        let (report, preds) = evaluate_split(
            &trained.prepared,
            &trained.outcome.params,
            &trained.outcome.config,
            &run,
            Split::Test,
        )
        .stage(&stage)?;
        write_report(&report, &run.data.out_dir)?;
        let kept: usize = preds.records.iter().map(|r| r.kept_edges).sum();
        let mean_kept_edges = kept as f64 / preds.records.len() as f64;
        log::info!("{stage}: mean kept edges {mean_kept_edges:.3}");
        rows.push(SweepRow {
            value,
            metrics: report.summary,
            mean_kept_edges,
        });
    }

    ensure_dir(&root)?;
    let path = root.join(format!("sweep_{axis}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["value".to_string()];
    header.extend(rows[0].metrics.iter().map(|(n, _)| n.clone()));
    header.push("mean_kept_edges".into());
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![r.value.to_string()];
        rec.extend(r.metrics.iter().map(|(_, v)| v.to_string()));
        rec.push(r.mean_kept_edges.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchGraph {
    Subgraph,
    Full,
}

impl fmt::Display for BenchGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchGraph::Subgraph => "subgraph",
            BenchGraph::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub k: u32,
    pub graph: BenchGraph,
    /// Edge visits for one epoch of forward passes: local edges times
    /// layers, summed over training pairs.
    pub edges_touched: u64,
    /// Seconds for one epoch of forward passes (extrapolated from
    /// `timed_pairs` pairs for the full graph).
    pub wall_time: f64,
    pub timed_pairs: usize,
}

pub struct BenchRequest<'a> {
    pub config: &'a RunConfig,
    pub k_values: &'a [u32],
    pub include_full: bool,
    /// Pairs actually run through full-graph propagation.
    pub full_sample: usize,
}

/// Counts and times one epoch of forward passes over the training pairs for
/// each `k`, optionally against propagation over the whole graph. Writes
/// `<out_dir>/bench.csv`.
pub fn cmd_bench(req: BenchRequest<'_>) -> Result<Vec<BenchRow>> {
    let config = req.config;
    let prepared = prepare(config)?;
    let graph = &prepared.graph;
    let pairs = &prepared.train.pairs;
    let mut rows = Vec::new();
    let mut ks = req.k_values.to_vec();
    if ks.is_empty() {
        ks.push(config.model.k);
    }
    for &k in &ks {
        let mut model = config.model_config();
        model.k = k;
        model.num_classes = prepared.train.num_classes;
        model.clamp_bases(graph.num_relations());
        let params = init_model(graph, &model, config.train.seed)?;
        let layers = model.layers as u64;
        let fps = prepared.fingerprints.as_ref();

        let start = Instant::now();
        let examples = prepare_examples(graph, pairs, k, None, config.train.seed, 0)?;
        examples
            .par_iter()
            .map(|ex| forward(&params, &model, &ex.subgraph, fps, Mode::Eval).map(|_| ()))
            .collect::<Result<Vec<()>>>()?;
        let wall_time = start.elapsed().as_secs_f64();
        let edges_touched = examples.iter().map(|e| e.subgraph.num_edges() as u64).sum::<u64>() * layers;
        log::info!("k = {k}: {edges_touched} edge visits in {wall_time:.3}s");
        rows.push(BenchRow {
            k,
            graph: BenchGraph::Subgraph,
            edges_touched,
            wall_time,
            timed_pairs: pairs.len(),
        });

        if req.include_full {
            let sample = req.full_sample.clamp(1, pairs.len());
            let start = Instant::now();
            for p in &pairs[..sample] {
                let sub = EnclosingSubgraph::whole_graph(graph, p.u, p.v, k)?;
                forward(&params, &model, &sub, fps, Mode::Eval)?;
            }
            let per_pair = start.elapsed().as_secs_f64() / sample as f64;
            rows.push(BenchRow {
                k,
                graph: BenchGraph::Full,
                edges_touched: graph.num_triplets() as u64 * layers * pairs.len() as u64,
                wall_time: per_pair * pairs.len() as f64,
                timed_pairs: sample,
            });
        }
    }

    let out = &config.data.out_dir;
    ensure_dir(out)?;
    let path = out.join("bench.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["k", "graph", "edges_touched_per_epoch", "wall_time_s", "timed_pairs"])?;
    for r in &rows {
        w.write_record([
            r.k.to_string(),
            r.graph.to_string(),
            r.edges_touched.to_string(),
            format!("{:.6}", r.wall_time),
            r.timed_pairs.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// Human-readable summary of a checkpoint file.
pub fn inspect_checkpoint(path: &Path) -> Result<String> {
    use std::fmt::Write as _;
    let c = Checkpoint::load(path)?;
    let m = &c.meta;
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "format version: {FORMAT_VERSION}");
    let _ = writeln!(w, "task mode: {}", m.run.train.task_mode);
    let _ = writeln!(w, "best epoch: {}", m.best_epoch);
    let _ = writeln!(w, "optimizer steps: {}", m.adam_step);
    let _ = writeln!(
        w,
        "model: k={} dim={} layers={} bases={} gamma={} classes={}",
        m.model.k, m.model.dim, m.model.layers, m.model.bases, m.model.gamma, m.model.num_classes
    );
    let ablations = m.model.ablation.active();
    let _ = writeln!(
        w,
        "ablations: {}",
        if ablations.is_empty() {
            "none".to_string()
        } else {
            ablations.join(", ")
        }
    );
    let _ = writeln!(w, "entities: {}, relations: {}", m.entities.len(), m.relations.len());
    for (name, t) in c.params.named_tensors() {
        let _ = writeln!(w, "  {name}: {}x{}", t.rows(), t.cols());
    }
    Ok(s)
}
