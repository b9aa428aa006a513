use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use ddikg::commands::{
    cmd_bench, cmd_eval, cmd_explain, cmd_sweep, cmd_train, inspect_checkpoint, BenchRequest, ExplainRequest, Split,
    SweepAxis,
};
use ddikg::config::RunConfig;
use ddikg::synth::{gen_synth, SynthSpec};

#[derive(Parser)]
#[command(
    name = "ddikg",
    version,
    about = "Typed drug-drug interaction prediction over knowledge-graph subgraphs"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 gives bitwise-reproducible runs on any machine).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    k: Option<u32>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// no-kg, no-sum, no-sf, no-cf or no-lia; repeatable.
    #[arg(long, global = true)]
    ablation: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint and loss history.
    Train,
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Score one drug pair and export its reasoning pathway.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        drug_u: String,
        drug_v: String,
        /// Merge antiparallel edges in the DOT output.
        #[arg(long)]
        undirected: bool,
    },
    /// Train and evaluate once per value of one hyperparameter.
    Sweep {
        /// k, dim or gamma.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        values: Vec<f64>,
    },
    /// Count edge visits and time one epoch of forward passes.
    Bench {
        #[arg(long, value_delimiter = ',')]
        k_values: Vec<u32>,
        /// Also measure propagation over the whole graph.
        #[arg(long)]
        full: bool,
        /// Pairs timed under full-graph propagation.
        #[arg(long, default_value_t = 20)]
        full_sample: usize,
    },
    /// Generate the planted-motif benchmark.
    GenSynth {
        #[arg(long, default_value_t = 500)]
        num_drugs: usize,
        #[arg(long, default_value_t = 2000)]
        num_genes: usize,
        #[arg(long, default_value_t = 4)]
        num_classes: usize,
        #[arg(long, default_value_t = 3)]
        pairs_per_drug: usize,
        #[arg(long, default_value_t = 2000)]
        noise_edges: usize,
        #[arg(long, default_value_t = 1024)]
        fingerprint_bits: usize,
        #[arg(long, default_value_t = SynthSpec::default().fingerprint_density)]
        fingerprint_density: f64,
    },
    /// Print a checkpoint's metadata and tensor shapes.
    InspectCheckpoint { path: PathBuf },
}

impl GlobalArgs {
    fn load_config(&self) -> Result<Option<RunConfig>> {
        let Some(path) = &self.config else {
            return Ok(None);
        };
        let mut c = RunConfig::load(path)?;
        self.apply(&mut c)?;
        Ok(Some(c))
    }

    fn require_config(&self, command: &str) -> Result<RunConfig> {
        match self.load_config()? {
            Some(c) => Ok(c),
            None => bail!("`{command}` needs --config"),
        }
    }

    fn apply(&self, c: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            c.train.seed = s;
        }
        if let Some(k) = self.k {
            c.model.k = k;
        }
        if let Some(d) = self.dim {
            c.model.dim = d;
        }
        if let Some(g) = self.gamma {
            c.model.gamma = g;
        }
        for a in &self.ablation {
            c.ablation.set(a)?;
        }
        if let Some(o) = &self.out {
            c.data.out_dir = o.clone();
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Train => {
            let c = g.require_config("train")?;
            let out = cmd_train(&c)?;
            println!("checkpoint: {}", out.checkpoint_path.display());
            println!("history: {}", out.history_path.display());
            println!("best epoch: {}", out.outcome.best_epoch);
        }
        Command::Eval { checkpoint, split } => {
            let split: Split = split.parse()?;
            let c = g.load_config()?;
            let report = cmd_eval(&checkpoint, c.as_ref(), split, g.out.as_deref())?;
            for (name, v) in &report.summary {
                println!("{name}\t{v:.6}");
            }
        }
        Command::Explain {
            checkpoint,
            drug_u,
            drug_v,
            undirected,
        } => {
            let out = cmd_explain(ExplainRequest {
                checkpoint: &checkpoint,
                drug_u: &drug_u,
                drug_v: &drug_v,
                gamma: g.gamma,
                undirected,
                out_dir: g.out.as_deref(),
            })?;
            println!(
                "predicted {} (class {}) with probability {:.4}",
                out.relation_name, out.predicted, out.probability
            );
            println!("dot: {}", out.dot_path.display());
            println!("json: {}", out.json_path.display());
        }
        Command::Sweep { axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            let c = g.require_config("sweep")?;
            for row in cmd_sweep(&c, axis, &values)? {
                let metrics: Vec<String> = row.metrics.iter().map(|(n, v)| format!("{n}={v:.4}")).collect();
                println!(
                    "{axis}={}\t{}\tkept_edges={:.2}",
                    row.value,
                    metrics.join("\t"),
                    row.mean_kept_edges
                );
            }
        }
        Command::Bench {
            k_values,
            full,
            full_sample,
        } => {
            let c = g.require_config("bench")?;
            let rows = cmd_bench(BenchRequest {
                config: &c,
                k_values: &k_values,
                include_full: full,
                full_sample,
            })?;
            for r in rows {
                println!(
                    "k={}\t{}\tedges={}\twall={:.3}s",
                    r.k, r.graph, r.edges_touched, r.wall_time
                );
            }
        }
        Command::GenSynth {
            num_drugs,
            num_genes,
            num_classes,
            pairs_per_drug,
            noise_edges,
            fingerprint_bits,
            fingerprint_density,
        } => {
            let spec = SynthSpec {
                num_drugs,
                num_genes,
                num_classes,
                pairs_per_drug,
                noise_edges,
                fingerprint_bits,
                fingerprint_density,
                seed: g.seed.unwrap_or(SynthSpec::default().seed),
            };
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
            let files = gen_synth(&spec, &dir)?;
            println!("wrote {}", files.kg_file.parent().unwrap_or(Path::new(".")).display());
        }
        Command::InspectCheckpoint { path } => print!("{}", inspect_checkpoint(&path)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
