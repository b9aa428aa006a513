//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test --test acceptance -- --nocapture`.

mod common;

use std::time::Instant;

use common::{as_oracle, concordance, motif_run, oracle_subgraph, random_graph, tiny_run};
use ddikg::checkpoint::Checkpoint;
use ddikg::commands::{cmd_bench, cmd_train, evaluate_split, prepare, BenchGraph, BenchRequest, Split, TrainOutput};
use ddikg::config::RunConfig;
use ddikg::graph::{extract_enclosing_subgraph, EnclosingSubgraph, EntityId, KnowledgeGraph, Triplet};
use ddikg::model::{
    attention_mask, forward_on_tape, node_features, propagate_layer, Ablations, FingerprintTable, Mode, ModelConfig,
    ModelParams, SharedVars,
};
use ddikg::synth::{gen_synth, SynthSpec};
use ddikg::tensor::{finite_diff_check, Tape, Tensor};
use ddikg::train::metrics::{ap_at_k, cohens_kappa, macro_f1, roc_auc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(lines: &mut Vec<Line>, id: u32, name: &'static str, pass: bool, detail: String) {
    lines.push(Line { id, name, pass, detail });
}

fn fixture_kg() -> KnowledgeGraph {
    let t = vec![
        Triplet::new(0, 0, 2),
        Triplet::new(1, 1, 2),
        Triplet::new(3, 2, 0),
        Triplet::new(3, 0, 1),
        Triplet::new(4, 1, 0),
        Triplet::new(1, 2, 4),
        Triplet::new(2, 0, 3),
        Triplet::new(5, 1, 6),
        Triplet::new(6, 0, 7),
        Triplet::new(0, 2, 5),
    ];
    KnowledgeGraph::from_triplets(8, 3, t).unwrap()
}

fn fixture() -> EnclosingSubgraph {
    extract_enclosing_subgraph(&fixture_kg(), EntityId(0), EntityId(1), 2, &[]).unwrap()
}

fn fixture_config() -> ModelConfig {
    ModelConfig {
        dim: 4,
        bases: 2,
        fingerprint_bits: 5,
        num_classes: 3,
        ..ModelConfig::default()
    }
}

fn fixture_fingerprints() -> FingerprintTable {
    let mut t = FingerprintTable::new(5);
    t.insert(EntityId(0), &[true, false, true, false, false]).unwrap();
    t.insert(EntityId(1), &[false, true, true, false, true]).unwrap();
    t
}

fn gradient_error(c: &ModelConfig, seed: u64) -> f64 {
    let p = ModelParams::init(c, 8, 3, seed).unwrap();
    let sub = fixture();
    let fp = fixture_fingerprints();
    let mut rows = Tensor::zeros(sub.num_nodes(), p.entity_embed.cols());
    for (i, e) in sub.nodes.iter().enumerate() {
        rows.row_mut(i).copy_from_slice(p.entity_embed.row(e.index()));
    }
    let mut params = vec![rows];
    params.extend(p.shared_tensors().into_iter().cloned());
    finite_diff_check(&params, 1e-6, |tape: &mut Tape, vars| {
        let shared = SharedVars::from_vars(&vars[1..], &p)?;
        let trace = forward_on_tape(tape, &shared, vars[0], &sub, c, Some(&fp), Mode::Eval)?;
        tape.cross_entropy(trace.logits, 1)
    })
    .unwrap()
}

fn criterion_gradients(lines: &mut Vec<Line>) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (i, (gamma, flag)) in [
        (-1.0, None),
        (0.0, None),
        (-1.0, Some("no-lia")),
        (-1.0, Some("no-sum")),
    ]
    .into_iter()
    .enumerate()
    {
        let mut c = fixture_config();
        c.gamma = gamma;
        if let Some(f) = flag {
            c.ablation.set(f).unwrap();
        }
        worst = worst.max(gradient_error(&c, 40 + i as u64));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        lines,
        1,
        "gradient fidelity",
        worst <= 1e-4 && secs < 60.0,
        format!("max relative error {worst:.3e} <= 1e-4, {secs:.1}s < 60s"),
    );
}

fn criterion_subgraph_oracle(lines: &mut Vec<Line>) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut queries = 0;
    for g in 0..100 {
        let n = rng.gen_range(3..=200);
        let m = rng.gen_range(n / 2..4 * n);
        let kg = random_graph(1000 + g, n, m, 3);
        for _ in 0..5 {
            let u = rng.gen_range(0..n as u32);
            let v = (u + rng.gen_range(1..n as u32)) % n as u32;
            let k = rng.gen_range(1..=3);
            let sub = extract_enclosing_subgraph(&kg, EntityId(u), EntityId(v), k, &[]).unwrap();
            queries += 1;
            if as_oracle(&sub) != oracle_subgraph(&kg, u, v, k) {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        lines,
        2,
        "subgraph oracle equivalence",
        mismatches == 0 && secs < 30.0,
        format!("{mismatches} mismatches over {queries} queries on 100 graphs, {secs:.1}s < 30s"),
    );
}

fn criterion_attention(lines: &mut Vec<Line>) {
    let sub = fixture();
    let fp = fixture_fingerprints();
    let (mut shared_ok, mut nested_ok, mut all_ok, mut none_ok) = (true, true, true, true);
    for seed in 0..50 {
        // (a) every layer consumes the single first-layer mask.
        let c = fixture_config();
        let p = ModelParams::init(&c, 8, 3, seed).unwrap();
        let mut tape = Tape::new();
        let shared = p.bind_shared(&mut tape, false);
        let rows = p.bind_entities(&mut tape, &sub.nodes, false).unwrap();
        let trace = forward_on_tape(&mut tape, &shared, rows, &sub, &c, Some(&fp), Mode::Eval).unwrap();
        shared_ok &= trace.masks.len() == 1;
        let h0 = node_features(&sub, &p.entity_embed).unwrap();
        let mask = attention_mask(&sub, &h0, &p.attention[0], c.gamma).unwrap();
        shared_ok &= mask == trace.masks[0];
        let mut prev = h0.clone();
        for (l, &state) in trace.states.iter().enumerate() {
            let mut t2 = Tape::new();
            let bound = p.bind_shared(&mut t2, false);
            let h = t2.constant(prev);
            let alpha = t2.constant(Tensor::from_vec(mask.len(), 1, mask.alpha.clone()).unwrap());
            let out = propagate_layer(&mut t2, &sub, h, alpha, &bound.layers[l], None).unwrap();
            shared_ok &= t2.value(out) == tape.value(state);
            prev = tape.value(state).clone();
        }

        // (b)-(d) on the raw mask.
        let gammas = [-1.0, -0.6, -0.2, 0.0, 0.2, 0.5, 0.8, 0.95, 1.0, 1.5];
        let masks: Vec<_> = gammas
            .iter()
            .map(|&g| attention_mask(&sub, &h0, &p.attention[0], g).unwrap())
            .collect();
        for w in masks.windows(2) {
            nested_ok &= (0..sub.num_edges()).all(|e| w[1].pruned[e] || !w[0].pruned[e]);
        }
        none_ok &= masks[0].pruned.iter().all(|&x| !x);
        all_ok &= masks[8].pruned.iter().all(|&x| x) && masks[9].pruned.iter().all(|&x| x);
    }
    let pass = shared_ok && nested_ok && all_ok && none_ok;
    report(
        lines,
        3,
        "attention invariants",
        pass,
        format!(
            "shared mask across layers {shared_ok}, nested under rising gamma {nested_ok}, \
             gamma >= 1 prunes all {all_ok}, gamma = -1 prunes none {none_ok}; 50 seeds"
        ),
    );
}

fn test_macro_f1(out: &TrainOutput, config: &RunConfig) -> f64 {
    let (report, _) = evaluate_split(
        &out.prepared,
        &out.outcome.params,
        &out.outcome.config,
        config,
        Split::Test,
    )
    .unwrap();
    report.get("macro_f1").unwrap()
}

fn run_variant(base: &RunConfig, dir: &std::path::Path, name: &str, edit: impl FnOnce(&mut RunConfig)) -> (f64, f64) {
    let mut c = base.clone();
    c.data.out_dir = dir.join(name);
    edit(&mut c);
    let start = Instant::now();
    let out = cmd_train(&c).unwrap();
    (test_macro_f1(&out, &c), start.elapsed().as_secs_f64())
}

/// Returns the default-run macro-F1 so the sweep check can reuse it.
fn criterion_planted_motif(lines: &mut Vec<Line>, base: &RunConfig, dir: &std::path::Path) -> f64 {
    let (full, t_full) = run_variant(base, dir, "default", |_| {});
    let (no_kg, t_no_kg) = run_variant(base, dir, "no_kg", |c| c.ablation.no_kg = true);
    report(
        lines,
        4,
        "planted-motif learning",
        full >= 0.90 && no_kg <= 0.40 && t_full < 1800.0,
        format!("default macro-F1 {full:.4} >= 0.90, no-kg {no_kg:.4} <= 0.40, {t_full:.0}s + {t_no_kg:.0}s"),
    );
    full
}

fn criterion_ablations(lines: &mut Vec<Line>, dir: &std::path::Path) {
    let base = tiny_run(&dir.join("fixture"), 31);
    let mut rows = 0;
    for name in Ablations::NAMES {
        let mut c = base.clone();
        c.ablation.set(name).unwrap();
        c.data.out_dir = dir.join("fixture").join(name);
        let out = cmd_train(&c).unwrap();
        let (report, _) =
            evaluate_split(&out.prepared, &out.outcome.params, &out.outcome.config, &c, Split::Test).unwrap();
        if report.get("macro_f1").is_some_and(f64::is_finite) {
            rows += 1;
        }
    }
    let width = |flags: &[&str]| {
        let mut c = ModelConfig::default();
        for f in flags {
            c.ablation.set(f).unwrap();
        }
        c.pair_width()
    };
    let widths = [
        width(&[]),
        width(&["no-sf"]),
        width(&["no-cf"]),
        width(&["no-sf", "no-cf"]),
    ];
    let expected = [2 * (64 + 1024) + 64, 2 * (64 + 1024), 2 * 64 + 64, 128];
    report(
        lines,
        5,
        "ablation harness",
        rows == 5 && widths == expected,
        format!("{rows}/5 variants produced metrics, widths {widths:?} expected {expected:?}"),
    );
}

fn criterion_efficiency(lines: &mut Vec<Line>, dir: &std::path::Path) {
    let spec = SynthSpec {
        num_drugs: 1000,
        num_genes: 4000,
        noise_edges: 47_000,
        ..SynthSpec::default()
    };
    let files = gen_synth(&spec, &dir.join("bench_data")).unwrap();
    let mut c = RunConfig::default();
    c.data.kg_file = files.kg_file;
    c.data.ddi_file = files.ddi_file;
    c.data.fingerprint_file = Some(files.fingerprint_file);
    c.data.out_dir = dir.join("bench");
    let kg_edges = ddikg::graph::load_kg(&c.data.kg_file).unwrap().num_triplets();
    let rows = cmd_bench(BenchRequest {
        config: &c,
        k_values: &[2],
        include_full: true,
        full_sample: 1,
    })
    .unwrap();
    let sub = rows
        .iter()
        .find(|r| r.graph == BenchGraph::Subgraph)
        .unwrap()
        .edges_touched;
    let full = rows.iter().find(|r| r.graph == BenchGraph::Full).unwrap().edges_touched;
    let ratio = sub as f64 / full as f64;
    report(
        lines,
        6,
        "efficiency ratio",
        ratio <= 0.20,
        format!(
            "{} nodes, {kg_edges} KG edges, k=2: {sub} / {full} edge visits = {:.4}% <= 20%",
            spec.num_drugs + spec.num_genes,
            100.0 * ratio
        ),
    );
}

fn criterion_metrics(lines: &mut Vec<Line>) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut exact = 0;
    let trials = 500;
    for _ in 0..trials {
        let n = rng.gen_range(2..=200);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64 / 3.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        if roc_auc(&scores, &labels).unwrap() == concordance(&scores, &labels) {
            exact += 1;
        }
    }
    let f1 = macro_f1(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for (t, p, n) in [(0, 0, 4), (0, 1, 1), (1, 0, 2), (1, 1, 3)] {
        pred.extend(std::iter::repeat(p).take(n));
        truth.extend(std::iter::repeat(t).take(n));
    }
    let kappa = cohens_kappa(&pred, &truth, 2).unwrap();
    let scores: Vec<f64> = (0..80).map(|i| -(i as f64)).collect();
    let labels: Vec<bool> = (0..80).map(|i| i < 50 && i % 2 == 1).collect();
    let ap = ap_at_k(&scores, &labels, 50).unwrap();
    let errs = [(f1 - 2.0 / 3.0).abs(), (kappa - 0.4).abs(), (ap - 0.5).abs()];
    report(
        lines,
        7,
        "metric oracles",
        exact == trials && errs.iter().all(|&e| e <= 1e-12),
        format!(
            "roc_auc exact on {exact}/{trials} sets; |macro-F1 - 2/3| {:.1e}, |kappa - 0.4| {:.1e}, |AP@50 - 0.5| {:.1e} <= 1e-12",
            errs[0], errs[1], errs[2]
        ),
    );
}

fn criterion_determinism(lines: &mut Vec<Line>, dir: &std::path::Path) {
    let mut a = tiny_run(&dir.join("det"), 33);
    a.train.epochs = 4;
    let mut b = a.clone();
    a.data.out_dir = dir.join("det/a");
    b.data.out_dir = dir.join("det/b");
    let ra = cmd_train(&a).unwrap();
    let rb = cmd_train(&b).unwrap();
    let same_history = std::fs::read(&ra.history_path).unwrap() == std::fs::read(&rb.history_path).unwrap();

    let (_, before) = evaluate_split(&ra.prepared, &ra.outcome.params, &ra.outcome.config, &a, Split::Test).unwrap();
    let loaded = Checkpoint::load(&ra.checkpoint_path).unwrap();
    let prepared = prepare(&loaded.meta.run).unwrap();
    let (_, after) = evaluate_split(&prepared, &loaded.params, &loaded.meta.model, &a, Split::Test).unwrap();
    let logits_equal = before
        .records
        .iter()
        .zip(&after.records)
        .all(|(x, y)| x.logits.iter().zip(&y.logits).all(|(p, q)| p.to_bits() == q.to_bits()));
    let same_predictions = logits_equal && before == after;
    report(
        lines,
        8,
        "determinism and persistence",
        same_history && same_predictions,
        format!("history CSVs identical {same_history}, reloaded predictions bitwise equal {same_predictions}"),
    );
}

fn criterion_sweeps(lines: &mut Vec<Line>, base: &RunConfig, dir: &std::path::Path, default_f1: f64) {
    let (k1, _) = run_variant(base, dir, "k_1", |c| c.model.k = 1);
    let (g95, _) = run_variant(base, dir, "gamma_0.95", |c| c.model.gamma = 0.95);
    report(
        lines,
        9,
        "sweep sanity",
        k1 < default_f1 && default_f1 - g95 >= 0.1,
        format!(
            "k=1 {k1:.4} < k=2 {default_f1:.4}; gamma=0 {default_f1:.4} - gamma=0.95 {g95:.4} = {:.4} >= 0.1",
            default_f1 - g95
        ),
    );
}

fn main() {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    let dir = tempfile::tempdir().unwrap();
    let motif = motif_run(&dir.path().join("motif"));
    let mut lines = Vec::new();

    criterion_gradients(&mut lines);
    criterion_subgraph_oracle(&mut lines);
    criterion_attention(&mut lines);
    let default_f1 = criterion_planted_motif(&mut lines, &motif, &dir.path().join("motif"));
    criterion_ablations(&mut lines, dir.path());
    criterion_efficiency(&mut lines, dir.path());
    criterion_metrics(&mut lines);
    criterion_determinism(&mut lines, dir.path());
    criterion_sweeps(&mut lines, &motif, &dir.path().join("motif"), default_f1);

    lines.sort_by_key(|l| l.id);
    for l in &lines {
        println!(
            "{} criterion {} {}: {}",
            if l.pass { "PASS" } else { "FAIL" },
            l.id,
            l.name,
            l.detail
        );
    }
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("{passed}/{} criteria pass", lines.len());
}
