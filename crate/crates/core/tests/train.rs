mod common;

use common::{motif_run, tiny_run};
use ddikg::checkpoint::Checkpoint;
use ddikg::commands::{cmd_eval, cmd_train, evaluate_split, prepare, write_report, Split};
use ddikg::graph::TaskMode;
use ddikg::model::Ablations;
use ddikg::train::read_history;
use ddikg::Error;

#[test]
fn same_seed_gives_identical_history_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = tiny_run(dir.path(), 3);
    a.data.out_dir = dir.path().join("a");
    let mut b = a.clone();
    b.data.out_dir = dir.path().join("b");
    let ra = cmd_train(&a).unwrap();
    let rb = cmd_train(&b).unwrap();
    let ha = std::fs::read(&ra.history_path).unwrap();
    let hb = std::fs::read(&rb.history_path).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(read_history(&ra.history_path).unwrap().len(), a.train.epochs);
    assert_eq!(ra.checkpoint.params, rb.checkpoint.params);
    assert_eq!(ra.checkpoint.optimizer, rb.checkpoint.optimizer);

    let mut c = a.clone();
    c.train.seed = 1;
    c.data.out_dir = dir.path().join("c");
    let rc = cmd_train(&c).unwrap();
    assert_ne!(ha, std::fs::read(&rc.history_path).unwrap());
}

#[test]
fn best_epoch_has_the_lowest_validation_loss() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_run(dir.path(), 4);
    c.train.epochs = 6;
    let out = cmd_train(&c).unwrap();
    let h = &out.outcome.history;
    let losses: Vec<f64> = h.iter().map(|r| r.val_loss.unwrap()).collect();
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let first = losses.iter().position(|&l| l == min).unwrap();
    assert_eq!(out.outcome.best_epoch, first + 1);
    assert_eq!(out.checkpoint.meta.best_epoch, first + 1);
}

#[test]
fn train_loss_falls_over_the_first_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = motif_run(dir.path());
    c.train.epochs = 5;
    let out = cmd_train(&c).unwrap();
    let loss: Vec<f64> = out.outcome.history.iter().map(|r| r.train_loss).collect();
    assert!(loss.windows(2).all(|w| w[1] < w[0]), "{loss:?}");
}

#[test]
fn checkpoint_reproduces_predictions_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny_run(dir.path(), 6);
    let out = cmd_train(&c).unwrap();
    let (report, preds) =
        evaluate_split(&out.prepared, &out.outcome.params, &out.outcome.config, &c, Split::Test).unwrap();

    let loaded = Checkpoint::load(&out.checkpoint_path).unwrap();
    assert_eq!(loaded, out.checkpoint);
    let prepared = prepare(&loaded.meta.run).unwrap();
    let (report2, preds2) = evaluate_split(&prepared, &loaded.params, &loaded.meta.model, &c, Split::Test).unwrap();
    assert_eq!(preds, preds2);
    assert_eq!(report, report2);

    let evaluated = cmd_eval(&out.checkpoint_path, None, Split::Test, Some(&dir.path().join("eval"))).unwrap();
    assert_eq!(evaluated, report);
    assert!(dir.path().join("eval/metrics.csv").is_file());
}

#[test]
fn evaluation_refuses_a_different_task_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_run(dir.path(), 7);
    c.train.epochs = 1;
    let out = cmd_train(&c).unwrap();
    let mut other = c.clone();
    other.train.task_mode = TaskMode::MultiLabel;
    let err = cmd_eval(&out.checkpoint_path, Some(&other), Split::Test, None).unwrap_err();
    assert!(matches!(err, Error::TaskModeMismatch(_)), "{err}");
}

#[test]
fn multi_label_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_run(dir.path(), 8);
    c.train.task_mode = TaskMode::MultiLabel;
    c.train.epochs = 2;
    let out = cmd_train(&c).unwrap();
    let (report, preds) =
        evaluate_split(&out.prepared, &out.outcome.params, &out.outcome.config, &c, Split::Test).unwrap();
    assert!(!preds.negatives.is_empty());
    for name in ["roc_auc", "pr_auc", "ap_at_50"] {
        let v = report.get(name).unwrap_or_else(|| panic!("missing {name}"));
        assert!((0.0..=1.0).contains(&v), "{name} = {v}");
    }
}

#[test]
fn every_ablation_trains_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_run(dir.path(), 9);
    for name in Ablations::NAMES {
        let mut c = base.clone();
        c.train.epochs = 1;
        c.ablation.set(name).unwrap();
        c.data.out_dir = dir.path().join(name);
        let out = cmd_train(&c).unwrap();
        let (report, _) =
            evaluate_split(&out.prepared, &out.outcome.params, &out.outcome.config, &c, Split::Test).unwrap();
        write_report(&report, &c.data.out_dir).unwrap();
        let csv = std::fs::read_to_string(c.data.out_dir.join("metrics.csv")).unwrap();
        assert!(csv.contains("macro_f1"), "{name}: {csv}");
        assert!(Checkpoint::load(&out.checkpoint_path).is_ok(), "{name}");
    }
}

#[test]
fn pair_width_follows_the_layout() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny_run(dir.path(), 10);
    let (d, l, fp) = (c.model.dim, c.model.layers, c.model.fingerprint_bits);
    let width = |flag: Option<&str>| {
        let mut run = c.clone();
        if let Some(f) = flag {
            run.ablation.set(f).unwrap();
        }
        run.model_config().pair_width()
    };
    assert_eq!(width(None), 2 * (l * d + fp) + l * d);
    assert_eq!(width(Some("no-sf")), 2 * (l * d + fp));
    assert_eq!(width(Some("no-cf")), 2 * (l * d) + l * d);
}
