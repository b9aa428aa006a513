use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::EpochRecord;
use super::metrics::{
    accuracy, ap_at_k, average_precision_at_k, cohens_kappa, macro_f1, per_class_f1, pr_auc, relation_bin_analysis,
    roc_auc, Bin, BinRow,
};
use super::Predictions;
use crate::error::{Error, Result};
use crate::graph::TaskMode;

/// Which quantity the `ap_at_50` column holds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApVariant {
    /// Fraction of positives among the top 50.
    #[default]
    PrecisionAtK,
    /// Average precision truncated at 50.
    AveragePrecision,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationRow {
    pub relation: u32,
    pub train_support: usize,
    pub test_support: usize,
    /// Per-class F1 (multi-class) or per-type ROC-AUC (multi-label); `None`
    /// when the relation has no evaluation support.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mode: TaskMode,
    pub summary: Vec<(String, f64)>,
    pub per_relation: Vec<RelationRow>,
    pub bins: Vec<BinRow>,
}

impl MetricsReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.summary.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    fn value_name(&self) -> &'static str {
        match self.mode {
            TaskMode::MultiClass => "f1",
            TaskMode::MultiLabel => "roc_auc",
        }
    }

    /// `metric,value` rows.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "value"])?;
        for (name, v) in &self.summary {
            w.write_record([name.as_str(), &v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// `relation,train_support,test_support,<f1|roc_auc>` rows.
    pub fn write_relations_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["relation", "train_support", "test_support", self.value_name()])?;
        for r in &self.per_relation {
            w.write_record([
                r.relation.to_string(),
                r.train_support.to_string(),
                r.test_support.to_string(),
                r.value.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// `bin,num_relations,mean_<f1|roc_auc>` rows; empty bins are absent.
    pub fn write_bins_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin", "num_relations", &format!("mean_{}", self.value_name())])?;
        for b in &self.bins {
            w.write_record([b.bin.label(), b.num_relations.to_string(), b.mean_value.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Computes the summary metrics, the per-relation table and the
/// support-binned breakdown. `train_counts[r]` is the training support of
/// relation `r`.
pub fn evaluate(preds: &Predictions, train_counts: &[usize], bins: &[Bin], ap: ApVariant) -> Result<MetricsReport> {
    let r_count = preds.num_classes;
    if train_counts.len() != r_count {
        return Err(Error::invalid(format!(
            "{} train counts for {r_count} relations",
            train_counts.len()
        )));
    }
    if preds.records.is_empty() {
        return Err(Error::invalid("no predictions to evaluate"));
    }
    let mut test_support = vec![0usize; r_count];
    for rec in &preds.records {
        for &l in &rec.labels {
            test_support[l as usize] += 1;
        }
    }

    let (summary, values) = match preds.mode {
        TaskMode::MultiClass => {
            let pred: Vec<usize> = preds.records.iter().map(|r| r.predicted()).collect();
            let truth: Vec<usize> = preds.records.iter().map(|r| r.labels[0] as usize).collect();
            let f1 = per_class_f1(&pred, &truth, r_count)?;
            let values: Vec<Option<f64>> = (0..r_count).map(|c| (test_support[c] > 0).then_some(f1[c])).collect();
            let summary = vec![
                ("macro_f1".to_string(), macro_f1(&pred, &truth, r_count)?),
                ("accuracy".to_string(), accuracy(&pred, &truth)?),
                ("cohens_kappa".to_string(), cohens_kappa(&pred, &truth, r_count)?),
            ];
            (summary, values)
        }
        TaskMode::MultiLabel => {
            let mut scores: Vec<Vec<f64>> = vec![Vec::new(); r_count];
            let mut labels: Vec<Vec<bool>> = vec![Vec::new(); r_count];
            for rec in &preds.records {
                for &l in &rec.labels {
                    scores[l as usize].push(rec.scores[l as usize]);
                    labels[l as usize].push(true);
                }
            }
            for n in &preds.negatives {
                scores[n.relation as usize].push(n.score);
                labels[n.relation as usize].push(false);
            }
            let mut sums = [0.0f64; 3];
            let mut counted = 0usize;
            let mut values = vec![None; r_count];
            for r in 0..r_count {
                let (s, l) = (&scores[r], &labels[r]);
                let has_pos = l.iter().any(|&x| x);
                let has_neg = l.iter().any(|&x| !x);
                if !(has_pos && has_neg) {
                    continue;
                }
                let auc = roc_auc(s, l)?;
                let ap50 = match ap {
                    ApVariant::PrecisionAtK => ap_at_k(s, l, 50)?,
                    ApVariant::AveragePrecision => average_precision_at_k(s, l, 50)?,
                };
                sums[0] += auc;
                sums[1] += pr_auc(s, l)?;
                sums[2] += ap50;
                counted += 1;
                values[r] = Some(auc);
            }
            if counted == 0 {
                return Err(Error::invalid("no relation type has both positives and negatives"));
            }
            let n = counted as f64;
            let summary = vec![
                ("roc_auc".to_string(), sums[0] / n),
                ("pr_auc".to_string(), sums[1] / n),
                ("ap_at_50".to_string(), sums[2] / n),
            ];
            (summary, values)
        }
    };

    let per_relation = (0..r_count)
        .map(|r| RelationRow {
            relation: r as u32,
            train_support: train_counts[r],
            test_support: test_support[r],
            value: values[r],
        })
        .collect();
    Ok(MetricsReport {
        mode: preds.mode,
        summary,
        per_relation,
        bins: relation_bin_analysis(&values, train_counts, bins)?,
    })
}

/// `epoch,train_loss,val_loss`; a missing validation loss is left empty.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.train_loss.to_string(),
            h.val_loss.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: m.to_string(),
        };
        let field = |j: usize| row.get(j).ok_or_else(|| bad("missing column"));
        let val = field(2)?;
        out.push(EpochRecord {
            epoch: field(0)?.parse().map_err(|_| bad("bad epoch"))?,
            train_loss: field(1)?.parse().map_err(|_| bad("bad train_loss"))?,
            val_loss: if val.is_empty() {
                None
            } else {
                Some(val.parse().map_err(|_| bad("bad val_loss"))?)
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EntityId;
    use crate::train::metrics::bins_from_edges;
    use crate::train::{NegativeRecord, PredictionRecord};

    fn record(label: u32, logits: Vec<f64>) -> PredictionRecord {
        PredictionRecord {
            u: EntityId(0),
            v: EntityId(1),
            labels: vec![label],
            scores: logits.clone(),
            logits,
            kept_edges: 0,
        }
    }

    #[test]
    fn single_bin_equals_macro_f1() {
        let preds = Predictions {
            mode: TaskMode::MultiClass,
            num_classes: 2,
            records: vec![
                record(0, vec![1.0, 0.0]),
                record(0, vec![0.0, 1.0]),
                record(1, vec![0.0, 1.0]),
            ],
            negatives: vec![],
        };
        let bins = bins_from_edges(&[0]).unwrap();
        let rep = evaluate(&preds, &[5, 5], &bins, ApVariant::default()).unwrap();
        assert_eq!(rep.bins.len(), 1);
        assert!((rep.bins[0].mean_value - rep.get("macro_f1").unwrap()).abs() < 1e-12);
    }

    #[test]
    fn multi_label_averages_over_types() {
        let mut a = record(0, vec![0.0, 0.0]);
        a.scores = vec![0.9, 0.5];
        let mut b = record(1, vec![0.0, 0.0]);
        b.scores = vec![0.5, 0.2];
        let neg = |relation, score| NegativeRecord {
            u: EntityId(0),
            tail: EntityId(2),
            relation,
            score,
        };
        let preds = Predictions {
            mode: TaskMode::MultiLabel,
            num_classes: 2,
            records: vec![a, b],
            negatives: vec![neg(0, 0.1), neg(1, 0.7)],
        };
        let rep = evaluate(&preds, &[1, 1], &bins_from_edges(&[0]).unwrap(), ApVariant::default()).unwrap();
        assert_eq!(rep.get("roc_auc"), Some(0.5));
        assert_eq!(rep.per_relation[0].value, Some(1.0));
        assert_eq!(rep.per_relation[1].value, Some(0.0));
    }

    #[test]
    fn history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let h = vec![
            EpochRecord {
                epoch: 1,
                train_loss: 0.1 + 0.2,
                val_loss: Some(1.0 / 3.0),
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.25,
                val_loss: None,
            },
        ];
        write_history(&path, &h).unwrap();
        assert_eq!(read_history(&path).unwrap(), h);
    }
}
