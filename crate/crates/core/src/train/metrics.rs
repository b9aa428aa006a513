//! Classification and ranking metrics.

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!(
            "length mismatch: {a} predictions vs {b} labels"
        )));
    }
    if a == 0 {
        return Err(Error::invalid("metric over an empty record set"));
    }
    Ok(())
}

/// `confusion[t][p]` counts records with true class `t` predicted as `p`.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    check_lengths(pred.len(), truth.len())?;
    let mut m = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::OutOfRange {
                kind: "class",
                id: p.max(t),
                count: num_classes,
            });
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Per-class F1; a class with no predictions and no truth scores 0.
pub fn per_class_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    let m = confusion_matrix(pred, truth, num_classes)?;
    Ok((0..num_classes)
        .map(|c| {
            let tp = m[c][c] as f64;
            let predicted: usize = m.iter().map(|row| row[c]).sum();
            let actual: usize = m[c].iter().sum();
            if tp == 0.0 {
                return 0.0;
            }
            let p = tp / predicted as f64;
            let r = tp / actual as f64;
            2.0 * p * r / (p + r)
        })
        .collect())
}

/// Unweighted mean of per-class F1 over all `num_classes` classes.
pub fn macro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    let f = per_class_f1(pred, truth, num_classes)?;
    Ok(f.iter().sum::<f64>() / num_classes as f64)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `(p_o - p_e) / (1 - p_e)`; when chance agreement is already 1 the
/// result is 1.
pub fn cohens_kappa(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    let m = confusion_matrix(pred, truth, num_classes)?;
    let n = pred.len() as f64;
    let p_o = (0..num_classes).map(|c| m[c][c]).sum::<usize>() as f64 / n;
    let p_e = (0..num_classes)
        .map(|c| {
            let pred_c: usize = m.iter().map(|row| row[c]).sum();
            let true_c: usize = m[c].iter().sum();
            (pred_c as f64 / n) * (true_c as f64 / n)
        })
        .sum::<f64>();
    if p_e >= 1.0 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices ordered by descending score; equal scores keep input order.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN"));
    idx
}

/// Area under the ROC curve from the Mann-Whitney rank statistic, ties
/// counted as half. Errors unless both classes are present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("ROC-AUC needs at least one positive and one negative"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN"));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their mean.
        let avg = (start + 1 + end) as f64 / 2.0;
        let group_pos = idx[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += avg * group_pos as f64;
        start = end;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Area under the precision-recall curve by step integration over the
/// distinct score thresholds.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_scores(scores, labels)?;
    if pos == 0 {
        return Err(Error::invalid("PR-AUC needs at least one positive"));
    }
    let idx = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// Fraction of the top `k` items (by descending score, earlier index on
/// ties) that are positive. With fewer than `k` items the denominator is the
/// item count.
pub fn ap_at_k(scores: &[f64], labels: &[bool], k: usize) -> Result<f64> {
    check_scores(scores, labels)?;
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let top = k.min(scores.len());
    let hits = descending(scores)[..top].iter().filter(|&&i| labels[i]).count();
    Ok(hits as f64 / top as f64)
}

/// Average precision truncated at `k`: the mean of precision@i over the
/// positive positions `i <= k`, normalised by `min(k, positives)`.
pub fn average_precision_at_k(scores: &[f64], labels: &[bool], k: usize) -> Result<f64> {
    let (pos, _) = check_scores(scores, labels)?;
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if pos == 0 {
        return Err(Error::invalid("average precision needs at least one positive"));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in descending(scores).iter().take(k).enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos.min(k) as f64)
}

/// `[lo, hi)` range over train-set support; `hi = None` is unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bin {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl Bin {
    pub fn contains(&self, n: usize) -> bool {
        n >= self.lo && self.hi.map_or(true, |h| n < h)
    }

    pub fn label(&self) -> String {
        match self.hi {
            Some(h) => format!("[{},{})", self.lo, h),
            None => format!("[{},inf)", self.lo),
        }
    }
}

pub const DEFAULT_BIN_EDGES: [usize; 5] = [0, 10, 50, 200, 1000];

/// Bins `[e0,e1), [e1,e2), ..., [e_last, inf)` from ascending edges.
pub fn bins_from_edges(edges: &[usize]) -> Result<Vec<Bin>> {
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("bin edges must be non-empty and strictly ascending"));
    }
    Ok(edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| Bin {
            lo,
            hi: edges.get(i + 1).copied(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinRow {
    pub bin: Bin,
    pub num_relations: usize,
    pub mean_value: f64,
}

/// Mean per-relation value (F1 or AUC) grouped by train-set support.
/// `values[r] = None` marks a relation with nothing to score; empty bins are
/// omitted.
pub fn relation_bin_analysis(values: &[Option<f64>], train_counts: &[usize], bins: &[Bin]) -> Result<Vec<BinRow>> {
    if values.len() != train_counts.len() {
        return Err(Error::invalid("one train count per relation required"));
    }
    let mut rows = Vec::new();
    for &bin in bins {
        let members: Vec<f64> = values
            .iter()
            .zip(train_counts)
            .filter(|(_, &n)| bin.contains(n))
            .filter_map(|(v, _)| *v)
            .collect();
        if members.is_empty() {
            continue;
        }
        rows.push(BinRow {
            bin,
            num_relations: members.len(),
            mean_value: members.iter().sum::<f64>() / members.len() as f64,
        });
    }
    Ok(rows)
}
