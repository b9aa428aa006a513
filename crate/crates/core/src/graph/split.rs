use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DdiDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            dev: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let r = [self.train, self.dev, self.test];
        if r.iter().any(|x| !(0.0..=1.0).contains(x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split ratios {}/{}/{} must be in [0, 1] and sum to 1",
                self.train, self.dev, self.test
            )));
        }
        Ok(())
    }

    /// Largest-remainder allocation of `n` items.
    fn allocate(&self, n: usize) -> [usize; 3] {
        let ideal = [self.train, self.dev, self.test].map(|r| r * n as f64);
        let mut counts = ideal.map(|x| x.floor() as usize);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = ideal[a] - ideal[a].floor();
            let fb = ideal[b] - ideal[b].floor();
            fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
        });
        let mut left = n - counts.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

/// Seeded train/dev/test partition.
///
/// With `stratified`, pairs are grouped by their first label and each group
/// is split separately; a group with at least 3 pairs places at least one
/// pair in every split, smaller groups go entirely to train.
pub fn split_dataset(
    data: &DdiDataset,
    ratios: SplitRatios,
    stratified: bool,
    seed: u64,
) -> Result<(DdiDataset, DdiDataset, DdiDataset)> {
    if data.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    ratios.validate()?;
    let mut rng = crate::rng::seeded(seed, "split");
    let mut parts: [Vec<usize>; 3] = Default::default();

    if stratified {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, p) in data.pairs.iter().enumerate() {
            groups.entry(p.labels[0]).or_default().push(i);
        }
        for (_, mut idx) in groups {
            idx.shuffle(&mut rng);
            if idx.len() < 3 {
                parts[0].extend(idx);
                continue;
            }
            let mut c = ratios.allocate(idx.len());
            for s in [1, 2] {
                if c[s] == 0 {
                    let donor = if c[0] > 1 { 0 } else { 3 - s };
                    c[donor] -= 1;
                    c[s] += 1;
                }
            }
            if c[0] == 0 {
                let donor = if c[1] > c[2] { 1 } else { 2 };
                c[donor] -= 1;
                c[0] += 1;
            }
            parts[0].extend_from_slice(&idx[..c[0]]);
            parts[1].extend_from_slice(&idx[c[0]..c[0] + c[1]]);
            parts[2].extend_from_slice(&idx[c[0] + c[1]..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut rng);
        let c = ratios.allocate(idx.len());
        parts[0] = idx[..c[0]].to_vec();
        parts[1] = idx[c[0]..c[0] + c[1]].to_vec();
        parts[2] = idx[c[0] + c[1]..].to_vec();
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((data.subset(&parts[0]), data.subset(&parts[1]), data.subset(&parts[2])))
}
