//! Planted-motif benchmark generator.
//!
//! Every interacting pair `(u, v)` gets a private anchor gene `g` with
//! triplets `(u, rho_a, g)` and `(v, rho_b, g)`; the pair's class is
//! `a * s + b` where `s = sqrt(C)`. The class can only be read off the
//! two-hop structure around the pair. Random gene-gene triplets add noise
//! and fingerprints are independent random bits.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_drugs: usize,
    pub num_genes: usize,
    /// Must be a perfect square.
    pub num_classes: usize,
    /// Interacting partners per drug; each drug appears in exactly this many
    /// pairs.
    pub pairs_per_drug: usize,
    pub noise_edges: usize,
    pub fingerprint_bits: usize,
    /// Probability that a fingerprint bit is set.
    pub fingerprint_density: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_drugs: 500,
            num_genes: 2000,
            num_classes: 4,
            pairs_per_drug: 3,
            noise_edges: 2000,
            fingerprint_bits: 1024,
            fingerprint_density: 0.05,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub u: String,
    pub v: String,
    pub gene: String,
    pub a: usize,
    pub b: usize,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    pub pairs: Vec<PlantedPair>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthFiles {
    pub kg_file: PathBuf,
    pub ddi_file: PathBuf,
    pub fingerprint_file: PathBuf,
    pub manifest_file: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        SynthFiles {
            kg_file: dir.join("kg.tsv"),
            ddi_file: dir.join("ddi.tsv"),
            fingerprint_file: dir.join("fingerprints.tsv"),
            manifest_file: dir.join("manifest.json"),
        }
    }
}

pub fn drug_name(i: usize) -> String {
    format!("Compound::D{i:05}")
}

pub fn gene_name(i: usize) -> String {
    format!("Gene::G{i:05}")
}

pub fn motif_relation(a: usize) -> String {
    format!("rho_{a}")
}

pub const NOISE_RELATION: &str = "gene_gene";

fn side(c: usize) -> Option<usize> {
    let s = (c as f64).sqrt().round() as usize;
    (s * s == c).then_some(s)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<usize> {
        let fail = |m: String| Err(Error::invalid(m));
        let s = match side(self.num_classes) {
            Some(s) if self.num_classes >= 2 => s,
            _ => {
                return fail(format!(
                    "num_classes = {} must be a perfect square >= 4",
                    self.num_classes
                ))
            }
        };
        if self.num_drugs < 2 || self.pairs_per_drug == 0 {
            return fail("need at least 2 drugs and 1 pair per drug".into());
        }
        if self.pairs_per_drug >= self.num_drugs {
            return fail("pairs_per_drug must be below num_drugs".into());
        }
        if (self.num_drugs * self.pairs_per_drug) % 2 != 0 {
            return fail("num_drugs * pairs_per_drug must be even".into());
        }
        if self.num_pairs() > self.num_genes {
            return fail(format!(
                "{} pairs need as many anchor genes but only {} exist",
                self.num_pairs(),
                self.num_genes
            ));
        }
        if !(0.0..=1.0).contains(&self.fingerprint_density) {
            return fail(format!(
                "fingerprint_density = {} must be in [0, 1]",
                self.fingerprint_density
            ));
        }
        if self.noise_edges > 0 && self.num_genes < 2 {
            return fail("noise edges need at least two genes".into());
        }
        Ok(s)
    }

    pub fn num_pairs(&self) -> usize {
        self.num_drugs * self.pairs_per_drug / 2
    }
}

/// Random simple graph where every drug has exactly `m` partners: stubs are
/// shuffled and paired, then self pairs and duplicates are repaired by
/// random swaps.
fn regular_pairs(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(m)).collect();
    for _ in 0..1000 {
        stubs.shuffle(rng);
        let mut pairs: Vec<(usize, usize)> = stubs.chunks(2).map(|c| (c[0].min(c[1]), c[0].max(c[1]))).collect();
        for _ in 0..100 * pairs.len() {
            let mut seen = HashSet::new();
            let bad: Vec<usize> = (0..pairs.len())
                .filter(|&i| pairs[i].0 == pairs[i].1 || !seen.insert(pairs[i]))
                .collect();
            let Some(&i) = bad.first() else {
                pairs.sort_unstable();
                return Ok(pairs);
            };
            let j = rng.gen_range(0..pairs.len());
            if i == j {
                continue;
            }
            let (a, b) = pairs[i];
            let (c, d) = pairs[j];
            let (x, y) = if rng.gen_bool(0.5) {
                ((a, c), (b, d))
            } else {
                ((a, d), (b, c))
            };
            pairs[i] = (x.0.min(x.1), x.0.max(x.1));
            pairs[j] = (y.0.min(y.1), y.0.max(y.1));
        }
    }
    Err(Error::invalid(
        "could not build a simple interaction graph with these sizes",
    ))
}

/// Generates the dataset in memory: `(kg_text, ddi_text, fingerprint_text,
/// manifest)`.
pub fn generate(spec: &SynthSpec) -> Result<(String, String, String, SynthManifest)> {
    let s = spec.validate()?;
    let mut rng = crate::rng::seeded(spec.seed, "synth");
    let pairs = regular_pairs(spec.num_drugs, spec.pairs_per_drug, &mut rng)?;
    let mut genes: Vec<usize> = (0..spec.num_genes).collect();
    genes.shuffle(&mut rng);

    let mut kg = String::new();
    let mut ddi = String::new();
    let mut planted = Vec::with_capacity(pairs.len());
    for (p, &(u, v)) in pairs.iter().enumerate() {
        let g = genes[p];
        let a = rng.gen_range(0..s);
        let b = rng.gen_range(0..s);
        let label = a * s + b;
        let (un, vn, gn) = (drug_name(u), drug_name(v), gene_name(g));
        writeln!(kg, "{un}\t{}\t{gn}", motif_relation(a)).expect("string write");
        writeln!(kg, "{vn}\t{}\t{gn}", motif_relation(b)).expect("string write");
        writeln!(ddi, "{un}\t{vn}\t{label}").expect("string write");
        planted.push(PlantedPair {
            u: un,
            v: vn,
            gene: gn,
            a,
            b,
            label,
        });
    }
    for _ in 0..spec.noise_edges {
        let g1 = rng.gen_range(0..spec.num_genes);
        let mut g2 = rng.gen_range(0..spec.num_genes - 1);
        if g2 >= g1 {
            g2 += 1;
        }
        writeln!(kg, "{}\t{NOISE_RELATION}\t{}", gene_name(g1), gene_name(g2)).expect("string write");
    }

    let mut fp = String::new();
    for d in 0..spec.num_drugs {
        let mut drng = crate::rng::seeded(spec.seed, "fingerprint");
        drng.set_stream(1 + d as u64);
        let bits: String = (0..spec.fingerprint_bits)
            .map(|_| {
                if drng.gen_bool(spec.fingerprint_density) {
                    '1'
                } else {
                    '0'
                }
            })
            .collect();
        writeln!(fp, "{}\t{bits}", drug_name(d)).expect("string write");
    }
    Ok((
        kg,
        ddi,
        fp,
        SynthManifest {
            spec: spec.clone(),
            pairs: planted,
        },
    ))
}

/// Writes `kg.tsv`, `ddi.tsv`, `fingerprints.tsv` and `manifest.json` into
/// `dir`, creating it if needed.
pub fn gen_synth(spec: &SynthSpec, dir: &Path) -> Result<SynthFiles> {
    let (kg, ddi, fp, manifest) = generate(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SynthFiles::in_dir(dir);
    let write = |p: &Path, s: &str| fs::write(p, s).map_err(|e| Error::io(p, e));
    write(&files.kg_file, &kg)?;
    write(&files.ddi_file, &ddi)?;
    write(&files.fingerprint_file, &fp)?;
    write(&files.manifest_file, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(files)
}
