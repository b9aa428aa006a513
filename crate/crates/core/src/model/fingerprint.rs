use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{EntityId, Vocab};
use crate::tensor::Tensor;

/// Fixed-width 0/1 drug fingerprints keyed by entity id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FingerprintTable {
    bits: usize,
    rows: HashMap<EntityId, Vec<f64>>,
}

impl FingerprintTable {
    pub fn new(bits: usize) -> Self {
        FingerprintTable {
            bits,
            rows: HashMap::new(),
        }
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.rows.contains_key(&e)
    }

    pub fn insert(&mut self, e: EntityId, bits: &[bool]) -> Result<()> {
        if bits.len() != self.bits {
            return Err(Error::invalid(format!(
                "fingerprint has {} bits, table expects {}",
                bits.len(),
                self.bits
            )));
        }
        self.rows
            .insert(e, bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
        Ok(())
    }

    /// `1 x bits` row; all zeros for drugs without an entry.
    pub fn row(&self, e: EntityId) -> Tensor {
        match self.rows.get(&e) {
            Some(v) => Tensor::row_vector(v.clone()),
            None => Tensor::zeros(1, self.bits),
        }
    }

    /// Logs one warning naming how many of `drugs` have no fingerprint.
    pub fn warn_missing(&self, drugs: impl IntoIterator<Item = EntityId>, vocab: &Vocab) {
        let mut missing: Vec<EntityId> = drugs.into_iter().filter(|e| !self.contains(*e)).collect();
        missing.sort();
        missing.dedup();
        if let Some(first) = missing.first() {
            log::warn!(
                "{} drug(s) have no fingerprint and use the all-zero vector (first: {})",
                missing.len(),
                vocab.name(first.0)
            );
        }
    }
}

/// Reads `drug_id<TAB>bitstring` lines. Names absent from `entities` are
/// skipped with a warning since they cannot appear in any pair.
pub fn load_fingerprints(path: &Path, bits: usize, entities: &Vocab) -> Result<FingerprintTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fingerprints(&text, path, bits, entities)
}

pub fn parse_fingerprints(text: &str, source: &Path, bits: usize, entities: &Vocab) -> Result<FingerprintTable> {
    let mut table = FingerprintTable::new(bits);
    let mut unknown = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.to_path_buf(),
            line: i + 1,
            message,
        };
        let (name, bitstring) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected drug_id<TAB>bitstring".into()))?;
        let bitstring = bitstring.trim();
        if bitstring.len() != bits {
            return Err(parse_err(format!(
                "bitstring has {} characters, expected {bits}",
                bitstring.len()
            )));
        }
        let row: Vec<bool> = bitstring
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(parse_err(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<_>>()?;
        match entities.get(name.trim()) {
            Some(id) => table.insert(EntityId(id), &row)?,
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        log::warn!(
            "{}: {unknown} fingerprint(s) name drugs absent from the graph and were skipped",
            source.display()
        );
    }
    Ok(table)
}
