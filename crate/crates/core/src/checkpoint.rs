//! Binary checkpoint container.
//!
//! Layout: magic `DDIKGCKP`, a little-endian `u32` format version, a
//! length-prefixed JSON metadata block, length-prefixed tensor records
//! (name, `u64` rows, `u64` cols, `f64` LE data) and a SHA-256 of
//! everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{AdamConfig, AdamState, Tensor};

pub const MAGIC: &[u8; 8] = b"DDIKGCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub run: RunConfig,
    /// Effective model settings (class count filled in). Its ablation
    /// switches are restored from `run` on load.
    pub model: ModelConfig,
    pub best_epoch: usize,
    pub adam_step: u64,
    pub adam_config: AdamConfig,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
    pub optimizer: AdamState,
}

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u64(buf, name.len() as u64);
    buf.extend_from_slice(name.as_bytes());
    put_u64(buf, t.rows() as u64);
    put_u64(buf, t.cols() as u64);
    for x in t.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let n = self.len()?;
        let name = String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rows = self.len()?;
        let cols = self.len()?;
        let count = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
        let data = self
            .take(count)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Tensor::from_vec(rows, cols, data)?))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        put_u64(&mut buf, meta.len() as u64);
        buf.extend_from_slice(&meta);

        let named = self.params.named_tensors();
        if self.optimizer.m.len() != named.len() || self.optimizer.s.len() != named.len() {
            return Err(Error::Checkpoint(
                "optimizer state does not match the parameters".into(),
            ));
        }
        put_u64(&mut buf, 3 * named.len() as u64);
        for (name, t) in &named {
            put_tensor(&mut buf, name, t);
        }
        for (prefix, moments) in [("adam.m.", &self.optimizer.m), ("adam.s.", &self.optimizer.s)] {
            for ((name, _), t) in named.iter().zip(moments) {
                put_tensor(&mut buf, &format!("{prefix}{name}"), t);
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint(
                "checksum mismatch (truncated or corrupted file)".into(),
            ));
        }

        let mut r = Reader { bytes: body, pos: 12 };
        let meta_len = r.len()?;
        let mut meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        meta.model.ablation = meta.run.ablation;
        let count = r.len()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }

        let (m_named, rest): (Vec<_>, Vec<_>) = tensors.into_iter().partition(|(n, _)| n.starts_with("adam.m."));
        let (s_named, p_named): (Vec<_>, Vec<_>) = rest.into_iter().partition(|(n, _)| n.starts_with("adam.s."));
        let params = ModelParams::from_named(p_named)?;
        params.check_shapes(&meta.model)?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let moments = |prefix: &str, mut list: Vec<(String, Tensor)>| -> Result<Vec<Tensor>> {
            names
                .iter()
                .map(|n| {
                    let key = format!("{prefix}{n}");
                    let pos = list
                        .iter()
                        .position(|(k, _)| *k == key)
                        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key:?}")))?;
                    Ok(list.swap_remove(pos).1)
                })
                .collect()
        };
        let optimizer = AdamState {
            config: meta.adam_config,
            step: meta.adam_step,
            m: moments("adam.m.", m_named)?,
            s: moments("adam.s.", s_named)?,
        };
        for ((p, m), s) in params.tensors().iter().zip(&optimizer.m).zip(&optimizer.s) {
            if p.shape() != m.shape() || p.shape() != s.shape() {
                return Err(Error::Checkpoint("optimizer moment shape mismatch".into()));
            }
        }
        Ok(Checkpoint {
            meta,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut model = ModelConfig {
            dim: 4,
            bases: 2,
            num_classes: 3,
            ..ModelConfig::default()
        };
        model.fingerprint_bits = 8;
        let params = ModelParams::init(&model, 6, 5, 3).unwrap();
        let mut optimizer = AdamState::new(&params.tensors(), AdamConfig::default());
        optimizer.step = 7;
        optimizer.m[0].set(0, 0, 0.25);
        optimizer.s[1].set(0, 0, 1e-300);
        Checkpoint {
            meta: CheckpointMeta {
                run: RunConfig::default(),
                model,
                best_epoch: 4,
                adam_step: 7,
                adam_config: AdamConfig::default(),
                entities: (0..6).map(|i| format!("e{i}")).collect(),
                relations: (0..5).map(|i| format!("r{i}")).collect(),
            },
            params,
            optimizer,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncation_and_version_are_refused() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let mut v2 = bytes.clone();
        v2[8] = 2;
        let err = Checkpoint::from_bytes(&v2).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
        let mut flipped = bytes;
        flipped[40] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped).is_err());
    }
}
