//! The pair encoder: position-augmented node features, a single
//! relation-aware attention pass that prunes weak edges, basis-decomposed
//! relational message passing, layer aggregation, and a linear decoder.

mod fingerprint;
mod layers;
mod params;
mod transe;

pub use fingerprint::{load_fingerprints, parse_fingerprints, FingerprintTable};
pub use layers::{
    attention_mask, build_node_features, compute_attention, decode, forward, forward_on_tape, node_features,
    pair_representation, propagate_layer, readout_subgraph, relation_matrix, relation_matrix_on_tape, AttentionMask,
    ForwardTrace, Mode,
};
pub use params::{AttentionParams, BoundAttention, BoundLayer, ExampleGrads, LayerParams, ModelParams, SharedVars};
pub use transe::{transe_pretrain, transe_pretrain_traced, TranseConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Switches for the five ablation variants. All off is the full model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Propagate over training interactions only, without the KG.
    pub no_kg: bool,
    /// No attention: every edge carries weight 1.
    pub no_sum: bool,
    /// Drop the subgraph readout from the pair representation.
    pub no_sf: bool,
    /// Drop drug fingerprints from the pair representation.
    pub no_cf: bool,
    /// Recompute attention from each layer's input instead of reusing the
    /// first-layer mask.
    pub no_lia: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 5] = ["no-kg", "no-sum", "no-sf", "no-cf", "no-lia"];

    pub fn set(&mut self, name: &str) -> Result<()> {
        match name {
            "no-kg" => self.no_kg = true,
            "no-sum" => self.no_sum = true,
            "no-sf" => self.no_sf = true,
            "no-cf" => self.no_cf = true,
            "no-lia" => self.no_lia = true,
            other => {
                return Err(Error::invalid(format!(
                    "unknown ablation {other:?}; valid: {}",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn active(&self) -> Vec<&'static str> {
        let flags = [self.no_kg, self.no_sum, self.no_sf, self.no_cf, self.no_lia];
        Self::NAMES
            .iter()
            .zip(flags)
            .filter_map(|(n, on)| on.then_some(*n))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hop budget for subgraph extraction.
    pub k: u32,
    /// Hidden width `d`.
    pub dim: usize,
    pub layers: usize,
    pub bases: usize,
    /// Pruning threshold: an edge is kept iff its score is `> gamma`.
    pub gamma: f64,
    pub dropout: f64,
    pub fingerprint_bits: usize,
    /// Interaction classes (decoder outputs). Zero means "take it from the
    /// dataset".
    pub num_classes: usize,
    pub transe: TranseConfig,
    #[serde(skip)]
    pub ablation: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 2,
            dim: 32,
            layers: 2,
            bases: 8,
            gamma: 0.0,
            dropout: 0.3,
            fingerprint_bits: 1024,
            num_classes: 0,
            transe: TranseConfig::default(),
            ablation: Ablations::default(),
        }
    }
}

impl ModelConfig {
    /// Lowers `bases` to the relation count when it exceeds it.
    pub fn clamp_bases(&mut self, num_relations: usize) {
        if self.bases > num_relations && num_relations > 0 {
            log::warn!(
                "model.bases = {} exceeds the {num_relations} relations of the graph; using {num_relations}",
                self.bases
            );
            self.bases = num_relations;
        }
    }

    pub fn validate(&self, num_relations: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.k < 1 {
            return fail("model.k must be >= 1".into());
        }
        if self.dim < 1 {
            return fail("model.dim must be >= 1".into());
        }
        if self.layers < 1 {
            return fail("model.layers must be >= 1".into());
        }
        if self.bases < 1 || self.bases > num_relations.max(1) {
            return fail(format!(
                "model.bases = {} must lie in [1, {num_relations}] (number of relations)",
                self.bases
            ));
        }
        // gamma >= 1 prunes every edge, which is legal.
        if !self.gamma.is_finite() || self.gamma < -1.0 {
            return fail(format!("model.gamma = {} must be >= -1", self.gamma));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("model.dropout = {} must be in [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Width of the first-layer node features, `d + 2(k + 1)`.
    pub fn input_width(&self) -> usize {
        self.dim + 2 * (self.k as usize + 1)
    }

    pub fn use_kg(&self) -> bool {
        !self.ablation.no_kg
    }

    pub fn use_summarization(&self) -> bool {
        !self.ablation.no_sum
    }

    pub fn use_subgraph_feature(&self) -> bool {
        !self.ablation.no_sf
    }

    pub fn use_fingerprint(&self) -> bool {
        !self.ablation.no_cf
    }

    pub fn layer_independent_attention(&self) -> bool {
        !self.ablation.no_lia
    }

    /// Width of the per-drug block: layer-aggregated states plus the
    /// fingerprint when enabled.
    pub fn drug_width(&self) -> usize {
        self.layers * self.dim
            + if self.use_fingerprint() {
                self.fingerprint_bits
            } else {
                0
            }
    }

    /// Width of the pair representation fed to the decoder.
    pub fn pair_width(&self) -> usize {
        2 * self.drug_width()
            + if self.use_subgraph_feature() {
                self.layers * self.dim
            } else {
                0
            }
    }
}
