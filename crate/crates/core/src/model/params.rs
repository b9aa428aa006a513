use super::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::EntityId;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// Target-side projection, `din x din`.
    pub w_i: Tensor,
    /// Source-side projection, `din x din`.
    pub w_j: Tensor,
    /// One row per relation, `R x din`.
    pub rel: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `B` basis matrices, each flattened `din x d` into one row.
    pub basis: Tensor,
    /// Relation-to-basis coefficients, `R x B`.
    pub coeffs: Tensor,
    pub w_self: Tensor,
}

impl LayerParams {
    pub fn input_width(&self) -> usize {
        self.w_self.rows()
    }

    pub fn output_width(&self) -> usize {
        self.w_self.cols()
    }
}

/// All trainable state. Attention has one parameter set when the mask is
/// shared across layers and one per layer otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub entity_embed: Tensor,
    pub attention: Vec<AttentionParams>,
    pub layers: Vec<LayerParams>,
    pub w_sub: Tensor,
    pub w_pred: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundAttention {
    pub w_i: Var,
    pub w_j: Var,
    pub rel: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLayer {
    pub basis: Var,
    pub coeffs: Var,
    pub w_self: Var,
    pub din: usize,
    pub dout: usize,
}

/// Every parameter except the entity table, recorded on one tape.
#[derive(Clone, Debug)]
pub struct SharedVars {
    pub attention: Vec<BoundAttention>,
    pub layers: Vec<BoundLayer>,
    pub w_sub: Var,
    pub w_pred: Var,
}

impl SharedVars {
    /// Vars in the same order as [`ModelParams::shared_tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for a in &self.attention {
            out.extend([a.w_i, a.w_j, a.rel]);
        }
        for l in &self.layers {
            out.extend([l.basis, l.coeffs, l.w_self]);
        }
        out.extend([self.w_sub, self.w_pred]);
        out
    }

    /// Inverse of [`SharedVars::vars`], using `params` for layer widths.
    pub fn from_vars(vars: &[Var], params: &ModelParams) -> Result<Self> {
        let na = params.attention.len();
        let nl = params.layers.len();
        if vars.len() != 3 * na + 3 * nl + 2 {
            return Err(Error::invalid("shared var count does not match the parameter layout"));
        }
        let attention = (0..na)
            .map(|i| BoundAttention {
                w_i: vars[3 * i],
                w_j: vars[3 * i + 1],
                rel: vars[3 * i + 2],
            })
            .collect();
        let base = 3 * na;
        let layers = params
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| BoundLayer {
                basis: vars[base + 3 * i],
                coeffs: vars[base + 3 * i + 1],
                w_self: vars[base + 3 * i + 2],
                din: l.input_width(),
                dout: l.output_width(),
            })
            .collect();
        let tail = base + 3 * nl;
        Ok(SharedVars {
            attention,
            layers,
            w_sub: vars[tail],
            w_pred: vars[tail + 1],
        })
    }
}

/// Gradients of one training example: entity-row gradients per bound
/// subgraph, plus the shared tensors in canonical order.
#[derive(Clone, Debug, Default)]
pub struct ExampleGrads {
    pub entity: Vec<(Vec<EntityId>, Tensor)>,
    pub shared: Vec<Tensor>,
    pub loss: f64,
}

impl ModelParams {
    /// Glorot-initialised parameters. `num_relations` counts every relation
    /// in the propagation graph; the decoder width comes from
    /// `config.num_classes`.
    pub fn init(config: &ModelConfig, num_entities: usize, num_relations: usize, seed: u64) -> Result<Self> {
        config.validate(num_relations)?;
        if config.num_classes == 0 {
            return Err(Error::Config(
                "model.num_classes must be set before initialisation".into(),
            ));
        }
        if num_entities == 0 {
            return Err(Error::invalid("cannot initialise an embedding table with no entities"));
        }
        let mut rng = crate::rng::seeded(seed, "init");
        let d = config.dim;
        let d0 = config.input_width();
        let entity_embed = Tensor::glorot(num_entities, d, num_entities, d, &mut rng);

        let attention_widths: Vec<usize> = if config.layer_independent_attention() {
            vec![d0]
        } else {
            (0..config.layers).map(|l| if l == 0 { d0 } else { d }).collect()
        };
        let attention = attention_widths
            .into_iter()
            .map(|w| AttentionParams {
                w_i: Tensor::glorot(w, w, w, w, &mut rng),
                w_j: Tensor::glorot(w, w, w, w, &mut rng),
                rel: Tensor::glorot(num_relations, w, num_relations, w, &mut rng),
            })
            .collect();

        let layers = (0..config.layers)
            .map(|l| {
                let din = if l == 0 { d0 } else { d };
                LayerParams {
                    basis: Tensor::glorot(config.bases, din * d, din, d, &mut rng),
                    coeffs: Tensor::glorot(num_relations, config.bases, num_relations, config.bases, &mut rng),
                    w_self: Tensor::glorot(din, d, din, d, &mut rng),
                }
            })
            .collect();

        let width = config.pair_width();
        Ok(ModelParams {
            entity_embed,
            attention,
            layers,
            w_sub: Tensor::glorot(d, d, d, d, &mut rng),
            w_pred: Tensor::glorot(width, config.num_classes, width, config.num_classes, &mut rng),
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_embed.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.layers[0].coeffs.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.w_pred.cols()
    }

    pub fn shared_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for a in &self.attention {
            out.extend([&a.w_i, &a.w_j, &a.rel]);
        }
        for l in &self.layers {
            out.extend([&l.basis, &l.coeffs, &l.w_self]);
        }
        out.extend([&self.w_sub, &self.w_pred]);
        out
    }

    /// Every tensor, entity table first, with a stable name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("entity_embed".to_string(), &self.entity_embed)];
        for (i, a) in self.attention.iter().enumerate() {
            out.push((format!("attention.{i}.w_i"), &a.w_i));
            out.push((format!("attention.{i}.w_j"), &a.w_j));
            out.push((format!("attention.{i}.rel"), &a.rel));
        }
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer.{i}.basis"), &l.basis));
            out.push((format!("layer.{i}.coeffs"), &l.coeffs));
            out.push((format!("layer.{i}.w_self"), &l.w_self));
        }
        out.push(("w_sub".into(), &self.w_sub));
        out.push(("w_pred".into(), &self.w_pred));
        out
    }

    /// Rebuilds parameters from [`ModelParams::named_tensors`] output.
    pub fn from_named(mut tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut take = |name: &str| -> Result<Tensor> {
            let pos = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
            Ok(tensors.remove(pos).1)
        };
        let entity_embed = take("entity_embed")?;
        let mut attention = Vec::new();
        let mut i = 0;
        while let Ok(w_i) = take(&format!("attention.{i}.w_i")) {
            attention.push(AttentionParams {
                w_i,
                w_j: take(&format!("attention.{i}.w_j"))?,
                rel: take(&format!("attention.{i}.rel"))?,
            });
            i += 1;
        }
        let mut layers = Vec::new();
        let mut i = 0;
        while let Ok(basis) = take(&format!("layer.{i}.basis")) {
            layers.push(LayerParams {
                basis,
                coeffs: take(&format!("layer.{i}.coeffs"))?,
                w_self: take(&format!("layer.{i}.w_self"))?,
            });
            i += 1;
        }
        let w_sub = take("w_sub")?;
        let w_pred = take("w_pred")?;
        if let Some((name, _)) = tensors.first() {
            return Err(Error::Checkpoint(format!("unexpected tensor {name:?}")));
        }
        if attention.is_empty() || layers.is_empty() {
            return Err(Error::Checkpoint("checkpoint has no attention or layer tensors".into()));
        }
        Ok(ModelParams {
            entity_embed,
            attention,
            layers,
            w_sub,
            w_pred,
        })
    }

    /// Checks tensor shapes against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let d = config.dim;
        let d0 = config.input_width();
        let r = self.num_relations();
        let bad = |what: String| Err(Error::Checkpoint(format!("shape mismatch: {what}")));
        if self.entity_embed.cols() != d {
            return bad(format!(
                "entity_embed has {} columns, expected {d}",
                self.entity_embed.cols()
            ));
        }
        let want_attn = if config.layer_independent_attention() {
            1
        } else {
            config.layers
        };
        if self.attention.len() != want_attn || self.layers.len() != config.layers {
            return bad(format!(
                "{} attention sets / {} layers, expected {want_attn} / {}",
                self.attention.len(),
                self.layers.len(),
                config.layers
            ));
        }
        for (l, a) in self.attention.iter().enumerate() {
            let w = if l == 0 { d0 } else { d };
            if a.w_i.shape() != [w, w] || a.w_j.shape() != [w, w] || a.rel.shape() != [r, w] {
                return bad(format!("attention set {l}"));
            }
        }
        for (l, p) in self.layers.iter().enumerate() {
            let din = if l == 0 { d0 } else { d };
            if p.basis.shape() != [config.bases, din * d]
                || p.coeffs.shape() != [r, config.bases]
                || p.w_self.shape() != [din, d]
            {
                return bad(format!("layer {l}"));
            }
        }
        if self.w_sub.shape() != [d, d] {
            return bad("w_sub".into());
        }
        if self.w_pred.rows() != config.pair_width() {
            return bad(format!(
                "w_pred has {} rows, expected {}",
                self.w_pred.rows(),
                config.pair_width()
            ));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.rows(), t.cols());
        ModelParams {
            entity_embed: z(&self.entity_embed),
            attention: self
                .attention
                .iter()
                .map(|a| AttentionParams {
                    w_i: z(&a.w_i),
                    w_j: z(&a.w_j),
                    rel: z(&a.rel),
                })
                .collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    basis: z(&l.basis),
                    coeffs: z(&l.coeffs),
                    w_self: z(&l.w_self),
                })
                .collect(),
            w_sub: z(&self.w_sub),
            w_pred: z(&self.w_pred),
        }
    }

    /// Mutable views in the order entity table, then shared tensors.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.entity_embed];
        for a in &mut self.attention {
            out.extend([&mut a.w_i, &mut a.w_j, &mut a.rel]);
        }
        for l in &mut self.layers {
            out.extend([&mut l.basis, &mut l.coeffs, &mut l.w_self]);
        }
        out.extend([&mut self.w_sub, &mut self.w_pred]);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.entity_embed];
        out.extend(self.shared_tensors());
        out
    }

    /// Records every shared tensor on `tape`, as parameters when
    /// `trainable`, otherwise as constants.
    pub fn bind_shared(&self, tape: &mut Tape, trainable: bool) -> SharedVars {
        let vars: Vec<Var> = self
            .shared_tensors()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        SharedVars::from_vars(&vars, self).expect("layout matches by construction")
    }

    /// The embedding rows for `nodes` as one leaf.
    pub fn bind_entities(&self, tape: &mut Tape, nodes: &[EntityId], trainable: bool) -> Result<Var> {
        let d = self.entity_embed.cols();
        let mut rows = Tensor::zeros(nodes.len(), d);
        for (i, e) in nodes.iter().enumerate() {
            if e.index() >= self.entity_embed.rows() {
                return Err(Error::OutOfRange {
                    kind: "entity",
                    id: e.index(),
                    count: self.entity_embed.rows(),
                });
            }
            rows.row_mut(i).copy_from_slice(self.entity_embed.row(e.index()));
        }
        Ok(if trainable {
            tape.param(rows)
        } else {
            tape.constant(rows)
        })
    }

    /// Adds one example's gradients into `self`, used as a gradient buffer.
    pub fn accumulate(&mut self, grads: &ExampleGrads) -> Result<()> {
        for (nodes, g) in &grads.entity {
            for (i, e) in nodes.iter().enumerate() {
                for (o, x) in self.entity_embed.row_mut(e.index()).iter_mut().zip(g.row(i)) {
                    *o += x;
                }
            }
        }
        let mut targets = self.tensors_mut();
        let shared = &mut targets[1..];
        if shared.len() != grads.shared.len() {
            return Err(Error::invalid("gradient layout does not match the parameters"));
        }
        for (t, g) in shared.iter_mut().zip(&grads.shared) {
            t.add_assign(g)?;
        }
        Ok(())
    }
}
