use std::collections::BTreeMap;

use rand::RngCore;

use super::{AttentionParams, BoundAttention, BoundLayer, FingerprintTable, ModelConfig, ModelParams, SharedVars};
use crate::error::{Error, Result, StageExt};
use crate::graph::{EnclosingSubgraph, RelationId};
use crate::tensor::{Axis, Tape, Tensor, Var};

/// Train mode applies dropout with the given stream; eval is deterministic.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Eval,
}

/// Per-edge attention result, aligned with `EnclosingSubgraph::edges`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    /// `tanh` score before thresholding.
    pub raw: Vec<f64>,
    /// Edge weight: `raw` if kept, exactly 0 if pruned.
    pub alpha: Vec<f64>,
    pub pruned: Vec<bool>,
}

impl AttentionMask {
    /// Weight 1 on every edge, used when summarization is off.
    pub fn ones(num_edges: usize) -> Self {
        AttentionMask {
            raw: vec![1.0; num_edges],
            alpha: vec![1.0; num_edges],
            pruned: vec![false; num_edges],
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn num_kept(&self) -> usize {
        self.pruned.iter().filter(|p| !**p).count()
    }

    fn from_tape(tape: &Tape, raw: Var, alpha: Var, gamma: f64) -> Self {
        let raw: Vec<f64> = tape.value(raw).data().to_vec();
        let pruned = raw.iter().map(|&r| !(r > gamma)).collect();
        AttentionMask {
            alpha: tape.value(alpha).data().to_vec(),
            raw,
            pruned,
        }
    }
}

/// Values recorded by one forward pass.
pub struct ForwardTrace {
    pub logits: Var,
    /// One mask when attention is shared across layers, one per layer
    /// otherwise, none under the no-summarization ablation.
    pub masks: Vec<AttentionMask>,
    /// `H^1 .. H^L`.
    pub states: Vec<Var>,
}

fn position_block(sub: &EnclosingSubgraph) -> Tensor {
    let k = sub.k as usize;
    let mut t = Tensor::zeros(sub.num_nodes(), 2 * (k + 1));
    for i in 0..sub.num_nodes() {
        t.set(i, sub.dist_u[i].min(sub.k) as usize, 1.0);
        t.set(i, k + 1 + sub.dist_v[i].min(sub.k) as usize, 1.0);
    }
    t
}

/// `H^0` on the tape: embedding rows (one per local node) followed by the
/// two distance one-hots.
pub fn build_node_features(tape: &mut Tape, sub: &EnclosingSubgraph, entity_rows: Var) -> Result<Var> {
    if tape.shape(entity_rows)[0] != sub.num_nodes() {
        return Err(Error::Shape {
            op: "build_node_features",
            left: tape.shape(entity_rows),
            right: [sub.num_nodes(), 2 * (sub.k as usize + 1)],
        });
    }
    let pos = tape.constant(position_block(sub));
    tape.concat(&[entity_rows, pos], Axis::Cols)
}

/// Plain-tensor `H^0` built from the full embedding table.
pub fn node_features(sub: &EnclosingSubgraph, entity_embed: &Tensor) -> Result<Tensor> {
    let mut rows = Tensor::zeros(sub.num_nodes(), entity_embed.cols());
    for (i, e) in sub.nodes.iter().enumerate() {
        if e.index() >= entity_embed.rows() {
            return Err(Error::OutOfRange {
                kind: "entity",
                id: e.index(),
                count: entity_embed.rows(),
            });
        }
        rows.row_mut(i).copy_from_slice(entity_embed.row(e.index()));
    }
    let mut tape = Tape::new();
    let rows = tape.constant(rows);
    let h0 = build_node_features(&mut tape, sub, rows)?;
    Ok(tape.value(h0).clone())
}

/// Edge scores for every local edge `(i, r, j)`:
/// `tanh((H_j W^J) . (H_i W^I + rel[r]) / sqrt(width))`, kept iff `> gamma`.
/// Returns the `E x 1` weight column and the mask.
pub fn compute_attention(
    tape: &mut Tape,
    sub: &EnclosingSubgraph,
    h: Var,
    attn: &BoundAttention,
    gamma: f64,
) -> Result<(Var, AttentionMask)> {
    let width = tape.shape(attn.w_i)[0];
    let heads: Vec<usize> = sub.edges.iter().map(|e| e.head).collect();
    let tails: Vec<usize> = sub.edges.iter().map(|e| e.tail).collect();
    let rels: Vec<usize> = sub.edges.iter().map(|e| e.relation.index()).collect();

    let query = tape.matmul(h, attn.w_i)?;
    let key = tape.matmul(h, attn.w_j)?;
    let q = tape.gather_rows(query, &heads)?;
    let r = tape.gather_rows(attn.rel, &rels)?;
    let q = tape.add(q, r)?;
    let kv = tape.gather_rows(key, &tails)?;
    let s = tape.row_dot(kv, q)?;
    let s = tape.scale(s, 1.0 / (width as f64).sqrt())?;
    let raw = tape.tanh(s)?;
    let alpha = tape.threshold(raw, gamma)?;
    let mask = AttentionMask::from_tape(tape, raw, alpha, gamma);
    Ok((alpha, mask))
}

/// Plain-tensor attention mask from node features `h`.
pub fn attention_mask(
    sub: &EnclosingSubgraph,
    h: &Tensor,
    attn: &AttentionParams,
    gamma: f64,
) -> Result<AttentionMask> {
    let mut tape = Tape::new();
    let bound = BoundAttention {
        w_i: tape.constant(attn.w_i.clone()),
        w_j: tape.constant(attn.w_j.clone()),
        rel: tape.constant(attn.rel.clone()),
    };
    let h = tape.constant(h.clone());
    Ok(compute_attention(&mut tape, sub, h, &bound, gamma)?.1)
}

/// `W_r = sum_b a_rb V_b` on the tape.
pub fn relation_matrix_on_tape(tape: &mut Tape, layer: &BoundLayer, r: RelationId) -> Result<Var> {
    let coeff = tape.gather_rows(layer.coeffs, &[r.index()])?;
    let flat = tape.matmul(coeff, layer.basis)?;
    tape.reshape(flat, layer.din, layer.dout)
}

pub fn relation_matrix(params: &ModelParams, layer: usize, r: RelationId) -> Result<Tensor> {
    let p = params.layers.get(layer).ok_or(Error::OutOfRange {
        kind: "layer",
        id: layer,
        count: params.layers.len(),
    })?;
    let mut tape = Tape::new();
    let bound = BoundLayer {
        basis: tape.constant(p.basis.clone()),
        coeffs: tape.constant(p.coeffs.clone()),
        w_self: tape.constant(p.w_self.clone()),
        din: p.input_width(),
        dout: p.output_width(),
    };
    let w = relation_matrix_on_tape(&mut tape, &bound, r)?;
    Ok(tape.value(w).clone())
}

/// One relational layer: `dropout(ReLU(H W_self + sum_in alpha * H_u W_r))`.
/// Edges with zero weight are skipped; they contribute nothing.
pub fn propagate_layer(
    tape: &mut Tape,
    sub: &EnclosingSubgraph,
    h_prev: Var,
    alpha: Var,
    layer: &BoundLayer,
    dropout: Option<(f64, &mut dyn RngCore)>,
) -> Result<Var> {
    if tape.shape(alpha) != [sub.num_edges(), 1] {
        return Err(Error::Shape {
            op: "propagate_layer",
            left: tape.shape(alpha),
            right: [sub.num_edges(), 1],
        });
    }
    let mut acc = tape.matmul(h_prev, layer.w_self)?;

    let weights = tape.value(alpha).data();
    let mut by_relation: BTreeMap<RelationId, Vec<usize>> = BTreeMap::new();
    for (e, edge) in sub.edges.iter().enumerate() {
        if weights[e] != 0.0 {
            by_relation.entry(edge.relation).or_default().push(e);
        }
    }
    for (r, edges) in by_relation {
        let heads: Vec<usize> = edges.iter().map(|&e| sub.edges[e].head).collect();
        let tails: Vec<usize> = edges.iter().map(|&e| sub.edges[e].tail).collect();
        let w_r = relation_matrix_on_tape(tape, layer, r)?;
        let x = tape.gather_rows(h_prev, &heads)?;
        let a = tape.gather_rows(alpha, &edges)?;
        let x = tape.mul_col(x, a)?;
        let m = tape.matmul(x, w_r)?;
        acc = tape.scatter_add_rows(acc, &tails, m)?;
    }
    let h = tape.relu(acc)?;
    match dropout {
        Some((p, rng)) if p > 0.0 => tape.dropout(h, p, rng),
        _ => Ok(h),
    }
}

/// Per layer, the mean over nodes of `H^l W_sub`; concatenated over layers.
pub fn readout_subgraph(tape: &mut Tape, states: &[Var], w_sub: Var) -> Result<Var> {
    let parts = states
        .iter()
        .map(|&h| {
            let p = tape.matmul(h, w_sub)?;
            tape.mean_rows(p)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&parts, Axis::Cols)
}

/// `[h_u, h_v, h_G]` where `h_x` is the layer-aggregated center state,
/// optionally followed by its fingerprint.
pub fn pair_representation(
    tape: &mut Tape,
    states: &[Var],
    fingerprints: Option<(&Tensor, &Tensor)>,
    readout: Option<Var>,
) -> Result<Var> {
    let mut blocks = Vec::new();
    for (center, fp) in [(0, fingerprints.map(|f| f.0)), (1, fingerprints.map(|f| f.1))] {
        for &h in states {
            blocks.push(tape.gather_rows(h, &[center])?);
        }
        if let Some(fp) = fp {
            if fp.rows() != 1 {
                return Err(Error::invalid("fingerprint must be a single row"));
            }
            blocks.push(tape.constant(fp.clone()));
        }
    }
    blocks.extend(readout);
    tape.concat(&blocks, Axis::Cols)
}

/// Linear decoder without bias.
pub fn decode(tape: &mut Tape, h_uv: Var, w_pred: Var) -> Result<Var> {
    tape.matmul(h_uv, w_pred)
}

/// Full encoder-decoder on an existing tape.
#[allow(clippy::too_many_arguments)]
pub fn forward_on_tape(
    tape: &mut Tape,
    shared: &SharedVars,
    entity_rows: Var,
    sub: &EnclosingSubgraph,
    config: &ModelConfig,
    fingerprints: Option<&FingerprintTable>,
    mut mode: Mode<'_>,
) -> Result<ForwardTrace> {
    if sub.k != config.k {
        return Err(Error::invalid(format!(
            "subgraph extracted with k = {}, model expects k = {}",
            sub.k, config.k
        )));
    }
    let h0 = build_node_features(tape, sub, entity_rows).stage("node features")?;

    let mut masks = Vec::new();
    let shared_alpha = if !config.use_summarization() {
        Some(tape.constant(Tensor::filled(sub.num_edges(), 1, 1.0)))
    } else if config.layer_independent_attention() {
        let (alpha, mask) = compute_attention(tape, sub, h0, &shared.attention[0], config.gamma).stage("attention")?;
        masks.push(mask);
        Some(alpha)
    } else {
        None
    };

    let mut states = Vec::with_capacity(shared.layers.len());
    let mut h = h0;
    for (l, layer) in shared.layers.iter().enumerate() {
        let alpha = match shared_alpha {
            Some(a) => a,
            None => {
                let attn = shared
                    .attention
                    .get(l)
                    .ok_or_else(|| Error::invalid("missing per-layer attention parameters"))?;
                let (alpha, mask) = compute_attention(tape, sub, h, attn, config.gamma).stage("attention")?;
                masks.push(mask);
                alpha
            }
        };
        let dropout = match &mut mode {
            Mode::Train(rng) => Some((config.dropout, &mut **rng as &mut dyn RngCore)),
            Mode::Eval => None,
        };
        h = propagate_layer(tape, sub, h, alpha, layer, dropout).stage(&format!("layer {l}"))?;
        states.push(h);
    }

    let readout = if config.use_subgraph_feature() {
        Some(readout_subgraph(tape, &states, shared.w_sub).stage("readout")?)
    } else {
        None
    };
    let fps = if config.use_fingerprint() {
        let (u, v) = sub.center();
        let (fu, fv) = match fingerprints {
            Some(t) => {
                if t.bits() != config.fingerprint_bits {
                    return Err(Error::invalid(format!(
                        "fingerprint table has {} bits, model expects {}",
                        t.bits(),
                        config.fingerprint_bits
                    )));
                }
                (t.row(u), t.row(v))
            }
            None => (
                Tensor::zeros(1, config.fingerprint_bits),
                Tensor::zeros(1, config.fingerprint_bits),
            ),
        };
        Some((fu, fv))
    } else {
        None
    };
    let h_uv =
        pair_representation(tape, &states, fps.as_ref().map(|(a, b)| (a, b)), readout).stage("pair representation")?;
    let logits = decode(tape, h_uv, shared.w_pred).stage("decode")?;
    Ok(ForwardTrace { logits, masks, states })
}

/// Inference forward pass; returns `1 x R` logits and the attention masks.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    sub: &EnclosingSubgraph,
    fingerprints: Option<&FingerprintTable>,
    mode: Mode<'_>,
) -> Result<(Tensor, Vec<AttentionMask>)> {
    let mut tape = Tape::new();
    let shared = params.bind_shared(&mut tape, false);
    let rows = params.bind_entities(&mut tape, &sub.nodes, false)?;
    let trace = forward_on_tape(&mut tape, &shared, rows, sub, config, fingerprints, mode)?;
    Ok((tape.value(trace.logits).clone(), trace.masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EntityId, LocalEdge};
    use crate::model::LayerParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Five nodes; local edges 0->2, 2->1, 1->3, 3->0, 4->1, 0->1.
    fn fixture(k: u32) -> EnclosingSubgraph {
        let e = |h, r, t| LocalEdge {
            head: h,
            relation: RelationId(r),
            tail: t,
        };
        EnclosingSubgraph {
            k,
            nodes: (0..5).map(EntityId).collect(),
            dist_u: vec![0, 1, 1, 1, 2],
            dist_v: vec![1, 0, 1, 1, 1],
            edges: vec![e(0, 0, 2), e(2, 1, 1), e(1, 2, 3), e(3, 0, 0), e(4, 1, 1), e(0, 2, 1)],
        }
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            dim: 4,
            bases: 2,
            fingerprint_bits: 3,
            num_classes: 3,
            gamma: -1.0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn position_bits_at_expected_offsets() {
        let sub = fixture(2);
        let h0 = node_features(&sub, &Tensor::zeros(5, 4)).unwrap();
        assert_eq!(h0.cols(), 4 + 6);
        // Node 4 sits at (2, 1).
        assert_eq!(h0.row(4), &[0., 0., 0., 0., 0., 0., 1., 0., 1., 0.]);
        // Center u: e_0 then e_1.
        assert_eq!(&h0.row(0)[4..], &[1., 0., 0., 0., 1., 0.]);
    }

    #[test]
    fn attention_extremes() {
        let sub = fixture(2);
        let p = ModelParams::init(&small_config(), 5, 3, 0).unwrap();
        let h0 = node_features(&sub, &p.entity_embed).unwrap();
        let all = attention_mask(&sub, &h0, &p.attention[0], -1.0).unwrap();
        assert_eq!(all.num_kept(), 6);
        assert_eq!(all.alpha, all.raw);
        let none = attention_mask(&sub, &h0, &p.attention[0], 1.0).unwrap();
        assert_eq!(none.num_kept(), 0);
        assert!(none.alpha.iter().all(|&a| a == 0.0));

        let zero = AttentionParams {
            w_i: Tensor::zeros(10, 10),
            w_j: Tensor::zeros(10, 10),
            rel: Tensor::zeros(3, 10),
        };
        let m = attention_mask(&sub, &h0, &zero, 0.0).unwrap();
        assert!(m.pruned.iter().all(|&x| x));
    }

    #[test]
    fn one_hot_coefficients_select_a_basis() {
        let mut p = ModelParams::init(&small_config(), 5, 3, 0).unwrap();
        p.layers[0].coeffs = Tensor::from_vec(3, 2, vec![0., 1., 1., 0., 0., 1.]).unwrap();
        let w = relation_matrix(&p, 0, RelationId(0)).unwrap();
        let v1 = Tensor::from_vec(10, 4, p.layers[0].basis.row(1).to_vec()).unwrap();
        assert_eq!(w, v1);
        assert_eq!(w, relation_matrix(&p, 0, RelationId(2)).unwrap());
    }

    fn layer_fixture() -> (Tape, Var, BoundLayer, LayerParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lp = LayerParams {
            basis: Tensor::uniform(2, 3 * 2, 1.0, &mut rng),
            coeffs: Tensor::uniform(3, 2, 1.0, &mut rng),
            w_self: Tensor::uniform(3, 2, 1.0, &mut rng),
        };
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::uniform(5, 3, 1.0, &mut rng));
        let bl = BoundLayer {
            basis: tape.constant(lp.basis.clone()),
            coeffs: tape.constant(lp.coeffs.clone()),
            w_self: tape.constant(lp.w_self.clone()),
            din: 3,
            dout: 2,
        };
        (tape, h, bl, lp)
    }

    #[test]
    fn pruned_everywhere_leaves_self_term() {
        let sub = fixture(2);
        let (mut tape, h, bl, lp) = layer_fixture();
        let alpha = tape.constant(Tensor::zeros(6, 1));
        let out = propagate_layer(&mut tape, &sub, h, alpha, &bl, None).unwrap();
        let mut expect = tape.value(h).matmul(&lp.w_self).unwrap();
        expect.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        assert_eq!(tape.value(out), &expect);
    }

    #[test]
    fn message_is_linear_in_alpha() {
        // Only edge 0 (0 -> 2, relation 0) is active.
        let sub = fixture(2);
        let pre = |scale: f64| {
            let (mut tape, h, bl, _) = layer_fixture();
            let mut a = Tensor::zeros(6, 1);
            a.set(0, 0, scale);
            let alpha = tape.constant(a);
            // Zero the self term so the output is the message alone.
            let w_self = tape.constant(Tensor::zeros(3, 2));
            let bl = BoundLayer { w_self, ..bl };
            let out = propagate_layer(&mut tape, &sub, h, alpha, &bl, None).unwrap();
            let w0 = relation_matrix_on_tape(&mut tape, &bl, RelationId(0)).unwrap();
            let hu = Tensor::row_vector(tape.value(h).row(0).to_vec());
            let msg = hu.matmul(tape.value(w0)).unwrap();
            (tape.value(out).row(2).to_vec(), msg)
        };
        let (one, msg) = pre(1.0);
        for (o, m) in one.iter().zip(msg.data()) {
            assert!((o - m.max(0.0)).abs() < 1e-15);
        }
        let (two, _) = pre(2.0);
        for (a, b) in one.iter().zip(&two) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn readout_of_identical_rows_is_the_projection() {
        let mut tape = Tape::new();
        let row = [0.5, -1.0, 2.0];
        let h = tape.constant(Tensor::from_vec(4, 3, row.repeat(4)).unwrap());
        let w = tape.constant(Tensor::identity(3));
        let r = readout_subgraph(&mut tape, &[h, h], w).unwrap();
        assert_eq!(tape.value(r).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn decoder_is_linear_without_bias() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = tape.constant(Tensor::uniform(4, 3, 1.0, &mut rng));
        let zero = tape.constant(Tensor::zeros(1, 4));
        let z = decode(&mut tape, zero, w).unwrap();
        assert!(tape.value(z).data().iter().all(|&x| x == 0.0));
        let x = tape.constant(Tensor::uniform(1, 4, 1.0, &mut rng));
        let x2 = tape.scale(x, 2.0).unwrap();
        let (a, b) = (decode(&mut tape, x, w).unwrap(), decode(&mut tape, x2, w).unwrap());
        for (p, q) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            assert!((2.0 * p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn widths_follow_flags() {
        let mut c = small_config();
        let sub = fixture(2);
        let p = ModelParams::init(&c, 5, 3, 2).unwrap();
        let (logits, masks) = forward(&p, &c, &sub, None, Mode::Eval).unwrap();
        assert_eq!(logits.shape(), [1, 3]);
        assert_eq!(masks.len(), 1);

        c.ablation.no_cf = true;
        c.ablation.no_sf = true;
        let p = ModelParams::init(&c, 5, 3, 2).unwrap();
        let mut tape = Tape::new();
        let shared = p.bind_shared(&mut tape, false);
        let rows = p.bind_entities(&mut tape, &sub.nodes, false).unwrap();
        let tr = forward_on_tape(&mut tape, &shared, rows, &sub, &c, None, Mode::Eval).unwrap();
        let states = tr.states.clone();
        let h_uv = pair_representation(&mut tape, &states, None, None).unwrap();
        assert_eq!(tape.shape(h_uv), [1, 16]);
    }

    #[test]
    fn swapping_centers_swaps_blocks() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_vec(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let fu = Tensor::row_vector(vec![9.0]);
        let fv = Tensor::row_vector(vec![8.0]);
        let a = pair_representation(&mut tape, &[h], Some((&fu, &fv)), None).unwrap();
        assert_eq!(tape.value(a).data(), &[1., 2., 9., 3., 4., 8.]);
    }

    #[test]
    fn no_sum_uses_unit_weights_and_differs_from_gamma_minus_one() {
        let sub = fixture(2);
        let mut c = small_config();
        let p = ModelParams::init(&c, 5, 3, 9).unwrap();
        let (with_attn, _) = forward(&p, &c, &sub, None, Mode::Eval).unwrap();
        c.ablation.no_sum = true;
        let (unit, masks) = forward(&p, &c, &sub, None, Mode::Eval).unwrap();
        assert!(masks.is_empty());
        assert!(with_attn.max_abs_diff(&unit) > 0.0);
    }

    #[test]
    fn train_mode_dropout_is_seeded() {
        let sub = fixture(2);
        let c = small_config();
        let p = ModelParams::init(&c, 5, 3, 9).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            forward(&p, &c, &sub, None, Mode::Train(&mut rng)).unwrap().0
        };
        assert_eq!(run(1), run(1));
        let (eval, _) = forward(&p, &c, &sub, None, Mode::Eval).unwrap();
        assert!((0..5).any(|s| run(s) != eval));
    }

    #[test]
    fn mismatched_k_is_rejected() {
        let c = small_config();
        let p = ModelParams::init(&c, 5, 3, 0).unwrap();
        assert!(forward(&p, &c, &fixture(1), None, Mode::Eval).is_err());
    }
}
