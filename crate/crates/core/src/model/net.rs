use std::rc::Rc;

use super::attention::{attention, AttentionGeometry, AttentionKernel, KernelFaults};
use super::{BoundParams, ModelConfig, ModelParams};
use crate::autodiff::{Tape, Var};
use crate::graph::GraphBatch;
use crate::tensor::{Result, Tensor};

const LN_EPS: f64 = 1e-5;
const VECTOR_NORM_FLOOR: f64 = 1e-8;

/// Gaussian basis on `[0, delta_max]` with `count` evenly spaced centers and width equal to the spacing.
pub fn rbf_expand(d: f64, count: usize, delta_max: f64) -> Vec<f64> {
    let width = delta_max / (count - 1) as f64;
    (0..count)
        .map(|k| {
            let x = (d - k as f64 * width) / width;
            (-0.5 * x * x).exp()
        })
        .collect()
}

/// Deliberate defects for mutation tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ModelFaults {
    /// Initial vectors use absolute positions `z_i` instead of `z_i − z_j`.
    pub absolute_vector_init: bool,
    pub kernel: KernelFaults,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub kernel: AttentionKernel,
    pub faults: ModelFaults,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { kernel: AttentionKernel::Naive, faults: ModelFaults::default() }
    }
}

/// Scalar (`R×h`) and vector (`3R×h`) features on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVars {
    pub h: Var,
    pub v: Var,
}

/// Materialized features of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureState {
    pub h: Tensor,
    pub v: Tensor,
}

impl FeatureState {
    pub fn read(tape: &Tape, vars: FeatureVars) -> Self {
        Self { h: tape.value(vars.h).clone(), v: tape.value(vars.v).clone() }
    }
}

/// Per-layer states (embedding first) and per-row forces (`R×3`).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub states: Vec<FeatureState>,
    pub forces: Tensor,
}

impl ModelParams {
    /// Inference without gradients.
    pub fn predict(&self, cfg: &ModelConfig, batch: &GraphBatch, opts: ForwardOptions) -> Result<Prediction> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let layers = forward(&mut tape, &p, cfg, batch, opts)?;
        let last = *layers.last().expect("at least the embedding");
        let forces = force_head(&mut tape, &p, cfg, last, batch)?;
        Ok(Prediction {
            states: layers.iter().map(|&s| FeatureState::read(&tape, s)).collect(),
            forces: tape.value(forces).clone(),
        })
    }
}

fn ids(v: impl IntoIterator<Item = usize>) -> Rc<[usize]> {
    v.into_iter().collect()
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_row(y, b),
        None => Ok(y),
    }
}

/// Two-layer SiLU MLP with parameters `{prefix}.w1, b1, w2, b2`.
fn mlp(tape: &mut Tape, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let hidden = linear(tape, x, p.var(&format!("{prefix}.w1")), Some(p.var(&format!("{prefix}.b1"))))?;
    let act = tape.silu(hidden);
    linear(tape, act, p.var(&format!("{prefix}.w2")), Some(p.var(&format!("{prefix}.b2"))))
}

fn layer_norm(tape: &mut Tape, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    tape.layer_norm(x, p.var(&format!("{prefix}.gamma")), p.var(&format!("{prefix}.beta")), LN_EPS)
}

/// Per-channel Euclidean norm over the three components: `3R×h → R×h`.
fn channel_norm(tape: &mut Tape, v: Var, rows: usize, h: usize) -> Result<Var> {
    let sq = tape.square(v);
    let flat = tape.reshape(sq, &[rows, 3 * h])?;
    let x = tape.slice_cols(flat, 0, h)?;
    let y = tape.slice_cols(flat, h, h)?;
    let z = tape.slice_cols(flat, 2 * h, h)?;
    let xy = tape.add(x, y)?;
    let s = tape.add(xy, z)?;
    Ok(tape.sqrt(s))
}

/// Multiplies each of the three components of `v` (`3R×h`) by the `R×h` scalar gate `g`.
fn gate_vectors(tape: &mut Tape, v: Var, g: Var, rows: usize, h: usize) -> Result<Var> {
    let flat = tape.reshape(v, &[rows, 3 * h])?;
    let g3 = tape.concat_cols(&[g, g, g])?;
    let prod = tape.mul(flat, g3)?;
    tape.reshape(prod, &[3 * rows, h])
}

struct EdgeContext {
    n: usize,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
    emb: Var,
    rbf: Var,
}

fn edge_context(tape: &mut Tape, p: &BoundParams, cfg: &ModelConfig, batch: &GraphBatch) -> Result<EdgeContext> {
    let edges = &batch.edges;
    let mut rbf = Vec::with_capacity(edges.len() * cfg.h_rbf);
    for e in edges {
        let (a, b) = (&batch.coords[e.src], &batch.coords[e.dst]);
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        rbf.extend(rbf_expand(d, cfg.h_rbf, cfg.delta_max));
    }
    let rbf = tape.constant(Tensor::new(vec![edges.len(), cfg.h_rbf], rbf)?);
    let kinds = ids(edges.iter().map(|e| e.kind as usize));
    let emb = tape.gather_rows(p.var("embed.edge"), kinds)?;
    Ok(EdgeContext {
        n: edges.len(),
        src: ids(edges.iter().map(|e| e.src)),
        dst: ids(edges.iter().map(|e| e.dst)),
        emb,
        rbf,
    })
}

/// Edge MLP on `[f_i, f_j, edge embedding, rbf]`, with the first layer split by input block.
fn edge_mlp(tape: &mut Tape, p: &BoundParams, prefix: &str, f: Var, ec: &EdgeContext) -> Result<Var> {
    let w = |s: &str| p.var(&format!("{prefix}.{s}"));
    let fi = tape.matmul(f, w("w1_i"))?;
    let fi = tape.gather_rows(fi, ec.src.clone())?;
    let fj = tape.matmul(f, w("w1_j"))?;
    let fj = tape.gather_rows(fj, ec.dst.clone())?;
    let fe = tape.matmul(ec.emb, w("w1_edge"))?;
    let fr = tape.matmul(ec.rbf, w("w1_rbf"))?;
    let a = tape.add(fi, fj)?;
    let b = tape.add(fe, fr)?;
    let pre = tape.add(a, b)?;
    let pre = tape.add_row(pre, w("b1"))?;
    let act = tape.silu(pre);
    linear(tape, act, w("w2"), Some(w("b2")))
}

fn embed(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    batch: &GraphBatch,
    ec: &EdgeContext,
    mask: Var,
    faults: ModelFaults,
) -> Result<FeatureVars> {
    let (rows, h) = (batch.rows(), cfg.h);
    let fb = tape.gather_rows(p.var("embed.block"), ids(batch.atom_block_code.iter().map(|&c| c as usize)))?;
    let fa = tape.gather_rows(p.var("embed.atom"), ids(batch.atom_code.iter().map(|&c| c as usize)))?;
    let fp = tape.gather_rows(p.var("embed.pos"), ids(batch.pos_code.iter().map(|&c| c as usize)))?;
    let fab = tape.add(fb, fa)?;
    let f = tape.add(fab, fp)?;

    let (agg, v0) = if ec.n == 0 {
        (tape.constant(Tensor::zeros(&[rows, h])), tape.constant(Tensor::zeros(&[3 * rows, h])))
    } else {
        let gate_s = edge_mlp(tape, p, "phi_s", f, ec)?;
        let fj = tape.gather_rows(f, ec.dst.clone())?;
        let msg = tape.mul(gate_s, fj)?;
        let agg = tape.segment_sum(msg, ec.src.clone(), rows)?;

        let gate_v = edge_mlp(tape, p, "phi_v", f, ec)?;
        let gate3 = tape.gather_rows(gate_v, ids((0..ec.n).flat_map(|e| [e, e, e])))?;
        let mut rel = Vec::with_capacity(3 * ec.n);
        for e in &batch.edges {
            let (zi, zj) = (&batch.coords[e.src], &batch.coords[e.dst]);
            for c in 0..3 {
                rel.push(if faults.absolute_vector_init { zi[c] } else { zi[c] - zj[c] });
            }
        }
        let rel = tape.constant(Tensor::new(vec![3 * ec.n, 1], rel)?);
        let msg_v = tape.mul_col(gate3, rel)?;
        let v0 = tape.segment_sum(msg_v, ids(ec.src.iter().flat_map(|&i| [3 * i, 3 * i + 1, 3 * i + 2])), 3 * rows)?;
        (agg, v0)
    };
    let cat = tape.concat_cols(&[f, agg])?;
    let h0 = mlp(tape, p, "phi_h", cat)?;
    let h0 = tape.mul_col(h0, mask)?;
    Ok(FeatureVars { h: h0, v: v0 })
}

#[allow(clippy::too_many_arguments)]
fn attention_layer(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    l: usize,
    state: FeatureVars,
    geom: &Rc<AttentionGeometry>,
    ec: &EdgeContext,
    opts: ForwardOptions,
) -> Result<FeatureVars> {
    let (rows, h) = (geom.rows(), cfg.h);
    let w = |s: &str| p.var(&format!("layer{l}.{s}"));
    let x = layer_norm(tape, p, &format!("layer{l}.ln1"), state.h)?;
    let q = tape.matmul(x, w("attn.wq"))?;
    let k = tape.matmul(x, w("attn.wk"))?;
    let vh = tape.matmul(x, w("attn.wvh"))?;
    let vv = tape.matmul(state.v, w("attn.wvv"))?;
    let vv = tape.reshape(vv, &[rows, 3 * h])?;
    let bias = if ec.n == 0 {
        tape.constant(Tensor::zeros(&[0, 1]))
    } else {
        let r_in = tape.concat_cols(&[ec.emb, ec.rbf])?;
        mlp(tape, p, &format!("layer{l}.phi_r"), r_in)?
    };
    let out = attention(tape, geom.clone(), q, k, vh, vv, bias, opts.kernel, opts.faults.kernel)?;
    let oh = tape.slice_cols(out, 0, h)?;
    let ov = tape.slice_cols(out, h, 3 * h)?;
    let ov = tape.reshape(ov, &[3 * rows, h])?;
    let dh = tape.matmul(oh, w("attn.woh"))?;
    let dv = tape.matmul(ov, w("attn.wov"))?;
    Ok(FeatureVars { h: tape.add(state.h, dh)?, v: tape.add(state.v, dv)? })
}

fn ffn_layer(tape: &mut Tape, p: &BoundParams, cfg: &ModelConfig, l: usize, state: FeatureVars, mask: Var) -> Result<FeatureVars> {
    let h = cfg.h;
    let rows = tape.value(state.h).dims2().0;
    let w = |s: &str| p.var(&format!("layer{l}.{s}"));
    let x = layer_norm(tape, p, &format!("layer{l}.ln2"), state.h)?;
    let v1 = tape.matmul(state.v, w("ffn.w1"))?;
    let v2 = tape.matmul(state.v, w("ffn.w2"))?;
    let n1 = channel_norm(tape, v1, rows, h)?;
    let cat = tape.concat_cols(&[x, n1])?;
    let o = mlp(tape, p, &format!("layer{l}.phi_ffn"), cat)?;
    let dh = tape.slice_cols(o, 0, h)?;
    let dh = tape.mul_col(dh, mask)?;
    let u = tape.slice_cols(o, h, h)?;
    let lu = layer_norm(tape, p, &format!("layer{l}.ln_u"), u)?;
    let dv = gate_vectors(tape, v2, lu, rows, h)?;
    Ok(FeatureVars { h: tape.add(state.h, dh)?, v: tape.add(state.v, dv)? })
}

fn mask_column(tape: &mut Tape, batch: &GraphBatch) -> Result<Var> {
    let m = batch.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(tape.constant(Tensor::new(vec![batch.rows(), 1], m)?))
}

/// Embedding followed by `layers` attention and FFN blocks; returns every intermediate state.
pub fn forward(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    batch: &GraphBatch,
    opts: ForwardOptions,
) -> Result<Vec<FeatureVars>> {
    let mask = mask_column(tape, batch)?;
    let ec = edge_context(tape, p, cfg, batch)?;
    let geom = Rc::new(AttentionGeometry::from_batch(batch, cfg.heads, cfg.head_dim()));
    let mut states = vec![embed(tape, p, cfg, batch, &ec, mask, opts.faults)?];
    for l in 0..cfg.layers {
        let s = *states.last().expect("non-empty");
        let s = attention_layer(tape, p, cfg, l, s, &geom, &ec, opts)?;
        let s = ffn_layer(tape, p, cfg, l, s, mask)?;
        states.push(s);
    }
    Ok(states)
}

/// Per-row equivariant output `R×3`; padded rows are zero.
pub fn force_head(tape: &mut Tape, p: &BoundParams, cfg: &ModelConfig, state: FeatureVars, batch: &GraphBatch) -> Result<Var> {
    let (rows, h) = (batch.rows(), cfg.h);
    let mask = mask_column(tape, batch)?;
    let norm = channel_norm(tape, state.v, rows, h)?;
    let norm = tape.clamp_min(norm, VECTOR_NORM_FLOOR);
    let ones = tape.constant(Tensor::full(&[rows, h], 1.0));
    let inv = tape.div(ones, norm)?;
    let v_out = gate_vectors(tape, state.v, inv, rows, h)?;
    let a = tape.matmul(v_out, p.var("head.w1"))?;
    let b = tape.matmul(v_out, p.var("head.w2"))?;
    let na = channel_norm(tape, a, rows, h)?;
    let cat = tape.concat_cols(&[state.h, na])?;
    let g = mlp(tape, p, "phi_out", cat)?;
    let gated = gate_vectors(tape, b, g, rows, h)?;
    let flat = tape.reshape(gated, &[rows, 3 * h])?;
    let mut reduce = Tensor::zeros(&[3 * h, 3]);
    for c in 0..3 {
        for k in 0..h {
            reduce.data_mut()[(c * h + k) * 3 + c] = 1.0;
        }
    }
    let reduce = tape.constant(reduce);
    let f = tape.matmul(flat, reduce)?;
    tape.mul_col(f, mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    /// Σ_i φ_E(h_i)
    Atom,
    /// Σ_blocks φ_E(Σ_{j∈block} h_j)
    Block,
    /// φ_E(Σ_i h_i)
    Graph,
}

/// One invariant scalar per graph, `B×1`.
pub fn pooled_head(tape: &mut Tape, p: &BoundParams, h: Var, batch: &GraphBatch, mode: PoolMode) -> Result<Var> {
    let real = batch.real_rows();
    let graph_of_row = ids(real.iter().map(|&r| r / batch.n_max.max(1)));
    let hr = tape.gather_rows(h, ids(real.iter().copied()))?;
    let b = batch.n_graphs();
    match mode {
        PoolMode::Atom => {
            let e = mlp(tape, p, "phi_e", hr)?;
            tape.segment_sum(e, graph_of_row, b)
        }
        PoolMode::Block => {
            let blocks = tape.segment_sum(hr, ids(real.iter().map(|&r| batch.block_of[r])), batch.n_blocks())?;
            let e = mlp(tape, p, "phi_e", blocks)?;
            let graph_of_block =
                ids((0..b).flat_map(|g| std::iter::repeat_n(g, batch.block_offsets[g + 1] - batch.block_offsets[g])));
            tape.segment_sum(e, graph_of_block, b)
        }
        PoolMode::Graph => {
            let pooled = tape.segment_sum(hr, graph_of_row, b)?;
            mlp(tape, p, "phi_e", pooled)
        }
    }
}
