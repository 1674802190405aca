//! Biased multi-head attention over padded graph batches.
//!
//! Logits for head `s` are `q_i·k_j / (2√h_s) − |z_i − z_j| + r_ij`, where
//! `r_ij` is the per-edge bias (zero off the edge list). Attention is global
//! within each graph and never crosses graphs; padded keys are excluded and
//! padded queries produce zero output.
//!
//! Layouts with `h = heads·h_s` and `R` padded rows:
//!
//! | tensor | shape | head `s` occupies |
//! |--------|-------|-------------------|
//! | q, k   | R×4h  | cols `4s·h_s .. 4(s+1)·h_s` |
//! | vh     | R×h   | cols `s·h_s .. (s+1)·h_s` |
//! | vv     | R×3h  | cols `c·h + s·h_s ..` for component `c` |
//! | output | R×4h  | scalar part as `vh`, vector part offset by `h` as `vv` |

use std::cell::Cell;
use std::ops::{Deref, DerefMut};
use std::rc::Rc;

use crate::autodiff::{CustomOp, Tape, Var};
use crate::graph::{Edge, GraphBatch};
use crate::molio::Vec3;
use crate::tensor::{Result, Tensor, TensorError};

/// Counts live and peak scratch storage (in f64 elements) of attention kernels.
/// Kernel outputs are not scratch and are not counted.
#[derive(Debug, Default)]
pub struct ScratchMeter {
    current: Cell<usize>,
    peak: Cell<usize>,
}

impl ScratchMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak.get() * std::mem::size_of::<f64>()
    }

    pub fn live_bytes(&self) -> usize {
        self.current.get() * std::mem::size_of::<f64>()
    }

    pub fn buffer(&self, len: usize, fill: f64) -> ScratchBuf<'_> {
        let now = self.current.get() + len;
        self.current.set(now);
        self.peak.set(self.peak.get().max(now));
        ScratchBuf { data: vec![fill; len], meter: self }
    }
}

pub struct ScratchBuf<'a> {
    data: Vec<f64>,
    meter: &'a ScratchMeter,
}

impl Deref for ScratchBuf<'_> {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for ScratchBuf<'_> {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl Drop for ScratchBuf<'_> {
    fn drop(&mut self) {
        self.meter.current.set(self.meter.current.get() - self.data.len());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKernel {
    /// Materializes the full logit matrix of one graph and head.
    Naive,
    /// Streams key tiles with a running max and sum.
    Tiled { tile: usize },
}

/// Deliberate defects for mutation tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KernelFaults {
    /// Tiled kernel forgets to rescale its accumulators when the running max grows.
    pub skip_rescale: bool,
}

/// Per-batch constants: coordinates, mask, graph layout and the edge list in CSR form.
#[derive(Clone, Debug)]
pub struct AttentionGeometry {
    pub n_max: usize,
    pub n_graphs: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub coords: Vec<Vec3>,
    pub mask: Vec<bool>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    edge_ids: Vec<usize>,
    n_edges: usize,
}

impl AttentionGeometry {
    /// `edges` must stay within their graph's rows; their order defines the bias vector order.
    pub fn new(coords: Vec<Vec3>, mask: Vec<bool>, n_max: usize, edges: &[Edge], heads: usize, head_dim: usize) -> Self {
        let rows = coords.len();
        assert_eq!(mask.len(), rows);
        assert!(n_max > 0 || rows == 0);
        let n_graphs = if n_max == 0 { 0 } else { rows / n_max };
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&e| (edges[e].src, edges[e].dst));
        let mut row_ptr = vec![0; rows + 1];
        for e in edges {
            assert_eq!(e.src / n_max, e.dst / n_max, "edge crosses graphs");
            row_ptr[e.src + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let cols = order.iter().map(|&e| edges[e].dst).collect();
        Self { n_max, n_graphs, heads, head_dim, coords, mask, row_ptr, cols, edge_ids: order, n_edges: edges.len() }
    }

    pub fn from_batch(batch: &GraphBatch, heads: usize, head_dim: usize) -> Self {
        Self::new(batch.coords.clone(), batch.mask.clone(), batch.n_max, &batch.edges, heads, head_dim)
    }

    pub fn rows(&self) -> usize {
        self.coords.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.coords[i], &self.coords[j]);
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    fn edges_of(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.cols[p], self.edge_ids[p]))
    }
}

/// Borrowed kernel inputs, all row-major.
#[derive(Clone, Copy)]
pub struct AttentionInputs<'a> {
    pub q: &'a [f64],
    pub k: &'a [f64],
    pub vh: &'a [f64],
    pub vv: &'a [f64],
    pub bias: &'a [f64],
}

struct Dims {
    h: usize,
    hs: usize,
    scale: f64,
}

impl Dims {
    fn of(geom: &AttentionGeometry) -> Self {
        let hs = geom.head_dim;
        Self { h: geom.hidden(), hs, scale: 1.0 / (2.0 * (hs as f64).sqrt()) }
    }

    fn qk(&self, x: &AttentionInputs<'_>, i: usize, j: usize, s: usize) -> f64 {
        let w = 4 * self.hs;
        let qi = &x.q[i * 4 * self.h + s * w..][..w];
        let kj = &x.k[j * 4 * self.h + s * w..][..w];
        qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * self.scale
    }

    /// Adds `weight · value_j` of head `s` into `out_row` (an R×4h output row).
    fn accumulate(&self, x: &AttentionInputs<'_>, out_row: &mut [f64], j: usize, s: usize, weight: f64) {
        let (h, hs) = (self.h, self.hs);
        let vh = &x.vh[j * h + s * hs..][..hs];
        for (o, v) in out_row[s * hs..][..hs].iter_mut().zip(vh) {
            *o += weight * v;
        }
        for c in 0..3 {
            let vv = &x.vv[j * 3 * h + c * h + s * hs..][..hs];
            for (o, v) in out_row[h + c * h + s * hs..][..hs].iter_mut().zip(vv) {
                *o += weight * v;
            }
        }
    }

    fn scale_head(&self, out_row: &mut [f64], s: usize, factor: f64) {
        let (h, hs) = (self.h, self.hs);
        out_row[s * hs..][..hs].iter_mut().for_each(|o| *o *= factor);
        for c in 0..3 {
            out_row[h + c * h + s * hs..][..hs].iter_mut().for_each(|o| *o *= factor);
        }
    }
}

fn check_inputs(geom: &AttentionGeometry, x: &AttentionInputs<'_>) -> Result<()> {
    let (r, h) = (geom.rows(), geom.hidden());
    let ok = x.q.len() == r * 4 * h
        && x.k.len() == r * 4 * h
        && x.vh.len() == r * h
        && x.vv.len() == r * 3 * h
        && x.bias.len() == geom.n_edges;
    if ok {
        Ok(())
    } else {
        Err(TensorError::Contract(format!(
            "attention inputs do not match {r} rows, hidden {h}, {} edges",
            geom.n_edges
        )))
    }
}

/// Forward pass. Returns the R×4h output and the per-(row, head) log-sum-exp.
pub fn attention_forward(
    geom: &AttentionGeometry,
    x: AttentionInputs<'_>,
    kernel: AttentionKernel,
    meter: &ScratchMeter,
    faults: KernelFaults,
) -> Result<(Tensor, Vec<f64>)> {
    check_inputs(geom, &x)?;
    let d = Dims::of(geom);
    let rows = geom.rows();
    let mut out = vec![0.0; rows * 4 * d.h];
    let mut lse = vec![f64::NEG_INFINITY; rows * geom.heads];
    match kernel {
        AttentionKernel::Naive => naive(geom, &x, &d, meter, &mut out, &mut lse),
        AttentionKernel::Tiled { tile } => {
            if tile == 0 {
                return Err(TensorError::Contract("attention tile must be at least 1".into()));
            }
            tiled(geom, &x, &d, tile, meter, faults, &mut out, &mut lse)
        }
    }
    Ok((Tensor::new(vec![rows, 4 * d.h], out)?, lse))
}

fn naive(geom: &AttentionGeometry, x: &AttentionInputs<'_>, d: &Dims, meter: &ScratchMeter, out: &mut [f64], lse: &mut [f64]) {
    let n = geom.n_max;
    let mut logits = meter.buffer(n * n, f64::NEG_INFINITY);
    for g in 0..geom.n_graphs {
        let base = g * n;
        for s in 0..geom.heads {
            for qi in 0..n {
                let i = base + qi;
                let row = &mut logits[qi * n..(qi + 1) * n];
                if !geom.mask[i] {
                    continue;
                }
                for kj in 0..n {
                    let j = base + kj;
                    row[kj] = if geom.mask[j] { d.qk(x, i, j, s) - geom.dist(i, j) } else { f64::NEG_INFINITY };
                }
                for (j, e) in geom.edges_of(i) {
                    row[j - base] += x.bias[e];
                }
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    sum += *v;
                }
                let out_row = &mut out[i * 4 * d.h..(i + 1) * 4 * d.h];
                for kj in 0..n {
                    let p = row[kj] / sum;
                    if p != 0.0 {
                        d.accumulate(x, out_row, base + kj, s, p);
                    }
                }
                lse[i * geom.heads + s] = m + sum.ln();
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn tiled(
    geom: &AttentionGeometry,
    x: &AttentionInputs<'_>,
    d: &Dims,
    tile: usize,
    meter: &ScratchMeter,
    faults: KernelFaults,
    out: &mut [f64],
    lse: &mut [f64],
) {
    let n = geom.n_max;
    let tile = tile.min(n.max(1));
    let mut scores = meter.buffer(n * tile, 0.0);
    let mut run_max = meter.buffer(n, f64::NEG_INFINITY);
    let mut run_sum = meter.buffer(n, 0.0);
    for g in 0..geom.n_graphs {
        let base = g * n;
        for s in 0..geom.heads {
            run_max.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
            run_sum.iter_mut().for_each(|v| *v = 0.0);
            let mut t0 = 0;
            while t0 < n {
                let t1 = (t0 + tile).min(n);
                let width = t1 - t0;
                for qi in 0..n {
                    let i = base + qi;
                    if !geom.mask[i] {
                        continue;
                    }
                    let row = &mut scores[qi * tile..qi * tile + width];
                    for (kk, v) in row.iter_mut().enumerate() {
                        let j = base + t0 + kk;
                        *v = if geom.mask[j] { d.qk(x, i, j, s) - geom.dist(i, j) } else { f64::NEG_INFINITY };
                    }
                    for (j, e) in geom.edges_of(i) {
                        if (base + t0..base + t1).contains(&j) {
                            row[j - base - t0] += x.bias[e];
                        }
                    }
                    let tile_max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let m_old = run_max[qi];
                    let m_new = m_old.max(tile_max);
                    if m_new == f64::NEG_INFINITY {
                        continue;
                    }
                    let out_row = &mut out[i * 4 * d.h..(i + 1) * 4 * d.h];
                    if !faults.skip_rescale {
                        let rescale = if m_old == f64::NEG_INFINITY { 0.0 } else { (m_old - m_new).exp() };
                        run_sum[qi] *= rescale;
                        d.scale_head(out_row, s, rescale);
                    }
                    for kk in 0..width {
                        let p = (row[kk] - m_new).exp();
                        if p != 0.0 {
                            run_sum[qi] += p;
                            d.accumulate(x, out_row, base + t0 + kk, s, p);
                        }
                    }
                    run_max[qi] = m_new;
                }
                t0 = t1;
            }
            for qi in 0..n {
                let i = base + qi;
                if !geom.mask[i] || run_sum[qi] == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * 4 * d.h..(i + 1) * 4 * d.h];
                d.scale_head(out_row, s, 1.0 / run_sum[qi]);
                lse[i * geom.heads + s] = run_max[qi] + run_sum[qi].ln();
            }
        }
    }
}

/// Input gradients of the attention output, recomputing one probability row at a time from `lse`.
pub struct AttentionGrads {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub vh: Vec<f64>,
    pub vv: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn attention_backward(
    geom: &AttentionGeometry,
    x: AttentionInputs<'_>,
    out: &[f64],
    lse: &[f64],
    d_out: &[f64],
) -> Result<AttentionGrads> {
    check_inputs(geom, &x)?;
    let d = Dims::of(geom);
    let (h, hs, n) = (d.h, d.hs, geom.n_max);
    let rows = geom.rows();
    let mut gq = vec![0.0; x.q.len()];
    let mut gk = vec![0.0; x.k.len()];
    let mut gvh = vec![0.0; x.vh.len()];
    let mut gvv = vec![0.0; x.vv.len()];
    let mut gb = vec![0.0; x.bias.len()];
    let mut p = vec![0.0; n];
    let mut ds = vec![0.0; n];
    let w = 4 * hs;
    for g in 0..geom.n_graphs {
        let base = g * n;
        for s in 0..geom.heads {
            for qi in 0..n {
                let i = base + qi;
                let l = lse[i * geom.heads + s];
                if !geom.mask[i] || l == f64::NEG_INFINITY {
                    continue;
                }
                for kj in 0..n {
                    let j = base + kj;
                    p[kj] = if geom.mask[j] { d.qk(&x, i, j, s) - geom.dist(i, j) } else { f64::NEG_INFINITY };
                }
                for (j, e) in geom.edges_of(i) {
                    p[j - base] += x.bias[e];
                }
                p.iter_mut().for_each(|v| *v = (*v - l).exp());

                let go = &d_out[i * 4 * h..(i + 1) * 4 * h];
                let o = &out[i * 4 * h..(i + 1) * 4 * h];
                let mut delta: f64 = go[s * hs..][..hs].iter().zip(&o[s * hs..][..hs]).map(|(a, b)| a * b).sum();
                for c in 0..3 {
                    let off = h + c * h + s * hs;
                    delta += go[off..][..hs].iter().zip(&o[off..][..hs]).map(|(a, b)| a * b).sum::<f64>();
                }
                for kj in 0..n {
                    let j = base + kj;
                    let pj = p[kj];
                    if pj == 0.0 {
                        ds[kj] = 0.0;
                        continue;
                    }
                    let mut dp: f64 = go[s * hs..][..hs].iter().zip(&x.vh[j * h + s * hs..][..hs]).map(|(a, b)| a * b).sum();
                    for c in 0..3 {
                        let off = c * h + s * hs;
                        dp += go[h + off..][..hs].iter().zip(&x.vv[j * 3 * h + off..][..hs]).map(|(a, b)| a * b).sum::<f64>();
                    }
                    for (gv, gov) in gvh[j * h + s * hs..][..hs].iter_mut().zip(&go[s * hs..][..hs]) {
                        *gv += pj * gov;
                    }
                    for c in 0..3 {
                        let off = c * h + s * hs;
                        for (gv, gov) in gvv[j * 3 * h + off..][..hs].iter_mut().zip(&go[h + off..][..hs]) {
                            *gv += pj * gov;
                        }
                    }
                    let dsij = pj * (dp - delta);
                    ds[kj] = dsij;
                    let coef = dsij * d.scale;
                    let qrow = i * 4 * h + s * w;
                    let krow = j * 4 * h + s * w;
                    for t in 0..w {
                        gq[qrow + t] += coef * x.k[krow + t];
                        gk[krow + t] += coef * x.q[qrow + t];
                    }
                }
                for (j, e) in geom.edges_of(i) {
                    gb[e] += ds[j - base];
                }
            }
        }
    }
    debug_assert_eq!(gq.len(), rows * 4 * h);
    Ok(AttentionGrads { q: gq, k: gk, vh: gvh, vv: gvv, bias: gb })
}

struct AttentionOp {
    geom: Rc<AttentionGeometry>,
    lse: Vec<f64>,
}

impl CustomOp for AttentionOp {
    fn name(&self) -> &'static str {
        "biased_attention"
    }

    fn backward(&self, grad_out: &Tensor, inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Tensor>> {
        let x = AttentionInputs {
            q: inputs[0].data(),
            k: inputs[1].data(),
            vh: inputs[2].data(),
            vv: inputs[3].data(),
            bias: inputs[4].data(),
        };
        let g = attention_backward(&self.geom, x, output.data(), &self.lse, grad_out.data())
            .expect("shapes were checked in the forward pass");
        let wrap = |t: &Tensor, data: Vec<f64>| Some(Tensor::new(t.shape().to_vec(), data).expect("same length"));
        vec![
            wrap(inputs[0], g.q),
            wrap(inputs[1], g.k),
            wrap(inputs[2], g.vh),
            wrap(inputs[3], g.vv),
            wrap(inputs[4], g.bias),
        ]
    }
}

/// Records attention on the tape. `bias` is an E×1 column in edge-list order.
pub fn attention(
    tape: &mut Tape,
    geom: Rc<AttentionGeometry>,
    q: Var,
    k: Var,
    vh: Var,
    vv: Var,
    bias: Var,
    kernel: AttentionKernel,
    faults: KernelFaults,
) -> Result<Var> {
    let meter = ScratchMeter::new();
    let x = AttentionInputs {
        q: tape.value(q).data(),
        k: tape.value(k).data(),
        vh: tape.value(vh).data(),
        vv: tape.value(vv).data(),
        bias: tape.value(bias).data(),
    };
    let (out, lse) = attention_forward(&geom, x, kernel, &meter, faults)?;
    Ok(tape.custom(vec![q, k, vh, vv, bias], out, Box::new(AttentionOp { geom, lse })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Case {
        geom: AttentionGeometry,
        q: Vec<f64>,
        k: Vec<f64>,
        vh: Vec<f64>,
        vv: Vec<f64>,
        bias: Vec<f64>,
    }

    impl Case {
        fn inputs(&self) -> AttentionInputs<'_> {
            AttentionInputs { q: &self.q, k: &self.k, vh: &self.vh, vv: &self.vv, bias: &self.bias }
        }
    }

    fn random_case(sizes: &[usize], n_max: usize, heads: usize, hs: usize, seed: u64) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = sizes.len() * n_max;
        let h = heads * hs;
        let mut coords = vec![[0.0; 3]; rows];
        let mut mask = vec![false; rows];
        let mut edges = Vec::new();
        for (g, &n) in sizes.iter().enumerate() {
            for a in 0..n {
                let r = g * n_max + a;
                mask[r] = true;
                coords[r] = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            }
            for a in 0..n {
                for b in 0..n {
                    if a != b && rng.random_bool(0.3) {
                        edges.push(Edge { src: g * n_max + a, dst: g * n_max + b, kind: 1 });
                    }
                }
            }
        }
        let mut v = |len: usize| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (q, k, vh, vv) = (v(rows * 4 * h), v(rows * 4 * h), v(rows * h), v(rows * 3 * h));
        let bias = v(edges.len());
        Case { geom: AttentionGeometry::new(coords, mask, n_max, &edges, heads, hs), q, k, vh, vv, bias }
    }

    fn run(c: &Case, kernel: AttentionKernel) -> (Tensor, Vec<f64>) {
        attention_forward(&c.geom, c.inputs(), kernel, &ScratchMeter::new(), KernelFaults::default()).unwrap()
    }

    #[test]
    fn single_token_attends_to_itself() {
        let c = random_case(&[1], 1, 2, 3, 1);
        let (out, _) = run(&c, AttentionKernel::Naive);
        let h = 6;
        assert_eq!(&out.data()[..h], &c.vh[..]);
        assert_eq!(&out.data()[h..], &c.vv[..]);
    }

    #[test]
    fn distant_atoms_ignore_each_other() {
        let geom = AttentionGeometry::new(vec![[0.0; 3], [60.0, 0.0, 0.0]], vec![true; 2], 2, &[], 1, 1);
        let zeros = vec![0.0; 8];
        let vh = vec![1.0, 0.0];
        let vv = vec![0.0; 6];
        let x = AttentionInputs { q: &zeros, k: &zeros, vh: &vh, vv: &vv, bias: &[] };
        let (out, _) = attention_forward(&geom, x, AttentionKernel::Naive, &ScratchMeter::new(), KernelFaults::default()).unwrap();
        assert_eq!(out.get2(0, 0), 1.0);
        assert!(out.get2(1, 0) < 1e-20);
    }

    #[test]
    fn tiled_matches_naive() {
        let c = random_case(&[9, 13], 13, 2, 3, 7);
        let (naive, lse_n) = run(&c, AttentionKernel::Naive);
        for tile in [1, 2, 5, 13, 40] {
            let (tiled, lse_t) = run(&c, AttentionKernel::Tiled { tile });
            assert!(naive.max_abs_diff(&tiled) <= 1e-10, "tile {tile}");
            for (a, b) in lse_n.iter().zip(&lse_t) {
                assert!(a == b || (a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn padded_queries_emit_zero() {
        let c = random_case(&[3, 5], 5, 2, 2, 3);
        for kernel in [AttentionKernel::Naive, AttentionKernel::Tiled { tile: 2 }] {
            let (out, _) = run(&c, kernel);
            for r in 3..5 {
                assert!(out.row(r).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn skipped_rescale_is_detectable() {
        let c = random_case(&[16], 16, 1, 4, 11);
        let (naive, _) = run(&c, AttentionKernel::Naive);
        let faulty = KernelFaults { skip_rescale: true };
        let (bad, _) =
            attention_forward(&c.geom, c.inputs(), AttentionKernel::Tiled { tile: 1 }, &ScratchMeter::new(), faulty).unwrap();
        assert!(naive.max_abs_diff(&bad) > 1e-6);
    }

    #[test]
    fn scratch_scaling() {
        let c = random_case(&[64], 64, 1, 1, 2);
        let m = ScratchMeter::new();
        attention_forward(&c.geom, c.inputs(), AttentionKernel::Naive, &m, KernelFaults::default()).unwrap();
        assert_eq!(m.peak_bytes(), 64 * 64 * 8);
        assert_eq!(m.live_bytes(), 0);
        let m = ScratchMeter::new();
        attention_forward(&c.geom, c.inputs(), AttentionKernel::Tiled { tile: 8 }, &m, KernelFaults::default()).unwrap();
        assert_eq!(m.peak_bytes(), (64 * 8 + 2 * 64) * 8);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let c = random_case(&[4, 5], 5, 2, 2, 5);
        let (out, lse) = run(&c, AttentionKernel::Naive);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |case: &Case| -> f64 {
            let (o, _) = run(case, AttentionKernel::Tiled { tile: 3 });
            o.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let g = attention_backward(&c.geom, c.inputs(), out.data(), &lse, &w).unwrap();
        let step = 1e-6;
        let check = |name: &str, analytic: &[f64], pick: &dyn Fn(&mut Case) -> &mut Vec<f64>| {
            for idx in (0..analytic.len()).step_by(3) {
                let mut plus = clone_case(&c);
                pick(&mut plus)[idx] += step;
                let mut minus = clone_case(&c);
                pick(&mut minus)[idx] -= step;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
                let err = (fd - analytic[idx]).abs() / fd.abs().max(analytic[idx].abs()).max(1e-4);
                assert!(err < 1e-5, "{name}[{idx}]: fd {fd} vs {}", analytic[idx]);
            }
        };
        check("q", &g.q, &|c| &mut c.q);
        check("k", &g.k, &|c| &mut c.k);
        check("vh", &g.vh, &|c| &mut c.vh);
        check("vv", &g.vv, &|c| &mut c.vv);
        check("bias", &g.bias, &|c| &mut c.bias);
    }

    fn clone_case(c: &Case) -> Case {
        Case {
            geom: c.geom.clone(),
            q: c.q.clone(),
            k: c.k.clone(),
            vh: c.vh.clone(),
            vv: c.vv.clone(),
            bias: c.bias.clone(),
        }
    }
}
