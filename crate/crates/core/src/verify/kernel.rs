use rand::Rng;

use super::tolerances::{KERNEL_ABS, KERNEL_SINGLE_TILE_ABS};
use super::CheckReport;
use crate::graph::Edge;
use crate::model::attention::{attention_forward, AttentionInputs};
use crate::model::{AttentionGeometry, AttentionKernel, KernelFaults, ScratchMeter};
use crate::train::stream_rng;

pub(crate) const SWEEP_SIZES: [usize; 3] = [5, 33, 128];
pub(crate) const SWEEP_TILES: [usize; 3] = [1, 7, 32];
const HEADS: usize = 2;
const HEAD_DIM: usize = 3;
/// Edge probability of the random graphs; keeps the 128-atom case sparse like a real batch.
const EDGE_DENSITY: f64 = 0.1;

/// Random kernel inputs for a batch whose graphs have `sizes` real atoms, padded to `n_max`.
pub struct KernelCase {
    pub geom: AttentionGeometry,
    q: Vec<f64>,
    k: Vec<f64>,
    vh: Vec<f64>,
    vv: Vec<f64>,
    bias: Vec<f64>,
}

impl KernelCase {
    pub fn random(sizes: &[usize], n_max: usize, heads: usize, head_dim: usize, seed: u64, edge_density: f64) -> Self {
        let mut rng = stream_rng(seed, n_max as u64);
        let rows = sizes.len() * n_max;
        let h = heads * head_dim;
        // Box edge grows with N so that distances, and hence running maxima, vary across tiles.
        let side = 1.5 * (n_max.max(1) as f64).cbrt();
        let mut coords = vec![[0.0; 3]; rows];
        let mut mask = vec![false; rows];
        let mut edges = Vec::new();
        for (g, &n) in sizes.iter().enumerate() {
            for a in 0..n {
                mask[g * n_max + a] = true;
                coords[g * n_max + a] = [0, 1, 2].map(|_| rng.random_range(-side..side));
            }
            for a in 0..n {
                for b in 0..n {
                    if a != b && rng.random_bool(edge_density) {
                        edges.push(Edge { src: g * n_max + a, dst: g * n_max + b, kind: rng.random_range(0..3) });
                    }
                }
            }
        }
        let mut v = |len: usize, s: f64| (0..len).map(|_| rng.random_range(-s..s)).collect::<Vec<f64>>();
        let (q, k) = (v(rows * 4 * h, 2.0), v(rows * 4 * h, 2.0));
        let (vh, vv) = (v(rows * h, 1.0), v(rows * 3 * h, 1.0));
        let bias = v(edges.len(), 2.0);
        Self { geom: AttentionGeometry::new(coords, mask, n_max, &edges, heads, head_dim), q, k, vh, vv, bias }
    }

    pub fn run(&self, kernel: AttentionKernel, meter: &ScratchMeter, faults: KernelFaults) -> Option<Vec<f64>> {
        let x = AttentionInputs { q: &self.q, k: &self.k, vh: &self.vh, vv: &self.vv, bias: &self.bias };
        attention_forward(&self.geom, x, kernel, meter, faults).ok().map(|(out, _)| out.data().to_vec())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn compare(case: &KernelCase, tile: usize, faults: KernelFaults) -> f64 {
    let meter = ScratchMeter::new();
    match (case.run(AttentionKernel::Naive, &meter, faults), case.run(AttentionKernel::Tiled { tile }, &meter, faults)) {
        (Some(a), Some(b)) => max_abs_diff(&a, &b),
        _ => f64::INFINITY,
    }
}

/// Tiled against naive attention over the tile and size sweep, a whole-graph tile, and an all-padding graph.
pub fn check_kernel_equivalence(seed: u64, skip_rescale: bool) -> CheckReport {
    let faults = KernelFaults { skip_rescale };
    let mut worst = 0.0f64;
    let mut single = 0.0f64;
    for n in SWEEP_SIZES {
        // A second, shorter graph in the batch exercises padded rows.
        let case = KernelCase::random(&[n, n / 2 + 1], n, HEADS, HEAD_DIM, seed, EDGE_DENSITY);
        for tile in SWEEP_TILES {
            worst = worst.max(compare(&case, tile, faults));
        }
        single = single.max(compare(&case, n, faults));
    }
    let masked = KernelCase::random(&[4, 0], 4, HEADS, HEAD_DIM, seed, EDGE_DENSITY);
    let meter = ScratchMeter::new();
    let width = 4 * HEADS * HEAD_DIM;
    let padded_zero = [AttentionKernel::Naive, AttentionKernel::Tiled { tile: 3 }].iter().all(|&k| {
        masked.run(k, &meter, faults).is_some_and(|out| out[4 * width..].iter().all(|&x| x == 0.0))
    });
    let mut report = CheckReport::at_most(
        "kernel",
        worst,
        KERNEL_ABS,
        seed,
        format!("single tile {single:e}, padded graph zero {padded_zero}"),
    );
    report.passed &= single <= KERNEL_SINGLE_TILE_ABS && padded_zero;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_passes_and_missing_rescale_fails() {
        let ok = check_kernel_equivalence(0, false);
        assert!(ok.passed, "{ok:?}");
        let bad = check_kernel_equivalence(0, true);
        assert!(!bad.passed, "{bad:?}");
        assert!(bad.value > 1e-6);
    }
}
