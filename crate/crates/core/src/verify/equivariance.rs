use rand::Rng;
use rand_distr::StandardNormal;

use super::tolerances::EQUIVARIANCE_REL;
use super::toy::toy_graphs;
use super::{relative_deviation, CheckReport};
use crate::denoise::Mat3;
use crate::graph::{GraphBatch, MolGraph};
use crate::model::{ForwardOptions, ModelConfig, ModelFaults, ModelParams, Prediction};
use crate::tensor::Tensor;
use crate::train::stream_rng;
use crate::Vec3;

/// Uniform proper rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let mut q: [f64; 4] = [0.0; 4];
    for x in &mut q {
        *x = rng.sample(StandardNormal);
    }
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn apply(q: &Mat3, t: &Vec3, p: &Vec3) -> Vec3 {
    let mut out = *t;
    for (c, o) in out.iter_mut().enumerate() {
        *o += q[c][0] * p[0] + q[c][1] * p[1] + q[c][2] * p[2];
    }
    out
}

/// Rotates every 3-row group of a `3R×h` vector feature.
fn rotate_vectors(q: &Mat3, v: &Tensor) -> Vec<f64> {
    let h = v.shape()[1];
    let d = v.data();
    let mut out = vec![0.0; d.len()];
    for atom in 0..v.shape()[0] / 3 {
        for c in 0..3 {
            for k in 0..h {
                out[(3 * atom + c) * h + k] = (0..3).map(|e| q[c][e] * d[(3 * atom + e) * h + k]).sum();
            }
        }
    }
    out
}

/// Rotates each row of an `R×3` tensor.
fn rotate_rows(q: &Mat3, f: &Tensor) -> Vec<f64> {
    f.data().chunks(3).flat_map(|r| apply(q, &[0.0; 3], &[r[0], r[1], r[2]])).collect()
}

/// Worst relative deviation of `moved` from the transformed `base` over scalars, vectors and forces.
fn deviation(q: &Mat3, base: &Prediction, moved: &Prediction) -> f64 {
    let mut worst = 0.0f64;
    for (a, b) in base.states.iter().zip(&moved.states) {
        worst = worst.max(relative_deviation(b.h.data(), a.h.data(), f64::MIN_POSITIVE));
        worst = worst.max(relative_deviation(b.v.data(), &rotate_vectors(q, &a.v), f64::MIN_POSITIVE));
    }
    worst.max(relative_deviation(moved.forces.data(), &rotate_rows(q, &base.forces), f64::MIN_POSITIVE))
}

/// Small jitter breaks the toy geometry's symmetries so that degenerate outputs cannot pass by accident.
fn jittered<R: Rng + ?Sized>(g: &MolGraph, rng: &mut R) -> MolGraph {
    let mut out = g.clone();
    for p in &mut out.coords {
        for x in p.iter_mut() {
            *x += 0.05 * rng.random_range(-1.0..1.0);
        }
    }
    out
}

/// Same graph with `coords` moved rigidly; edges are kept so boundary distances cannot flip type.
fn moved(g: &MolGraph, q: &Mat3, t: &Vec3) -> MolGraph {
    MolGraph { coords: g.coords.iter().map(|p| apply(q, t, p)).collect(), ..g.clone() }
}

/// Per-trial deviation under one rigid motion; two-graph batches exercise padding.
fn trial(cfg: &ModelConfig, params: &ModelParams, graphs: &[MolGraph], q: &Mat3, t: &Vec3, opts: ForwardOptions) -> f64 {
    let base = GraphBatch::from_graphs(graphs);
    let shifted: Vec<MolGraph> = graphs.iter().map(|g| moved(g, q, t)).collect();
    let shifted = GraphBatch::from_graphs(&shifted);
    match (params.predict(cfg, &base, opts), params.predict(cfg, &shifted, opts)) {
        (Ok(a), Ok(b)) => deviation(q, &a, &b),
        _ => f64::INFINITY,
    }
}

/// Scalar invariance and vector and force equivariance over `trials` random (graph, rotation, translation) draws.
pub fn check_equivariance(cfg: &ModelConfig, params: &ModelParams, trials: usize, seed: u64, absolute_vector_init: bool) -> CheckReport {
    let pool = toy_graphs(16, seed, cfg.thresholds());
    let mut rng = stream_rng(seed, 0xE9);
    let opts = ForwardOptions { faults: ModelFaults { absolute_vector_init, ..ModelFaults::default() }, ..ForwardOptions::default() };
    let mut worst = 0.0f64;
    for i in 0..trials.max(1) {
        let count = 1 + i % 2;
        let graphs: Vec<MolGraph> = (0..count).map(|_| jittered(&pool[rng.random_range(0..pool.len())], &mut rng)).collect();
        let q = random_rotation(&mut rng);
        let t = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        worst = worst.max(trial(cfg, params, &graphs, &q, &t, opts));
    }
    CheckReport::at_most("equivariance", worst, EQUIVARIANCE_REL, seed, format!("{trials} trials"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Thresholds;

    #[test]
    fn rotations_are_proper() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..20 {
            let q = random_rotation(&mut rng);
            let det = q[0][0] * (q[1][1] * q[2][2] - q[1][2] * q[2][1]) - q[0][1] * (q[1][0] * q[2][2] - q[1][2] * q[2][0])
                + q[0][2] * (q[1][0] * q[2][1] - q[1][1] * q[2][0]);
            assert!((det - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_motion_deviates_by_zero() {
        let cfg = ModelConfig::tiny();
        let params = ModelParams::init(&cfg, &mut stream_rng(1, 0));
        let graphs = toy_graphs(2, 1, Thresholds::default());
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(trial(&cfg, &params, &graphs, &eye, &[0.0; 3], ForwardOptions::default()), 0.0);
    }

    #[test]
    fn tiny_profile_passes_and_absolute_init_fails() {
        let cfg = ModelConfig::tiny();
        let params = ModelParams::init(&cfg, &mut stream_rng(2, u64::MAX));
        let ok = check_equivariance(&cfg, &params, 10, 2, false);
        assert!(ok.passed, "{ok:?}");
        let bad = check_equivariance(&cfg, &params, 10, 2, true);
        assert!(!bad.passed, "{bad:?}");
    }
}
