//! Coordinate perturbations, rigid-body targets, IGSO(3) rotation noise and denoising losses.

mod igso3;
mod loss;
mod rigid;

pub use igso3::{
    gaussian_log_s, gaussian_score, series_s, series_terms, IgSo3Table, GAUSSIAN_FALLBACK_SIGMA, GRID_POINTS, MAX_TERMS,
};
pub use loss::{
    loss_atom, loss_block_c, loss_block_r, loss_block_t, loss_on_tape, rotation_maps, LossVars, RotationLoss,
};
pub use rigid::{
    angular_acceleration, block_torque, inertia, pseudo_inverse, relative_positions, rotation_matrix, Mat3,
    PINV_RELATIVE_CUTOFF,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::MolGraph;
use crate::molio::Vec3;

#[derive(Debug, Error)]
pub enum DenoiseError {
    #[error(
        "σ_r = {sigma} needs more than {terms} series terms; use the small-σ Gaussian-angle approximation \
         (IgSo3Table::build_gaussian_angle, automatic below σ_r = 0.02)"
    )]
    Precision { sigma: f64, terms: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseMode {
    #[serde(rename = "atom")]
    Atom,
    #[serde(rename = "block-T")]
    BlockT,
    #[serde(rename = "block-C")]
    BlockC,
}

impl NoiseMode {
    pub fn name(self) -> &'static str {
        match self {
            NoiseMode::Atom => "atom",
            NoiseMode::BlockT => "block-T",
            NoiseMode::BlockC => "block-C",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "atom" => Some(NoiseMode::Atom),
            "block-T" | "block-t" => Some(NoiseMode::BlockT),
            "block-C" | "block-c" => Some(NoiseMode::BlockC),
            _ => None,
        }
    }
}

fn mean(z: &[Vec3]) -> Vec3 {
    let mut m = [0.0; 3];
    for p in z {
        for c in 0..3 {
            m[c] += p[c];
        }
    }
    let n = z.len().max(1) as f64;
    [m[0] / n, m[1] / n, m[2] / n]
}

/// Residual mean accepted as centered, in units of the largest coordinate's epsilon.
const CENTER_TOLERANCE_ULPS: f64 = 8.0;

/// Subtracts the centroid until the residual mean is within rounding, so the
/// result is exactly idempotent.
pub fn center_project(z: &[Vec3]) -> Vec<Vec3> {
    let mut out = z.to_vec();
    for _ in 0..16 {
        let m = mean(&out);
        // Stop on a state-only test so a second call sees the same verdict.
        let scale = out.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        if m.iter().all(|v| v.abs() <= CENTER_TOLERANCE_ULPS * f64::EPSILON * scale) {
            break;
        }
        out = out.iter().map(|p| [p[0] - m[0], p[1] - m[1], p[2] - m[2]]).collect();
    }
    out
}

/// Per-block centroids.
pub fn block_mean(z: &[Vec3], block_of: &[usize], m: usize) -> Vec<Vec3> {
    let mut sums = vec![[0.0; 3]; m];
    let mut counts = vec![0usize; m];
    for (p, &b) in z.iter().zip(block_of) {
        for c in 0..3 {
            sums[b][c] += p[c];
        }
        counts[b] += 1;
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        let n = n.max(1) as f64;
        s.iter_mut().for_each(|v| *v /= n);
    }
    sums
}

/// Copies each block value to its atoms.
pub fn block_broadcast(zb: &[Vec3], block_of: &[usize]) -> Vec<Vec3> {
    block_of.iter().map(|&b| zb[b]).collect()
}

pub(crate) fn block_sizes(block_of: &[usize], m: usize) -> Vec<usize> {
    let mut n = vec![0; m];
    for &b in block_of {
        n[b] += 1;
    }
    n
}

/// A perturbed structure plus the noise that produced it.
///
/// `clean` is the centered input `C(Z)`; every target is formed against it.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample {
    pub mode: NoiseMode,
    pub sigma_t: f64,
    pub sigma_r: f64,
    pub clean: Vec<Vec3>,
    pub perturbed: Vec<Vec3>,
    pub eps_atom: Option<Vec<Vec3>>,
    pub eps_block: Option<Vec<Vec3>>,
    pub omega: Option<Vec<Vec3>>,
    /// Rotation score per block; zero for single-atom blocks.
    pub score: Option<Vec<Vec3>>,
    /// μ_b(clean).
    pub block_centers: Vec<Vec3>,
    /// clean − g_b(block_centers).
    pub relative: Vec<Vec3>,
}

impl NoiseSample {
    /// Recomputes the perturbed coordinates from the stored noise.
    pub fn reconstruct(&self, block_of: &[usize]) -> Vec<Vec3> {
        match (&self.eps_atom, &self.eps_block) {
            (Some(eps), _) => atom_kernel(&self.clean, self.sigma_t, eps),
            (None, Some(eps_b)) => {
                rigid_kernel(&self.clean, block_of, self.block_centers.len(), self.sigma_t, eps_b, self.omega.as_deref()).0
            }
            (None, None) => center_project(&self.clean),
        }
    }

    /// Applies one global rotation to every coordinate and noise vector.
    pub fn rotated(&self, q: &Mat3) -> NoiseSample {
        let rot = |v: &Vec<Vec3>| v.iter().map(|p| rigid::mat_vec(q, p)).collect::<Vec<_>>();
        NoiseSample {
            mode: self.mode,
            sigma_t: self.sigma_t,
            sigma_r: self.sigma_r,
            clean: rot(&self.clean),
            perturbed: rot(&self.perturbed),
            eps_atom: self.eps_atom.as_ref().map(rot),
            eps_block: self.eps_block.as_ref().map(rot),
            omega: self.omega.as_ref().map(rot),
            score: self.score.as_ref().map(rot),
            block_centers: rot(&self.block_centers),
            relative: rot(&self.relative),
        }
    }
}

fn normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec3> {
    (0..n).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect()
}

fn atom_kernel(clean: &[Vec3], sigma_t: f64, eps: &[Vec3]) -> Vec<Vec3> {
    let moved: Vec<Vec3> = clean
        .iter()
        .zip(eps)
        .map(|(z, e)| [z[0] + sigma_t * e[0], z[1] + sigma_t * e[1], z[2] + sigma_t * e[2]])
        .collect();
    center_project(&moved)
}

/// `C(g_b(Z_b + σ_t ε_b) + Q_b Z_r)`; single-atom blocks and `omega = None` skip the rotation.
fn rigid_kernel(
    clean: &[Vec3],
    block_of: &[usize],
    m: usize,
    sigma_t: f64,
    eps_b: &[Vec3],
    omega: Option<&[Vec3]>,
) -> (Vec<Vec3>, Vec<Vec3>, Vec<Vec3>) {
    let centers = block_mean(clean, block_of, m);
    let relative = relative_positions(clean, block_of, &centers);
    let sizes = block_sizes(block_of, m);
    let rotations: Option<Vec<Mat3>> = omega.map(|w| w.iter().map(rotation_matrix).collect());
    let moved: Vec<Vec3> = relative
        .iter()
        .zip(block_of)
        .map(|(u, &b)| {
            let c = centers[b];
            let e = eps_b[b];
            let shifted = [c[0] + sigma_t * e[0], c[1] + sigma_t * e[1], c[2] + sigma_t * e[2]];
            let r = match &rotations {
                Some(q) if sizes[b] > 1 => rigid::mat_vec(&q[b], u),
                _ => *u,
            };
            [shifted[0] + r[0], shifted[1] + r[1], shifted[2] + r[2]]
        })
        .collect();
    (center_project(&moved), centers, relative)
}

/// Independent Gaussian noise per atom with explicit `eps`.
pub fn perturb_atom_with(z: &[Vec3], sigma_t: f64, eps: Vec<Vec3>) -> NoiseSample {
    let clean = center_project(z);
    let perturbed = atom_kernel(&clean, sigma_t, &eps);
    NoiseSample {
        mode: NoiseMode::Atom,
        sigma_t,
        sigma_r: 0.0,
        clean,
        perturbed,
        eps_atom: Some(eps),
        eps_block: None,
        omega: None,
        score: None,
        block_centers: Vec::new(),
        relative: Vec::new(),
    }
}

pub fn perturb_atom<R: Rng + ?Sized>(z: &[Vec3], sigma_t: f64, rng: &mut R) -> NoiseSample {
    perturb_atom_with(z, sigma_t, normals(z.len(), rng))
}

/// Rigid block noise with explicit per-block translation `eps_b` and optional rotations `omega`.
pub fn perturb_block_rigid(
    z: &[Vec3],
    block_of: &[usize],
    m: usize,
    sigma_t: f64,
    sigma_r: f64,
    eps_b: Vec<Vec3>,
    omega: Option<(Vec<Vec3>, Vec<Vec3>)>,
) -> NoiseSample {
    let clean = center_project(z);
    let (omega, score) = match omega {
        Some((w, s)) => (Some(w), Some(s)),
        None => (None, None),
    };
    let (perturbed, block_centers, relative) = rigid_kernel(&clean, block_of, m, sigma_t, &eps_b, omega.as_deref());
    NoiseSample {
        mode: if omega.is_some() { NoiseMode::BlockC } else { NoiseMode::BlockT },
        sigma_t,
        sigma_r,
        clean,
        perturbed,
        eps_atom: None,
        eps_block: Some(eps_b),
        omega,
        score,
        block_centers,
        relative,
    }
}

pub fn perturb_block_translation<R: Rng + ?Sized>(
    z: &[Vec3],
    block_of: &[usize],
    m: usize,
    sigma_t: f64,
    rng: &mut R,
) -> NoiseSample {
    perturb_block_rigid(z, block_of, m, sigma_t, 0.0, normals(m, rng), None)
}

/// Translation then IGSO(3) rotation noise per block. With `table = None` (σ_r = 0) all rotations are zero.
pub fn perturb_block_complete<R: Rng + ?Sized>(
    z: &[Vec3],
    block_of: &[usize],
    m: usize,
    sigma_t: f64,
    table: Option<&IgSo3Table>,
    rng: &mut R,
) -> NoiseSample {
    let eps_b = normals(m, rng);
    let sizes = block_sizes(block_of, m);
    let mut omega = Vec::with_capacity(m);
    let mut score = Vec::with_capacity(m);
    for &size in &sizes {
        let w = table.map_or([0.0; 3], |t| t.sample(rng));
        let s = match table {
            Some(t) if size > 1 => t.score(&w).expect("sampled angles lie in [0, π]"),
            _ => [0.0; 3],
        };
        omega.push(w);
        score.push(s);
    }
    let sigma_r = table.map_or(0.0, |t| t.sigma);
    perturb_block_rigid(z, block_of, m, sigma_t, sigma_r, eps_b, Some((omega, score)))
}

/// Draws a sample of the requested mode for `g`.
pub fn perturb_graph<R: Rng + ?Sized>(
    g: &MolGraph,
    mode: NoiseMode,
    sigma_t: f64,
    table: Option<&IgSo3Table>,
    rng: &mut R,
) -> NoiseSample {
    match mode {
        NoiseMode::Atom => perturb_atom(&g.coords, sigma_t, rng),
        NoiseMode::BlockT => perturb_block_translation(&g.coords, &g.block_of, g.n_blocks(), sigma_t, rng),
        NoiseMode::BlockC => perturb_block_complete(&g.coords, &g.block_of, g.n_blocks(), sigma_t, table, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_coords(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect()
    }

    #[test]
    fn centering() {
        assert_eq!(center_project(&[[1.0, 1.0, 1.0], [3.0, 3.0, 3.0]]), vec![[-1.0; 3], [1.0; 3]]);
        for seed in 0..20 {
            let z = random_coords(17, seed);
            let c = center_project(&z);
            assert_eq!(center_project(&c), c);
            assert!(mean(&c).iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn block_maps() {
        let z = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(block_mean(&z, &[0, 0], 1), vec![[1.0, 0.0, 0.0]]);
        let x = random_coords(4, 1);
        let block_of = [0, 1, 1, 2, 3, 3, 2];
        assert_eq!(block_mean(&block_broadcast(&x, &block_of), &block_of, 4), x);
        let single = [0, 1, 2, 3];
        assert_eq!(block_mean(&x, &single, 4), x);
        assert_eq!(block_broadcast(&x, &single), x);
    }

    #[test]
    fn zero_noise_is_centering() {
        let z = random_coords(6, 2);
        let block_of = [0, 0, 1, 1, 1, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = center_project(&z);
        assert_eq!(perturb_atom(&z, 0.0, &mut rng).perturbed, c);
        // Splitting into center plus offset and re-adding may move the last bit.
        let s = perturb_block_complete(&z, &block_of, 3, 0.0, None, &mut rng);
        for (a, b) in s.perturbed.iter().zip(&c) {
            assert!((0..3).all(|k| (a[k] - b[k]).abs() <= 1e-14 * (1.0 + b[k].abs())));
        }
    }

    #[test]
    fn singleton_blocks_reduce_to_atom_noise() {
        let z = random_coords(9, 3);
        let block_of: Vec<usize> = (0..9).collect();
        let a = perturb_atom(&z, 0.04, &mut ChaCha8Rng::seed_from_u64(7));
        let b = perturb_block_translation(&z, &block_of, 9, 0.04, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a.perturbed, b.perturbed);
    }

    #[test]
    fn zero_rotation_reduces_to_translation() {
        let z = random_coords(7, 4);
        let block_of = [0, 0, 0, 1, 1, 2, 2];
        let t = perturb_block_translation(&z, &block_of, 3, 0.1, &mut ChaCha8Rng::seed_from_u64(5));
        let eps = t.eps_block.clone().unwrap();
        let c = perturb_block_rigid(&z, &block_of, 3, 0.1, 0.0, eps, Some((vec![[0.0; 3]; 3], vec![[0.0; 3]; 3])));
        assert_eq!(c.perturbed, t.perturbed);
    }

    #[test]
    fn complete_noise_is_rigid_and_reproducible() {
        let z = random_coords(8, 6);
        let block_of = [0, 0, 0, 1, 1, 1, 1, 2];
        let table = IgSo3Table::build(0.5).unwrap();
        let s = perturb_block_complete(&z, &block_of, 3, 0.3, Some(&table), &mut ChaCha8Rng::seed_from_u64(8));
        for i in 0..8 {
            for j in 0..8 {
                if block_of[i] == block_of[j] {
                    let d0 = rigid::norm(&rigid::sub(&z[i], &z[j]));
                    let d1 = rigid::norm(&rigid::sub(&s.perturbed[i], &s.perturbed[j]));
                    assert!((d0 - d1).abs() <= 1e-12);
                }
            }
        }
        assert_eq!(s.reconstruct(&block_of), s.perturbed);
        assert!(mean(&s.perturbed).iter().all(|v| v.abs() <= 1e-12));
        assert_eq!(s.score.as_ref().unwrap()[2], [0.0; 3]);
    }

    #[test]
    fn mode_names() {
        for m in [NoiseMode::Atom, NoiseMode::BlockT, NoiseMode::BlockC] {
            assert_eq!(NoiseMode::parse(m.name()), Some(m));
        }
        assert_eq!(NoiseMode::parse("nope"), None);
    }
}
