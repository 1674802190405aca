//! Isotropic Gaussian on SO(3): tabulated angle density, inverse-CDF sampling and score.
//!
//! With `t = σ²`, the angle density is `f(θ) = (1 − cos θ)/π · S(θ)` where
//! `S(θ) = Σ_l (2l+1) e^{−l(l+1)t} sin((l+½)θ) / sin(θ/2)`. The score is
//! `d/dθ log S`, the log-density gradient with the Haar factor removed.

use std::f64::consts::PI;
use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;

use super::DenoiseError;
use crate::molio::Vec3;

pub const GRID_POINTS: usize = 2048;
pub const MAX_TERMS: usize = 5000;
pub const SERIES_RELATIVE_CUTOFF: f64 = 1e-12;
/// Below this σ the series is replaced by the small-angle closed form.
pub const GAUSSIAN_FALLBACK_SIGMA: f64 = 0.02;
/// Where `S(θ)/S(0)` drops below this, series cancellation dominates and the closed form is used.
const TAIL_RATIO: f64 = 1e-8;
pub const CACHE_MAGIC: &[u8; 4] = b"IGS3";

/// Number of series terms needed for `t = σ²`, from the θ-independent envelope `(2l+1)² e^{−l(l+1)t}`.
pub fn series_terms(sigma: f64) -> Result<usize, DenoiseError> {
    let t = sigma * sigma;
    let mut partial = 0.0;
    for l in 0..=MAX_TERMS {
        let lf = l as f64;
        let envelope = (2.0 * lf + 1.0).powi(2) * (-lf * (lf + 1.0) * t).exp();
        partial += envelope;
        if l > 0 && envelope < SERIES_RELATIVE_CUTOFF * partial {
            return Ok(l + 1);
        }
    }
    Err(DenoiseError::Precision { sigma, terms: MAX_TERMS })
}

/// Truncated series `S(θ)`; `θ = 0` uses the limit `Σ (2l+1)² e^{−l(l+1)t}`.
pub fn series_s(theta: f64, sigma: f64, terms: usize) -> f64 {
    let t = sigma * sigma;
    let half = theta / 2.0;
    let sh = half.sin();
    let mut s = 0.0;
    for l in 0..terms {
        let lf = l as f64;
        let w = (2.0 * lf + 1.0) * (-lf * (lf + 1.0) * t).exp();
        s += if sh.abs() < 1e-12 { w * (2.0 * lf + 1.0) } else { w * ((lf + 0.5) * theta).sin() / sh };
    }
    s
}

/// Small-σ closed form `√π t^{-3/2} e^{t/4} (θ/2)/sin(θ/2) e^{−θ²/(4t)}`, in logs.
pub fn gaussian_log_s(theta: f64, sigma: f64) -> f64 {
    let t = sigma * sigma;
    let half = theta / 2.0;
    let ratio = if half.abs() < 1e-8 { 0.0 } else { (half / half.sin()).ln() };
    0.5 * PI.ln() - 1.5 * t.ln() + t / 4.0 + ratio - theta * theta / (4.0 * t)
}

/// `d/dθ` of [`gaussian_log_s`].
pub fn gaussian_score(theta: f64, sigma: f64) -> f64 {
    let t = sigma * sigma;
    if theta.abs() < 1e-8 {
        return 0.0;
    }
    -theta / (2.0 * t) + 1.0 / theta - 0.5 / (theta / 2.0).tan()
}

fn haar(theta: f64) -> f64 {
    (1.0 - theta.cos()) / PI
}

#[derive(Clone, Debug, PartialEq)]
pub struct IgSo3Table {
    pub sigma: f64,
    pub theta: Vec<f64>,
    pub density: Vec<f64>,
    /// Trapezoid integral of `density`, unnormalized (last entry ≈ 1).
    pub cdf: Vec<f64>,
    pub score: Vec<f64>,
}

impl IgSo3Table {
    /// Series table; errors when σ is too small for [`MAX_TERMS`].
    pub fn build(sigma: f64) -> Result<Self, DenoiseError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(DenoiseError::Domain(format!("σ_r must be positive, got {sigma}")));
        }
        let terms = series_terms(sigma)?;
        let theta = grid();
        let s0 = series_s(0.0, sigma, terms);
        let mut log_s = Vec::with_capacity(GRID_POINTS);
        let mut tail = Vec::with_capacity(GRID_POINTS);
        for &th in &theta {
            let s = series_s(th, sigma, terms);
            let in_tail = s < TAIL_RATIO * s0;
            tail.push(in_tail);
            log_s.push(if in_tail { gaussian_log_s(th, sigma) } else { s.ln() });
        }
        Ok(Self::assemble(sigma, theta, log_s, &tail))
    }

    /// Closed-form table for small σ.
    pub fn build_gaussian_angle(sigma: f64) -> Result<Self, DenoiseError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(DenoiseError::Domain(format!("σ_r must be positive, got {sigma}")));
        }
        let theta = grid();
        let log_s = theta.iter().map(|&th| gaussian_log_s(th, sigma)).collect();
        Ok(Self::assemble(sigma, theta, log_s, &[true; GRID_POINTS]))
    }

    /// Series above [`GAUSSIAN_FALLBACK_SIGMA`], closed form below.
    pub fn build_auto(sigma: f64) -> Result<Self, DenoiseError> {
        if sigma < GAUSSIAN_FALLBACK_SIGMA {
            Self::build_gaussian_angle(sigma)
        } else {
            Self::build(sigma)
        }
    }

    fn assemble(sigma: f64, theta: Vec<f64>, log_s: Vec<f64>, analytic: &[bool]) -> Self {
        let n = theta.len();
        let dt = theta[1] - theta[0];
        let density: Vec<f64> = theta.iter().zip(&log_s).map(|(&th, &ls)| haar(th) * ls.exp()).collect();
        let mut cdf = vec![0.0; n];
        for k in 1..n {
            cdf[k] = cdf[k - 1] + 0.5 * dt * (density[k - 1] + density[k]);
        }
        let mut score = vec![0.0; n];
        for k in 1..n {
            score[k] = if analytic[k] {
                gaussian_score(theta[k], sigma)
            } else if k + 1 < n {
                (log_s[k + 1] - log_s[k - 1]) / (2.0 * dt)
            } else {
                (3.0 * log_s[k] - 4.0 * log_s[k - 1] + log_s[k - 2]) / (2.0 * dt)
            };
        }
        Self { sigma, theta, density, cdf, score }
    }

    fn dt(&self) -> f64 {
        self.theta[1] - self.theta[0]
    }

    fn interp(&self, values: &[f64], theta: f64) -> f64 {
        let x = theta / self.dt();
        let k = (x.floor() as usize).min(self.theta.len() - 2);
        let w = x - k as f64;
        values[k] * (1.0 - w) + values[k + 1] * w
    }

    /// Draws `ω = θ ω̂` with θ by inverse CDF and ω̂ uniform on the sphere.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        if self.resolves_peak() {
            return self.sample_grid(rng);
        }
        // θ² e^{−θ²/4σ²} up to O(θ²): an isotropic Gaussian of variance 2σ² per axis.
        let scale = std::f64::consts::SQRT_2 * self.sigma;
        loop {
            let w: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let w = [scale * w[0], scale * w[1], scale * w[2]];
            if (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt() <= PI {
                return w;
            }
        }
    }

    /// Below the fallback σ the density peak spans too few grid points, so draws,
    /// densities and scores come from the closed form instead of the table.
    pub fn resolves_peak(&self) -> bool {
        self.sigma >= GAUSSIAN_FALLBACK_SIGMA
    }

    fn sample_grid<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let total = *self.cdf.last().expect("non-empty grid");
        let u: f64 = rng.random::<f64>() * total;
        let k = self.cdf.partition_point(|&c| c <= u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        let theta = (self.theta[k - 1] + w * self.dt()).min(PI);
        loop {
            let d: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if n > 1e-12 {
                return [theta * d[0] / n, theta * d[1] / n, theta * d[2] / n];
            }
        }
    }

    pub fn density_at(&self, theta: f64) -> f64 {
        let theta = theta.clamp(0.0, PI);
        if self.resolves_peak() {
            self.interp(&self.density, theta)
        } else {
            haar(theta) * gaussian_log_s(theta, self.sigma).exp()
        }
    }

    pub fn score_at(&self, theta: f64) -> f64 {
        let theta = theta.clamp(0.0, PI);
        if self.resolves_peak() {
            self.interp(&self.score, theta)
        } else {
            gaussian_score(theta, self.sigma)
        }
    }

    /// `s(|ω|) ω̂`; zero at `ω = 0`.
    pub fn score(&self, omega: &Vec3) -> Result<Vec3, DenoiseError> {
        let theta = (omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2]).sqrt();
        if theta > PI * (1.0 + 1e-12) {
            return Err(DenoiseError::Domain(format!("rotation angle {theta} exceeds π")));
        }
        if theta == 0.0 {
            return Ok([0.0; 3]);
        }
        let s = self.score_at(theta) / theta;
        Ok([s * omega[0], s * omega[1], s * omega[2]])
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_f64::<LE>(self.sigma)?;
        w.write_u32::<LE>(self.theta.len() as u32)?;
        for arr in [&self.theta, &self.density, &self.cdf, &self.score] {
            for &v in arr.iter() {
                w.write_f64::<LE>(v)?;
            }
        }
        w.flush()
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, DenoiseError> {
        let fmt = |e: std::io::Error| DenoiseError::Format(format!("IGS3 cache: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != CACHE_MAGIC {
            return Err(DenoiseError::Format("IGS3 cache: bad magic".into()));
        }
        let sigma = r.read_f64::<LE>().map_err(fmt)?;
        let n = r.read_u32::<LE>().map_err(fmt)? as usize;
        if n < 3 {
            return Err(DenoiseError::Format(format!("IGS3 cache: grid of {n} points")));
        }
        let mut arrays = Vec::with_capacity(4);
        for _ in 0..4 {
            let mut a = vec![0.0; n];
            for v in &mut a {
                *v = r.read_f64::<LE>().map_err(fmt)?;
            }
            arrays.push(a);
        }
        let score = arrays.pop().expect("four arrays");
        let cdf = arrays.pop().expect("four arrays");
        let density = arrays.pop().expect("four arrays");
        let theta = arrays.pop().expect("four arrays");
        Ok(Self { sigma, theta, density, cdf, score })
    }
}

fn grid() -> Vec<f64> {
    (0..GRID_POINTS).map(|k| PI * k as f64 / (GRID_POINTS - 1) as f64).collect()
}
