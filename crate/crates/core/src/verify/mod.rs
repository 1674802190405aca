//! The property suite: symmetry, gradients, kernel equivalence and oracle checks.
//!
//! Every check returns [`CheckReport`]s instead of panicking, carries its seed, and
//! accepts a deliberate defect through [`SuiteFaults`] so mutation tests can prove it bites.

mod equivariance;
mod gradients;
mod igso3;
mod kernel;
mod memory;
mod reductions;
pub mod tolerances;
pub mod toy;

pub use equivariance::{check_equivariance, random_rotation};
pub use gradients::{check_gradients, GradientScope};
pub use igso3::{check_igso3, series_exp};
pub use kernel::{check_kernel_equivalence, KernelCase};
pub use memory::{check_attention_memory, measure_attention_memory, MemoryRow};
pub use reductions::{check_reductions, check_rigid_examples};

use std::io::Write;
use std::time::Instant;

use crate::model::{ModelConfig, ModelParams};
use crate::train::stream_rng;

/// Outcome of one named check. `value` is the measured figure compared against `tolerance`,
/// in the direction the check states (usually `value ≤ tolerance`).
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub ms: f64,
    pub detail: String,
}

impl CheckReport {
    /// Passes when `value ≤ tolerance`; NaN fails.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64, seed: u64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed: value <= tolerance, value, tolerance, seed, ms: 0.0, detail: detail.into() }
    }

    /// Passes when `value > tolerance`; NaN fails.
    pub fn above(name: impl Into<String>, value: f64, tolerance: f64, seed: u64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed: value > tolerance, value, tolerance, seed, ms: 0.0, detail: detail.into() }
    }

    /// Passes when `lo ≤ value ≤ hi`; `tolerance` records `hi`.
    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64, seed: u64, detail: impl Into<String>) -> Self {
        let passed = (lo..=hi).contains(&value);
        Self { name: name.into(), passed, value, tolerance: hi, seed, ms: 0.0, detail: detail.into() }
    }

    pub fn status(&self) -> &'static str {
        if self.passed {
            "pass"
        } else {
            "fail"
        }
    }

    /// Check family, the part of the name before the first dot.
    pub fn group(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }
}

pub const REPORT_HEADER: &str = "name,status,value,tolerance,seed,ms";

pub fn write_report<W: Write>(mut w: W, reports: &[CheckReport]) -> std::io::Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(w, "{},{},{:e},{:e},{},{:.1}", r.name, r.status(), r.value, r.tolerance, r.seed, r.ms)?;
    }
    w.flush()
}

/// Deliberate defects, one per check family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SuiteFaults {
    /// Initial vector features consume absolute coordinates.
    pub absolute_vector_init: bool,
    /// SiLU backward drops its second term.
    pub faulty_silu_grad: bool,
    /// Tiled attention skips the running-max rescale.
    pub skip_rescale: bool,
    /// Rotation angles are drawn from a table at 1.2 σ_r.
    pub widened_sampler: bool,
    /// Block perturbation stretches relative coordinates by 1e-6.
    pub stretched_blocks: bool,
    /// The "tiled" memory slot runs the naive kernel.
    pub naive_as_tiled: bool,
}

pub const GROUPS: [&str; 6] = ["equivariance", "gradients", "kernel", "igso3", "reductions", "memory"];

/// Suite configuration: model profile, seed and injected defects.
#[derive(Clone, Debug)]
pub struct Suite {
    pub model: ModelConfig,
    pub seed: u64,
    pub faults: SuiteFaults,
    pub equivariance_trials: usize,
    pub gradient_scope: GradientScope,
}

impl Suite {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        let gradient_scope = if model.h <= ModelConfig::tiny().h { GradientScope::Exhaustive } else { GradientScope::default() };
        Self { model, seed, faults: SuiteFaults::default(), equivariance_trials: 100, gradient_scope }
    }

    fn params(&self) -> ModelParams {
        ModelParams::init(&self.model, &mut stream_rng(self.seed, u64::MAX))
    }

    /// Runs one group by name; unknown names yield `None`.
    pub fn run_group(&self, group: &str) -> Option<Vec<CheckReport>> {
        let start = Instant::now();
        let f = &self.faults;
        let mut out = match group {
            "equivariance" => {
                vec![check_equivariance(&self.model, &self.params(), self.equivariance_trials, self.seed, f.absolute_vector_init)]
            }
            "gradients" => check_gradients(&self.model, &self.params(), self.seed, self.gradient_scope, f.faulty_silu_grad),
            "kernel" => vec![check_kernel_equivalence(self.seed, f.skip_rescale)],
            "igso3" => check_igso3(self.seed, f.widened_sampler),
            "reductions" => {
                let mut r = check_reductions(self.seed, 50, f.stretched_blocks);
                r.push(check_rigid_examples());
                r
            }
            "memory" => check_attention_memory(self.seed, f.naive_as_tiled),
            _ => return None,
        };
        // Reports of one group share its wall time when the check does not time itself.
        let ms = start.elapsed().as_secs_f64() * 1e3;
        for r in &mut out {
            if r.ms == 0.0 {
                r.ms = ms;
            }
        }
        Some(out)
    }

    /// Runs `only` (all groups when empty), in the fixed group order.
    pub fn run(&self, only: &[String]) -> Result<Vec<CheckReport>, String> {
        if let Some(bad) = only.iter().find(|g| !GROUPS.contains(&g.as_str())) {
            return Err(format!("unknown check {bad:?}; expected one of {}", GROUPS.join(", ")));
        }
        let mut out = Vec::new();
        for g in GROUPS {
            if only.is_empty() || only.iter().any(|o| o == g) {
                out.extend(self.run_group(g).expect("known group"));
            }
        }
        Ok(out)
    }
}

/// Relative deviation `max|a − b| / max(max|b|, floor)`.
pub(crate) fn relative_deviation(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().fold(floor, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    diff / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_csv_layout() {
        let r = CheckReport::at_most("kernel", 1e-13, 1e-10, 7, "");
        let mut buf = Vec::new();
        write_report(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert!(lines[1].starts_with("kernel,pass,1e-13,1e-10,7,"));
        assert!(!CheckReport::at_most("x", f64::NAN, 1.0, 0, "").passed);
        assert!(!CheckReport::above("x", f64::NAN, 0.01, 0, "").passed);
    }

    #[test]
    fn unknown_groups_are_rejected() {
        let s = Suite::new(ModelConfig::tiny(), 0);
        assert!(s.run(&["bogus".into()]).is_err());
    }
}
