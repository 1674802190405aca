use rand::Rng;
use rand_distr::StandardNormal;

use super::tolerances::{GRADIENT_FLOOR_REL, GRADIENT_LINEAR_REL, GRADIENT_REL, GRADIENT_STEP};
use super::toy::toy_molecule;
use super::CheckReport;
use crate::autodiff::Tape;
use crate::denoise::{loss_on_tape, perturb_graph, IgSo3Table, NoiseMode, NoiseSample};
use crate::graph::{build_graph, GraphBatch, MolGraph};
use crate::model::{force_head, forward, ForwardOptions, ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::train::stream_rng;
use crate::RawStructure;

const NOISE_SIGMA: f64 = 0.3;

/// Which parameter entries are compared against finite differences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientScope {
    /// Every entry of every tensor.
    Exhaustive,
    /// Per tensor: one random-direction probe covering all entries plus `entries` sampled entries.
    Directional { entries: usize },
}

impl Default for GradientScope {
    fn default() -> Self {
        GradientScope::Directional { entries: 2 }
    }
}

/// A fixed denoising problem: one tiny graph, its noise draw and the loss mode.
struct Problem<'a> {
    cfg: &'a ModelConfig,
    batch: GraphBatch,
    samples: Vec<NoiseSample>,
    mode: NoiseMode,
    faulty: bool,
}

impl Problem<'_> {
    fn tape(&self) -> Tape {
        if self.faulty {
            Tape::with_faulty_silu_grad()
        } else {
            Tape::new()
        }
    }

    fn loss(&self, params: &ModelParams) -> f64 {
        let mut tape = self.tape();
        let p = params.bind(&mut tape);
        self.build(&mut tape, &p).map_or(f64::NAN, |v| tape.value(v).item())
    }

    fn build(&self, tape: &mut Tape, p: &crate::model::BoundParams) -> crate::tensor::Result<crate::Var> {
        let layers = forward(tape, p, self.cfg, &self.batch, ForwardOptions::default())?;
        let f = force_head(tape, p, self.cfg, *layers.last().expect("embedding state"), &self.batch)?;
        Ok(loss_on_tape(tape, f, &self.batch, &self.samples, self.mode)?.total)
    }

    fn value_and_grads(&self, params: &ModelParams) -> Option<(f64, Vec<Tensor>)> {
        let mut tape = self.tape();
        let p = params.bind(&mut tape);
        let total = self.build(&mut tape, &p).ok()?;
        let grads = tape.grad(total).ok()?;
        Some((tape.value(total).item(), p.collect(&grads, &tape)))
    }
}

/// Tiny graph of at most 8 atoms with one multi-atom block, so every loss term is active.
fn tiny_graph(cfg: &ModelConfig, seed: u64) -> MolGraph {
    let mut rng = stream_rng(seed, 0x6A);
    let mol = toy_molecule(2, &mut rng);
    build_graph(&RawStructure::Molecule(mol), cfg.thresholds()).expect("toy molecules are well formed")
}

fn problem<'a>(cfg: &'a ModelConfig, seed: u64, mode: NoiseMode, faulty: bool) -> Problem<'a> {
    let g = tiny_graph(cfg, seed);
    let table = IgSo3Table::build_auto(NOISE_SIGMA).expect("valid sigma");
    let mut rng = stream_rng(seed, 0x6B);
    let sample = perturb_graph(&g, mode, NOISE_SIGMA, Some(&table), &mut rng);
    let noisy = g.with_coords(sample.perturbed.clone(), cfg.thresholds());
    Problem { cfg, batch: GraphBatch::from_graphs(&[noisy]), samples: vec![sample], mode, faulty }
}

fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of the loss along `dir` in tensor `t`.
fn central(pb: &Problem, params: &ModelParams, t: usize, dir: &[f64]) -> f64 {
    let shifted = |sign: f64| {
        let mut p = params.clone();
        for (x, d) in p.tensors_mut()[t].data_mut().iter_mut().zip(dir) {
            *x += sign * GRADIENT_STEP * d;
        }
        pb.loss(&p)
    };
    (shifted(1.0) - shifted(-1.0)) / (2.0 * GRADIENT_STEP)
}

fn unit_entry(len: usize, i: usize) -> Vec<f64> {
    let mut d = vec![0.0; len];
    d[i] = 1.0;
    d
}

/// Worst relative error over the scope, with the parameter where it occurred.
fn worst_error(pb: &Problem, params: &ModelParams, scope: GradientScope, seed: u64) -> (f64, String) {
    let Some((loss, grads)) = pb.value_and_grads(params) else {
        return (f64::INFINITY, "forward failed".into());
    };
    let floor = GRADIENT_FLOOR_REL * loss.abs().max(1.0);
    let mut rng = stream_rng(seed, 0x6C);
    let mut worst = (0.0f64, String::new());
    let mut note = |err: f64, what: String| {
        if !(err <= worst.0) {
            worst = (err, what);
        }
    };
    for (t, (name, g)) in params.names().iter().zip(&grads).enumerate() {
        let len = g.data().len();
        match scope {
            GradientScope::Exhaustive => {
                for i in 0..len {
                    let fd = central(pb, params, t, &unit_entry(len, i));
                    note(rel_error(g.data()[i], fd, floor), format!("{name}[{i}]"));
                }
            }
            GradientScope::Directional { entries } => {
                let mut dir: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
                let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                dir.iter_mut().for_each(|x| *x /= n);
                let analytic: f64 = g.data().iter().zip(&dir).map(|(a, b)| a * b).sum();
                note(rel_error(analytic, central(pb, params, t, &dir), floor), format!("{name} direction"));
                for _ in 0..entries.min(len) {
                    let i = rng.random_range(0..len);
                    let fd = central(pb, params, t, &unit_entry(len, i));
                    note(rel_error(g.data()[i], fd, floor), format!("{name}[{i}]"));
                }
            }
        }
    }
    worst
}

/// Exactness on a linear probe `L = Σ w ⊙ x` at `w = 0`: the difference quotient has neither
/// truncation error nor cancellation, so only one rounding of `h·x` remains.
fn linear_probe(seed: u64) -> f64 {
    let mut rng = stream_rng(seed, 0x6D);
    let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = vec![0.0; 12];
    let eval = |w: &[f64]| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let wv = tape.leaf(Tensor::new(vec![3, 4], w.to_vec()).expect("shape"));
        let xv = tape.constant(Tensor::new(vec![3, 4], x.clone()).expect("shape"));
        let m = tape.mul(wv, xv).expect("same shape");
        let l = tape.sum(m);
        let g = tape.grad(l).expect("scalar").wrt(wv, &tape);
        (tape.value(l).item(), g.data().to_vec())
    };
    let (_, g) = eval(&w);
    (0..w.len())
        .map(|i| {
            let mut up = w.clone();
            let mut down = w.clone();
            up[i] += GRADIENT_STEP;
            down[i] -= GRADIENT_STEP;
            let fd = (eval(&up).0 - eval(&down).0) / (2.0 * GRADIENT_STEP);
            rel_error(g[i], fd, 1.0)
        })
        .fold(0.0, f64::max)
}

/// Autodiff against central differences for the three denoising losses.
pub fn check_gradients(cfg: &ModelConfig, params: &ModelParams, seed: u64, scope: GradientScope, faulty_silu_grad: bool) -> Vec<CheckReport> {
    let mut out = vec![CheckReport::at_most("gradients.linear", linear_probe(seed), GRADIENT_LINEAR_REL, seed, "")];
    for mode in [NoiseMode::Atom, NoiseMode::BlockT, NoiseMode::BlockC] {
        let pb = problem(cfg, seed, mode, faulty_silu_grad);
        let (err, at) = worst_error(&pb, params, scope, seed);
        out.push(CheckReport::at_most(format!("gradients.{}", mode.name()), err, GRADIENT_REL, seed, format!("worst at {at}")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_graph_has_multi_atom_blocks() {
        let g = tiny_graph(&ModelConfig::tiny(), 0);
        assert!(g.n_atoms() <= 8);
        assert!(g.members().iter().any(|m| m.len() >= 2));
    }

    #[test]
    fn unused_parameters_report_zero_against_zero() {
        let cfg = ModelConfig::tiny();
        let params = ModelParams::init(&cfg, &mut stream_rng(0, u64::MAX));
        let pb = problem(&cfg, 0, NoiseMode::BlockC, false);
        let (_, grads) = pb.value_and_grads(&params).unwrap();
        let t = params.names().iter().position(|n| n.starts_with("phi_e")).unwrap();
        assert!(grads[t].data().iter().all(|&g| g == 0.0));
        let fd = central(&pb, &params, t, &unit_entry(grads[t].data().len(), 0));
        assert_eq!(fd, 0.0);
    }

    #[test]
    fn directional_scope_passes_and_catches_faulty_silu() {
        let cfg = ModelConfig::tiny();
        let params = ModelParams::init(&cfg, &mut stream_rng(4, u64::MAX));
        let scope = GradientScope::Directional { entries: 1 };
        for r in check_gradients(&cfg, &params, 4, scope, false) {
            assert!(r.passed, "{r:?}");
        }
        let bad = check_gradients(&cfg, &params, 4, scope, true);
        assert!(bad.iter().skip(1).all(|r| !r.passed), "{bad:?}");
    }
}
