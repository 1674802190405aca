//! Denoising losses. Each is a mean of squared 3-norms over its units
//! (atoms, blocks, or rotation-eligible blocks), pooled over a batch.

use std::rc::Rc;

use super::rigid::{inertia, mat_mul, pseudo_inverse, relative_positions, skew, sub, Mat3};
use super::{angular_acceleration, block_mean, block_sizes, block_torque, NoiseMode, NoiseSample};
use crate::autodiff::{Tape, Var};
use crate::graph::GraphBatch;
use crate::molio::Vec3;
use crate::tensor::{Result, Tensor, TensorError};

fn sq_dist(a: &Vec3, b: &Vec3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn scaled_diff(a: &Vec3, b: &Vec3, inv: f64) -> Vec3 {
    let d = sub(a, b);
    [d[0] * inv, d[1] * inv, d[2] * inv]
}

/// `mean_i |F'_i − (z'_i − z_i)/σ_t²|²`.
pub fn loss_atom(forces: &[Vec3], s: &NoiseSample) -> f64 {
    let inv = 1.0 / (s.sigma_t * s.sigma_t);
    let total: f64 = forces
        .iter()
        .zip(s.perturbed.iter().zip(&s.clean))
        .map(|(f, (zp, z))| sq_dist(f, &scaled_diff(zp, z, inv)))
        .sum();
    total / forces.len().max(1) as f64
}

/// `mean_b |μ_b(F') − (μ_b(Z') − Z_b)/σ_t²|²`.
pub fn loss_block_t(forces: &[Vec3], s: &NoiseSample, block_of: &[usize], m: usize) -> f64 {
    let inv = 1.0 / (s.sigma_t * s.sigma_t);
    let fb = block_mean(forces, block_of, m);
    let zpb = block_mean(&s.perturbed, block_of, m);
    let zb = block_mean(&s.clean, block_of, m);
    let total: f64 = (0..m).map(|b| sq_dist(&fb[b], &scaled_diff(&zpb[b], &zb[b], inv))).sum();
    total / m.max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationLoss {
    pub value: f64,
    pub eligible_blocks: usize,
}

impl RotationLoss {
    /// No block has two or more atoms, so the loss carries no signal.
    pub fn vacuous(&self) -> bool {
        self.eligible_blocks == 0
    }
}

/// `mean over blocks with ≥ 2 atoms of |α_b − score(ω_b)|²`, with `α_b` computed about `μ_b(Z')`.
pub fn loss_block_r(forces: &[Vec3], s: &NoiseSample, block_of: &[usize], m: usize) -> RotationLoss {
    let sizes = block_sizes(block_of, m);
    let torque = block_torque(forces, &s.perturbed, block_of, m);
    let alpha = angular_acceleration(&torque, &inertia(&s.perturbed, block_of, m));
    let zero = vec![[0.0; 3]; m];
    let score = s.score.as_ref().unwrap_or(&zero);
    let mut total = 0.0;
    let mut eligible = 0;
    for b in 0..m {
        if sizes[b] > 1 {
            total += sq_dist(&alpha[b], &score[b]);
            eligible += 1;
        }
    }
    RotationLoss { value: if eligible == 0 { 0.0 } else { total / eligible as f64 }, eligible_blocks: eligible }
}

pub fn loss_block_c(forces: &[Vec3], s: &NoiseSample, block_of: &[usize], m: usize) -> f64 {
    loss_block_t(forces, s, block_of, m) + loss_block_r(forces, s, block_of, m).value
}

/// Per-atom maps `P_j = I_b⁺ [u_j]×` so that `α_b = Σ_{j∈b} P_j f_j`.
pub fn rotation_maps(perturbed: &[Vec3], block_of: &[usize], m: usize) -> Vec<Mat3> {
    let centers = block_mean(perturbed, block_of, m);
    let u = relative_positions(perturbed, block_of, &centers);
    let pinv: Vec<Mat3> = inertia(perturbed, block_of, m).iter().map(pseudo_inverse).collect();
    u.iter().zip(block_of).map(|(uj, &b)| mat_mul(&pinv[b], &skew(uj))).collect()
}

/// Loss nodes for one batch. In atom mode `translation` holds the atom loss.
pub struct LossVars {
    pub total: Var,
    pub translation: Var,
    pub rotation: Option<Var>,
    pub eligible_blocks: usize,
}

fn vec_tensor(rows: &[Vec3]) -> Result<Tensor> {
    Tensor::new(vec![rows.len(), 3], rows.iter().flatten().copied().collect())
}

/// Selected denoising loss on the force rows of `batch`, one sample per graph.
pub fn loss_on_tape(
    tape: &mut Tape,
    forces: Var,
    batch: &GraphBatch,
    samples: &[NoiseSample],
    mode: NoiseMode,
) -> Result<LossVars> {
    if samples.len() != batch.n_graphs() {
        return Err(TensorError::Contract(format!("{} samples for {} graphs", samples.len(), batch.n_graphs())));
    }
    let real: Rc<[usize]> = batch.real_rows().into();
    let fr = tape.gather_rows(forces, real.clone())?;
    let n_real = real.len();
    let squared_mean = |tape: &mut Tape, pred: Var, target: Tensor, count: usize| -> Result<Var> {
        let t = tape.constant(target);
        let d = tape.sub(pred, t)?;
        let sq = tape.square(d);
        let s = tape.sum(sq);
        Ok(tape.scale(s, 1.0 / count.max(1) as f64))
    };
    if mode == NoiseMode::Atom {
        let mut target = Vec::with_capacity(n_real);
        for s in samples {
            let inv = 1.0 / (s.sigma_t * s.sigma_t);
            target.extend(s.perturbed.iter().zip(&s.clean).map(|(zp, z)| scaled_diff(zp, z, inv)));
        }
        let l = squared_mean(tape, fr, vec_tensor(&target)?, n_real)?;
        return Ok(LossVars { total: l, translation: l, rotation: None, eligible_blocks: 0 });
    }

    let nb = batch.n_blocks();
    let block_ids: Rc<[usize]> = real.iter().map(|&r| batch.block_of[r]).collect();
    let mut inv_size = Vec::with_capacity(nb);
    let mut t_target = Vec::with_capacity(nb);
    for (g, s) in samples.iter().enumerate() {
        let local: Vec<usize> = (0..batch.sizes[g]).map(|i| batch.block_of[g * batch.n_max + i] - batch.block_offsets[g]).collect();
        let m = batch.block_offsets[g + 1] - batch.block_offsets[g];
        let inv = 1.0 / (s.sigma_t * s.sigma_t);
        let zpb = block_mean(&s.perturbed, &local, m);
        let zb = block_mean(&s.clean, &local, m);
        t_target.extend((0..m).map(|b| scaled_diff(&zpb[b], &zb[b], inv)));
        inv_size.extend(block_sizes(&local, m).iter().map(|&n| 1.0 / n.max(1) as f64));
    }
    let sums = tape.segment_sum(fr, block_ids.clone(), nb)?;
    let inv = tape.constant(Tensor::new(vec![nb, 1], inv_size)?);
    let means = tape.mul_col(sums, inv)?;
    let lt = squared_mean(tape, means, vec_tensor(&t_target)?, nb)?;
    if mode == NoiseMode::BlockT {
        return Ok(LossVars { total: lt, translation: lt, rotation: None, eligible_blocks: 0 });
    }

    let mut maps = Vec::with_capacity(n_real * 9);
    let mut eligible = Vec::new();
    let mut r_target = Vec::new();
    for (g, s) in samples.iter().enumerate() {
        let local: Vec<usize> = (0..batch.sizes[g]).map(|i| batch.block_of[g * batch.n_max + i] - batch.block_offsets[g]).collect();
        let m = batch.block_offsets[g + 1] - batch.block_offsets[g];
        for p in rotation_maps(&s.perturbed, &local, m) {
            maps.extend(p.iter().flatten());
        }
        let sizes = block_sizes(&local, m);
        let zero = vec![[0.0; 3]; m];
        let score = s.score.as_ref().unwrap_or(&zero);
        for b in 0..m {
            if sizes[b] > 1 {
                eligible.push(batch.block_offsets[g] + b);
                r_target.push(score[b]);
            }
        }
    }
    let n_elig = eligible.len();
    let rotation = if n_elig == 0 {
        tape.constant(Tensor::scalar(0.0))
    } else {
        let alpha = tape.row_linear(fr, Rc::new(Tensor::new(vec![n_real, 3, 3], maps)?))?;
        let alpha_b = tape.segment_sum(alpha, block_ids, nb)?;
        let picked = tape.gather_rows(alpha_b, eligible.into())?;
        squared_mean(tape, picked, vec_tensor(&r_target)?, n_elig)?
    };
    let total = tape.add(lt, rotation)?;
    Ok(LossVars { total, translation: lt, rotation: Some(rotation), eligible_blocks: n_elig })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::{perturb_atom, perturb_block_complete, IgSo3Table};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coords(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect()
    }

    #[test]
    fn exact_target_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = coords(5, &mut rng);
        let s = perturb_atom(&z, 0.04, &mut rng);
        let inv = 1.0 / (0.04f64 * 0.04);
        let f: Vec<Vec3> = s.perturbed.iter().zip(&s.clean).map(|(a, b)| scaled_diff(a, b, inv)).collect();
        assert_eq!(loss_atom(&f, &s), 0.0);
        let zero = vec![[0.0; 3]; 5];
        let plug: f64 = s.perturbed.iter().zip(&s.clean).map(|(a, b)| sq_dist(a, b)).sum::<f64>() / 5.0 * inv * inv;
        assert!((loss_atom(&zero, &s) - plug).abs() <= 1e-9 * plug);
    }

    #[test]
    fn singleton_rotation_loss_is_vacuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = coords(4, &mut rng);
        let table = IgSo3Table::build(0.1).unwrap();
        let s = perturb_block_complete(&z, &[0, 1, 2, 3], 4, 0.04, Some(&table), &mut rng);
        let r = loss_block_r(&coords(4, &mut rng), &s, &[0, 1, 2, 3], 4);
        assert!(r.vacuous());
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn rotation_maps_reproduce_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = coords(7, &mut rng);
        let f = coords(7, &mut rng);
        let block_of = [0, 0, 0, 1, 1, 2, 2];
        let alpha = angular_acceleration(&block_torque(&f, &z, &block_of, 3), &inertia(&z, &block_of, 3));
        let maps = rotation_maps(&z, &block_of, 3);
        let mut via = vec![[0.0; 3]; 3];
        for j in 0..7 {
            let v = super::super::rigid::mat_vec(&maps[j], &f[j]);
            for c in 0..3 {
                via[block_of[j]][c] += v[c];
            }
        }
        for b in 0..3 {
            for c in 0..3 {
                assert!((via[b][c] - alpha[b][c]).abs() <= 1e-10 * (1.0 + alpha[b][c].abs()));
            }
        }
    }

    fn batch_and_samples(mode: NoiseMode) -> (GraphBatch, Vec<NoiseSample>) {
        use crate::graph::{build_graph, Thresholds};
        use crate::molio::{parse_xyz, RawStructure};
        let ethanol = "9\n\nC -0.05 0.58 0.0\nC -1.27 -0.33 0.0\nO 1.15 -0.19 0.0\nH -0.08 1.23 0.88\nH -0.08 1.23 -0.88\nH -2.18 0.27 0.0\nH -1.25 -0.97 0.88\nH -1.25 -0.97 -0.88\nH 1.94 0.37 0.0\n";
        let water = "3\n\nO 0.0 0.0 0.0\nH 0.96 0.0 0.0\nH -0.24 0.93 0.0\n";
        let graphs: Vec<_> = [ethanol, water]
            .iter()
            .map(|x| build_graph(&RawStructure::Molecule(parse_xyz(x).unwrap()), Thresholds::default()).unwrap())
            .collect();
        let table = IgSo3Table::build(0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples = graphs.iter().map(|g| crate::denoise::perturb_graph(g, mode, 0.1, Some(&table), &mut rng)).collect();
        (GraphBatch::padded(&graphs, 10), samples)
    }

    fn forces(batch: &GraphBatch) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        Tensor::new(vec![batch.rows(), 3], (0..batch.rows() * 3).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap()
    }

    fn graph_forces(f: &Tensor, batch: &GraphBatch, g: usize) -> Vec<Vec3> {
        (0..batch.sizes[g]).map(|i| {
            let r = g * batch.n_max + i;
            [f.data()[3 * r], f.data()[3 * r + 1], f.data()[3 * r + 2]]
        }).collect()
    }

    #[test]
    fn tape_loss_matches_pooled_loops() {
        for mode in [NoiseMode::Atom, NoiseMode::BlockT, NoiseMode::BlockC] {
            let (batch, samples) = batch_and_samples(mode);
            let f = forces(&batch);
            let (mut t_sum, mut t_units, mut r_sum, mut r_units) = (0.0, 0, 0.0, 0);
            for (g, s) in samples.iter().enumerate() {
                let fg = graph_forces(&f, &batch, g);
                let graph = batch.graph(g);
                let m = graph.n_blocks();
                match mode {
                    NoiseMode::Atom => {
                        t_sum += loss_atom(&fg, s) * fg.len() as f64;
                        t_units += fg.len();
                    }
                    _ => {
                        t_sum += loss_block_t(&fg, s, &graph.block_of, m) * m as f64;
                        t_units += m;
                        let r = loss_block_r(&fg, s, &graph.block_of, m);
                        r_sum += r.value * r.eligible_blocks as f64;
                        r_units += r.eligible_blocks;
                    }
                }
            }
            let mut expect = t_sum / t_units as f64;
            if mode == NoiseMode::BlockC {
                assert!(r_units > 0);
                expect += r_sum / r_units as f64;
            }
            let mut tape = Tape::new();
            let fv = tape.leaf(f.clone());
            let l = loss_on_tape(&mut tape, fv, &batch, &samples, mode).unwrap();
            let got = tape.value(l.total).data()[0];
            assert!((got - expect).abs() <= 1e-10 * expect.abs().max(1.0), "{mode:?}: {got} vs {expect}");
            assert_eq!(l.rotation.is_some(), mode == NoiseMode::BlockC);

            // Padded rows carry no gradient; a real row's gradient matches a difference quotient.
            let grads = tape.grad(l.total).unwrap();
            let gf = grads.wrt(fv, &tape);
            let pad = batch.n_max * 2 - 1;
            assert!((0..3).all(|c| gf.data()[3 * pad + c] == 0.0));
            let h = 1e-6;
            let eval = |delta: f64| {
                let mut fp = f.clone();
                fp.data_mut()[4] += delta;
                let mut tape = Tape::new();
                let fv = tape.leaf(fp);
                let l = loss_on_tape(&mut tape, fv, &batch, &samples, mode).unwrap();
                tape.value(l.total).data()[0]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - gf.data()[4]).abs() <= 1e-5 * fd.abs().max(1e-4), "{mode:?}: {fd} vs {}", gf.data()[4]);
        }
    }
}
