use rand::Rng;

use super::tolerances::REDUCTION_ABS;
use super::toy::toy_graphs;
use super::CheckReport;
use crate::denoise::{
    angular_acceleration, block_mean, block_torque, inertia, loss_atom, loss_block_c, loss_block_r, loss_block_t,
    perturb_atom, perturb_block_complete, perturb_block_translation, IgSo3Table,
};
use crate::graph::Thresholds;
use crate::train::stream_rng;
use crate::Vec3;

const SIGMA_T: f64 = 0.3;
const SIGMA_R: f64 = 0.5;
/// Relative stretch applied by the injected defect.
const STRETCH: f64 = 1e-6;

fn random_points<R: Rng + ?Sized>(n: usize, side: f64, rng: &mut R) -> Vec<Vec3> {
    (0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(-side..side))).collect()
}

fn max_abs(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).abs())).fold(0.0, f64::max)
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Scales every atom's offset from its block centroid by `1 + STRETCH`.
fn stretch(z: &[Vec3], block_of: &[usize], m: usize) -> Vec<Vec3> {
    let c = block_mean(z, block_of, m);
    z.iter().zip(block_of).map(|(p, &b)| [0, 1, 2].map(|k| c[b][k] + (1.0 + STRETCH) * (p[k] - c[b][k]))).collect()
}

/// Singleton-block equivalence over `graphs` random graphs, rigidity of complete block noise, and loss additivity.
pub fn check_reductions(seed: u64, graphs: usize, stretched_blocks: bool) -> Vec<CheckReport> {
    let mut rng = stream_rng(seed, 0x7E);
    let mut perturb_dev = 0.0f64;
    let mut loss_dev = 0.0f64;
    for g in 0..graphs as u64 {
        let n = rng.random_range(1..=24);
        let z = random_points(n, 4.0, &mut rng);
        let singletons: Vec<usize> = (0..n).collect();
        let a = perturb_atom(&z, SIGMA_T, &mut stream_rng(seed, g));
        let b = perturb_block_translation(&z, &singletons, n, SIGMA_T, &mut stream_rng(seed, g));
        let moved = if stretched_blocks { stretch(&b.perturbed, &singletons, n) } else { b.perturbed.clone() };
        perturb_dev = perturb_dev.max(max_abs(&a.perturbed, &moved));
        let forces = random_points(n, 10.0, &mut rng);
        let (la, lb) = (loss_atom(&forces, &a), loss_block_t(&forces, &b, &singletons, n));
        loss_dev = loss_dev.max((la - lb).abs() / la.abs().max(1.0));
    }

    let table = IgSo3Table::build_auto(SIGMA_R).expect("valid sigma");
    let mut rigid_dev = 0.0f64;
    let mut decomposition = 0.0f64;
    for (k, g) in toy_graphs(graphs, seed, Thresholds::default()).iter().enumerate() {
        let m = g.n_blocks();
        let s = perturb_block_complete(&g.coords, &g.block_of, m, SIGMA_T, Some(&table), &mut stream_rng(seed, 1000 + k as u64));
        let moved = if stretched_blocks { stretch(&s.perturbed, &g.block_of, m) } else { s.perturbed.clone() };
        for members in g.members() {
            for (x, &i) in members.iter().enumerate() {
                for &j in &members[..x] {
                    rigid_dev = rigid_dev.max((dist(&moved[i], &moved[j]) - dist(&s.clean[i], &s.clean[j])).abs());
                }
            }
        }
        let forces = random_points(g.n_atoms(), 10.0, &mut rng);
        let c = loss_block_c(&forces, &s, &g.block_of, m);
        let sum = loss_block_t(&forces, &s, &g.block_of, m) + loss_block_r(&forces, &s, &g.block_of, m).value;
        decomposition = decomposition.max((c - sum).abs() / c.abs().max(1.0));
    }
    let detail = format!("{graphs} graphs");
    vec![
        CheckReport::at_most("reductions.singleton_perturbation", perturb_dev, REDUCTION_ABS, seed, detail.clone()),
        CheckReport::at_most("reductions.singleton_loss", loss_dev, REDUCTION_ABS, seed, detail.clone()),
        CheckReport::at_most("reductions.rigidity", rigid_dev, REDUCTION_ABS, seed, detail.clone()),
        CheckReport::at_most("reductions.decomposition", decomposition, REDUCTION_ABS, seed, detail),
    ]
}

/// The axis-aligned pair: inertia `diag(0,2,2)`, torque `(0,0,2)`, and a pseudo-inverse that drops the axis.
pub fn check_rigid_examples() -> CheckReport {
    let z = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
    let block_of = [0, 0];
    let i = inertia(&z, &block_of, 1)[0];
    let torque = block_torque(&[[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]], &z, &block_of, 1)[0];
    let exact = i == [[0.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]] && torque == [0.0, 0.0, 2.0];
    let alpha = angular_acceleration(&[[0.0, 0.0, 2.0], [5.0, 0.0, 0.0]], &[i, i]);
    let solve = max_abs(&alpha, &[[0.0, 0.0, 1.0], [0.0; 3]]);
    let value = if exact { solve } else { f64::INFINITY };
    CheckReport::at_most("reductions.rigid_examples", value, REDUCTION_ABS, 0, "inertia and torque exact, pseudo-inverse solve")
}
