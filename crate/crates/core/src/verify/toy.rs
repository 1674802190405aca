//! Procedural small molecules: saturated heavy-atom chains with every hydrogen explicit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{build_graph, MolGraph, Thresholds};
use crate::molio::{Element, MoleculeKind, RawMolecule, RawStructure, Vec3};

const BOND_ANGLE_DEG: f64 = 111.0;
const TETRAHEDRAL_HALF_DEG: f64 = 54.75;

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit(a: Vec3) -> Vec3 {
    scale(a, 1.0 / (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt())
}

/// Any unit vector orthogonal to `d`.
fn orthogonal(d: Vec3) -> Vec3 {
    let helper = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    unit(cross(d, helper))
}

fn heavy_bond(a: Element, b: Element) -> f64 {
    match (a.atomic_number().max(b.atomic_number()), a.atomic_number().min(b.atomic_number())) {
        (6, 6) => 1.52,
        (7, 6) => 1.47,
        (8, 6) => 1.43,
        _ => 1.45,
    }
}

fn hydrogen_bond(e: Element) -> f64 {
    match e.atomic_number() {
        7 => 1.01,
        8 => 0.96,
        _ => 1.09,
    }
}

fn valence(e: Element) -> usize {
    match e.atomic_number() {
        7 => 3,
        8 => 2,
        _ => 4,
    }
}

/// Next chain position from the previous three, bond length, bond angle and dihedral.
fn extend(a: Vec3, b: Vec3, c: Vec3, len: f64, angle: f64, dihedral: f64) -> Vec3 {
    let bc = unit(sub(c, b));
    let n = unit(cross(sub(b, a), bc));
    let m = cross(n, bc);
    let d = [-len * angle.cos(), len * angle.sin() * dihedral.cos(), len * angle.sin() * dihedral.sin()];
    add(c, add(scale(bc, d[0]), add(scale(m, d[1]), scale(n, d[2]))))
}

/// Hydrogen directions completing a roughly tetrahedral center with bonds `dirs`.
fn hydrogen_directions(dirs: &[Vec3], count: usize, phase: f64) -> Vec<Vec3> {
    let tet = (180.0f64 - 109.47).to_radians();
    match dirs.len() {
        0 => {
            let base = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
            base.iter().take(count).map(|&v| unit(v)).collect()
        }
        1 => {
            let d = dirs[0];
            let e1 = orthogonal(d);
            let e2 = cross(d, e1);
            (0..count)
                .map(|k| {
                    let phi = phase + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
                    unit(add(scale(d, -tet.cos()), scale(add(scale(e1, phi.cos()), scale(e2, phi.sin())), tet.sin())))
                })
                .collect()
        }
        2 => {
            let b = unit(scale(add(dirs[0], dirs[1]), -1.0));
            if count == 1 {
                return vec![b];
            }
            let n = unit(cross(dirs[0], dirs[1]));
            let a = TETRAHEDRAL_HALF_DEG.to_radians();
            [1.0, -1.0].iter().take(count).map(|&s| unit(add(scale(b, a.cos()), scale(n, s * a.sin())))).collect()
        }
        _ => vec![unit(scale(dirs.iter().fold([0.0; 3], |s, &d| add(s, d)), -1.0)); count.min(1)],
    }
}

/// One chain of `heavy` atoms. The last atom may be N (an NH2 block) and an inner
/// atom may be an ether O, a singleton block.
pub fn toy_molecule<R: Rng + ?Sized>(heavy: usize, rng: &mut R) -> RawMolecule {
    let mut elements = vec![Element::C; heavy];
    if heavy > 1 && rng.random_bool(0.5) {
        elements[heavy - 1] = Element::N;
    }
    if heavy > 3 && rng.random_bool(0.5) {
        elements[rng.random_range(1..heavy - 1)] = Element::O;
    }
    let angle = BOND_ANGLE_DEG.to_radians();
    let mut pos: Vec<Vec3> = Vec::with_capacity(heavy);
    for i in 0..heavy {
        let p = match i {
            0 => [0.0; 3],
            1 => [heavy_bond(elements[0], elements[1]), 0.0, 0.0],
            2 => {
                let len = heavy_bond(elements[1], elements[2]);
                add(pos[1], [-len * angle.cos(), len * angle.sin(), 0.0])
            }
            _ => {
                let dihedral = std::f64::consts::PI + rng.random_range(-1.2..1.2);
                extend(pos[i - 3], pos[i - 2], pos[i - 1], heavy_bond(elements[i - 1], elements[i]), angle, dihedral)
            }
        };
        pos.push(p);
    }
    let mut bonds: Vec<(usize, usize)> = (1..heavy).map(|i| (i - 1, i)).collect();
    let mut coords = pos.clone();
    let mut all = elements.clone();
    for i in 0..heavy {
        let dirs: Vec<Vec3> = [i.checked_sub(1), (i + 1 < heavy).then_some(i + 1)]
            .into_iter()
            .flatten()
            .map(|j| unit(sub(pos[j], pos[i])))
            .collect();
        let count = valence(elements[i]) - dirs.len();
        for d in hydrogen_directions(&dirs, count, rng.random_range(0.0..std::f64::consts::TAU)) {
            bonds.push((i, coords.len()));
            coords.push(add(pos[i], scale(d, hydrogen_bond(elements[i]))));
            all.push(Element::H);
        }
    }
    RawMolecule { title: format!("toy-{heavy}"), elements: all, coords, bonds: Some(bonds), kind: MoleculeKind::SmallMolecule }
}

/// `count` molecules with 2 to 5 heavy atoms, reproducible from `seed`.
pub fn toy_molecules(count: usize, seed: u64) -> Vec<RawMolecule> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let heavy = rng.random_range(2..=5);
            toy_molecule(heavy, &mut rng)
        })
        .collect()
}

/// [`toy_molecules`] as graphs under `thresholds`.
pub fn toy_graphs(count: usize, seed: u64, thresholds: Thresholds) -> Vec<MolGraph> {
    toy_molecules(count, seed)
        .into_iter()
        .map(|m| build_graph(&RawStructure::Molecule(m), thresholds).expect("toy molecules are well formed"))
        .collect()
}
