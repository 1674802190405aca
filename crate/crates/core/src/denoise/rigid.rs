//! Rigid-body quantities per block: torque, inertia, angular acceleration, and rotations.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::molio::Vec3;

pub type Mat3 = [[f64; 3]; 3];

/// Eigenvalues below this fraction of the trace are treated as zero by the pseudo-inverse.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: &Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub(crate) fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Skew matrix `[u]×` with `[u]× v = u × v`.
pub(crate) fn skew(u: &Vec3) -> Mat3 {
    [[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]]
}

/// Offsets `u_j = z_j − μ_b(z)` of every atom from its block centroid.
pub fn relative_positions(z: &[Vec3], block_of: &[usize], centers: &[Vec3]) -> Vec<Vec3> {
    z.iter().zip(block_of).map(|(p, &b)| sub(p, &centers[b])).collect()
}

/// `M_b = Σ_{j∈b} u_j × f_j` about the block centroids of `z`.
pub fn block_torque(forces: &[Vec3], z: &[Vec3], block_of: &[usize], m: usize) -> Vec<Vec3> {
    let centers = super::block_mean(z, block_of, m);
    let mut out = vec![[0.0; 3]; m];
    for ((p, f), &b) in z.iter().zip(forces).zip(block_of) {
        let t = cross(&sub(p, &centers[b]), f);
        for c in 0..3 {
            out[b][c] += t[c];
        }
    }
    out
}

/// `I_b = Σ_{j∈b} (|u_j|² Id − u_j u_jᵀ)` about the block centroids of `z`.
pub fn inertia(z: &[Vec3], block_of: &[usize], m: usize) -> Vec<Mat3> {
    let centers = super::block_mean(z, block_of, m);
    let mut out = vec![[[0.0; 3]; 3]; m];
    for (p, &b) in z.iter().zip(block_of) {
        let u = sub(p, &centers[b]);
        let uu = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        for r in 0..3 {
            for c in 0..3 {
                out[b][r][c] += if r == c { uu } else { 0.0 } - u[r] * u[c];
            }
        }
    }
    out
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix via eigendecomposition.
pub fn pseudo_inverse(i: &Mat3) -> Mat3 {
    let m = Matrix3::from_fn(|r, c| i[r][c]);
    let trace = m.trace();
    if trace.abs() == 0.0 {
        return [[0.0; 3]; 3];
    }
    let eig = SymmetricEigen::new(m);
    let cutoff = PINV_RELATIVE_CUTOFF * trace.abs();
    let mut out = Matrix3::zeros();
    for k in 0..3 {
        let lambda = eig.eigenvalues[k];
        if lambda > cutoff {
            let v: Vector3<f64> = eig.eigenvectors.column(k).into();
            out += v * v.transpose() / lambda;
        }
    }
    [[out[(0, 0)], out[(0, 1)], out[(0, 2)]], [out[(1, 0)], out[(1, 1)], out[(1, 2)]], [out[(2, 0)], out[(2, 1)], out[(2, 2)]]]
}

/// `α_b = I_b⁺ M_b`.
pub fn angular_acceleration(torque: &[Vec3], inertia: &[Mat3]) -> Vec<Vec3> {
    torque.iter().zip(inertia).map(|(t, i)| mat_vec(&pseudo_inverse(i), t)).collect()
}

/// Rotation `exp([ω]×)` by the Rodrigues formula; exactly the identity at `ω = 0`.
pub fn rotation_matrix(omega: &Vec3) -> Mat3 {
    let theta = norm(omega);
    // sinθ/θ and (1−cosθ)/θ² by series below the cancellation threshold
    let (a, b) = if theta < 1e-4 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    let k = skew(omega);
    let k2 = mat_mul(&k, &k);
    let mut q = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            q[r][c] = if r == c { 1.0 } else { 0.0 } + a * k[r][c] + b * k2[r][c];
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_torque_and_inertia() {
        let z = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let f = [[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]];
        assert_eq!(block_torque(&f, &z, &[0, 0], 1), vec![[0.0, 0.0, 2.0]]);
        assert_eq!(inertia(&z, &[0, 0], 1), vec![[[0.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]]);
    }

    #[test]
    fn singletons_and_uniform_forces() {
        let z = [[0.3, -1.0, 2.0]];
        assert_eq!(block_torque(&[[1.0, 2.0, 3.0]], &z, &[0], 1), vec![[0.0; 3]]);
        assert_eq!(inertia(&z, &[0], 1), vec![[[0.0; 3]; 3]]);
        let z = [[0.0, 0.0, 0.0], [1.0, 2.0, 0.5], [-0.5, 0.2, 1.0]];
        let f = [[0.3, -0.2, 0.1]; 3];
        let t = block_torque(&f, &z, &[0, 0, 0], 1)[0];
        assert!(t.iter().all(|v| v.abs() <= 1e-15));
    }

    #[test]
    fn pseudo_inverse_cases() {
        let i = [[0.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        assert_eq!(angular_acceleration(&[[0.0, 0.0, 2.0]], &[i]), vec![[0.0, 0.0, 1.0]]);
        assert_eq!(angular_acceleration(&[[5.0, 0.0, 0.0]], &[i]), vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = rotation_matrix(&[0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let want = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert!((q[r][c] - want[r][c]).abs() <= 1e-15);
            }
        }
        assert_eq!(rotation_matrix(&[0.0; 3]), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }
}
