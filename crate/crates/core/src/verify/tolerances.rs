//! Every numeric threshold of the suite, so a lower-precision port rescales them in one place.

/// Scalar invariance and vector equivariance, relative to the largest entry.
pub const EQUIVARIANCE_REL: f64 = 1e-9;
/// Finite-difference step for gradient checks.
pub const GRADIENT_STEP: f64 = 1e-6;
/// Relative gradient error `|a − f| / max(|a|, |f|, floor)`.
pub const GRADIENT_REL: f64 = 1e-5;
/// Denominator floor of the gradient error, relative to `max(|L|, 1)`. Central differences
/// lose about `ε·|L|/h ≈ 1e-10·|L|` to rounding, so entries far below this cannot be resolved.
pub const GRADIENT_FLOOR_REL: f64 = 1e-4;
/// Linear probes are exact up to rounding.
pub const GRADIENT_LINEAR_REL: f64 = 1e-10;
/// Tiled against naive attention, absolute.
pub const KERNEL_ABS: f64 = 1e-10;
/// Tiled against naive when one tile spans the whole graph.
pub const KERNEL_SINGLE_TILE_ABS: f64 = 1e-12;
/// `|∫ f − 1|` for tabulated angle densities.
pub const IGSO3_NORMALIZATION: f64 = 1e-3;
/// Minimum chi-square p-value of angle histograms.
pub const IGSO3_MIN_P: f64 = 0.01;
/// Tabulated score against finite differences of the series, relative.
pub const IGSO3_SCORE_REL: f64 = 1e-3;
/// Orthogonality and determinant of rotation matrices.
pub const ROTATION_ORTHO: f64 = 1e-12;
/// Closed-form rotation against the truncated exponential series.
pub const ROTATION_SERIES: f64 = 1e-10;
/// Singleton reductions, rigidity and loss decomposition.
pub const REDUCTION_ABS: f64 = 1e-12;
/// Naive scratch growth from N = 256 to N = 1024.
pub const NAIVE_RATIO: (f64, f64) = (12.0, 20.0);
/// Tiled scratch growth over the same sizes.
pub const TILED_RATIO: (f64, f64) = (3.0, 6.0);
/// The memory comparison sizes and tile.
pub const MEMORY_SIZES: [usize; 2] = [256, 1024];
pub const MEMORY_TILE: usize = 64;
