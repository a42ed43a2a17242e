//! Dense linear-algebra substrate and seeded sampling.

mod matrix;
mod rng;
mod svd;

pub use matrix::{add, axpy, dot, norm1, norm2, norm_inf, sub, DenseMatrix};
pub use rng::SeededRng;
pub use svd::{
    min_norm_solve, min_norm_solve_with, row_space_projector_apply, svd_compact, CompactSvd,
    DEFAULT_RANK_TOLERANCE, MAX_JACOBI_SWEEPS,
};
