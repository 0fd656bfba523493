//! Standard-form conic programs with a bundled dense interior-point solver.
//!
//! The program model is a linear objective over free real variables plus a
//! list of affine-map-into-cone blocks (nonnegative orthant, second-order
//! cones, real symmetric PSD blocks). Complex Hermitian LMIs are expressed
//! through the real symmetric embedding of doubled dimension provided by
//! [`embed`].
//!
//! The bundled solver is a dense Nesterov-Todd scaled predictor-corrector
//! path-following method on the homogeneous self-dual embedding, sized for
//! desk-scale problems (PSD sides up to a few hundred). External backends can
//! be plugged in through the [`Backend`] function contract.

pub mod cones;
pub mod dump;
pub mod embed;
pub mod program;
pub mod solver;

pub use embed::{
    embed_hermitian, embed_vector, embed_vector_rot, extract_hermitian, min_eigenvalue_hermitian,
    min_eigenvalue_sym, HermColumn, HermitianBlockBuilder,
};
pub use program::{
    BlockData, Cone, ConeBlock, ConicProgram, ProgramError, PsdBlockData, PsdColumn, RankPair,
    VecBlockData,
};
pub use solver::{solve, ConicSolution, SolveStatus, SolverOptions};

/// Adapter contract for external conic backends: anything that maps a
/// program to a solution is a backend; [`solve`] is the bundled one.
pub type Backend = fn(&ConicProgram, &SolverOptions) -> ConicSolution;

use nalgebra::DMatrix;

/// Reconstructs a PSD block's slack from a solution as a dense symmetric
/// matrix (solves are reported flattened row-major).
pub fn slack_matrix(sol: &ConicSolution, block_dim: usize, block_idx: usize) -> DMatrix<f64> {
    let flat = &sol.block_slacks[block_idx];
    DMatrix::from_fn(block_dim, block_dim, |i, j| flat[i * block_dim + j])
}

/// Minimum eigenvalue of a solution's PSD slack block; nonnegative (up to
/// solver tolerance) whenever the returned point is feasible.
pub fn check_psd(sol: &ConicSolution, block_dim: usize, block_idx: usize) -> f64 {
    min_eigenvalue_sym(&slack_matrix(sol, block_dim, block_idx))
}
pub mod fastla;
