//! Small dense linear-algebra and statistics kernels.
//!
//! Everything here targets matrices of at most a few dozen rows: Gauss-Jordan
//! inversion, Cholesky log-determinants, Jacobi eigendecomposition, rank
//! statistics, Hungarian assignment, histogram mutual information, Adam, and a
//! central-difference gradient oracle. No BLAS, no sparsity, 64-bit floats
//! throughout.

mod assign;
mod matrix;
mod optim;
mod stats;

pub use assign::hungarian;
pub use matrix::{
    cholesky, invert_small, jacobi_eigh, random_orthogonal, sqrtm_psd, sym_logdet, Matrix,
};
pub use optim::{adam_step, finite_diff_grad, grad_rel_err, AdamState};
pub use stats::{binned_entropy, histogram_mi, pearson, spearman};
