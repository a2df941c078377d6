//! Dense linear-algebra kernels: products, operator norms, Neumann-series
//! resolvents and a symmetric eigensolver.

mod eig;
mod matrix;
mod norm;
pub mod reference;
mod resolvent;

pub use eig::{sym_eig_min, sym_eigen, sym_eigenvalues, sym_op_norm};
pub use matrix::{dist2, dot, norm2, DenseMatrix, DenseVector};
pub use norm::{operator_norm_est, operator_norm_est_from, NormEstimate};
pub use resolvent::{resolvent_apply_t, resolvent_apply_t_batch, resolvent_apply_t_batch_from};
