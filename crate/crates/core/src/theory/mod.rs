//! Gram matrices of the training dynamics, the infinite-width kernel and the
//! width/perturbation bounds used as runtime monitors.

mod bounds;
mod gram;
mod hermite;
mod kernels;
mod sweep;

pub use bounds::{
    kernel_stability, perturbation_monitor, width_bound, KernelStability, LambdaExponent, PerturbationCheck,
    ReportMatrices, ReportNorms, SpectralReport,
};
pub use gram::{gram_g, gram_h, gram_mq, gram_mq_from_rows};
pub use hermite::{g_infinity_hermite, hermite_coeffs_relu, HermiteCoeffs, HermiteSeries};
pub use kernels::{arc_cosine, g_infinity_closed, g_infinity_mc, lambda0_estimate, DEGENERACY_FLOOR};
pub use sweep::{feature_gram_at_init, mean_lambda_gap, spectra_sweep, SpectraRow};
