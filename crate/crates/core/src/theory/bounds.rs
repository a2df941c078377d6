use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{operator_norm_est, sym_eig_min, sym_op_norm, DenseMatrix};
use crate::scalar::Scalar;

/// Power of `lambda0` in the width requirement `m ~ n^2 / lambda0^p * ln(n / delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LambdaExponent {
    #[default]
    Two,
    One,
}

/// `ceil(c_w * n^2 / lambda0^p * ln(n / delta))`, clamped at zero.
pub fn width_bound(n: usize, lambda0: f64, delta: f64, c_w: f64, exponent: LambdaExponent) -> Result<u64> {
    if n == 0 || !(lambda0 > 0.0) || !(delta > 0.0 && delta < 1.0) || !(c_w > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "width_bound needs n > 0, lambda0 > 0, delta in (0,1), c_w > 0 (got {n}, {lambda0}, {delta}, {c_w})"
        )));
    }
    let nf = n as f64;
    let denom = match exponent {
        LambdaExponent::Two => lambda0 * lambda0,
        LambdaExponent::One => lambda0,
    };
    let value = c_w * nf * nf / denom * (nf / delta).ln();
    Ok(value.max(0.0).ceil() as u64)
}

/// Distance of `W(t)` from its initialization against the radius in which
/// the feature kernel provably stays well conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCheck {
    pub r_used: f64,
    pub r_budget: f64,
    pub ok: bool,
}

/// `R_used = ||W_t - W_0||` against `R_budget = sqrt(m) lambda0 / (16 c ||X||^2)`.
pub fn perturbation_monitor<T: Scalar>(
    w_t: &DenseMatrix<T>,
    w_0: &DenseMatrix<T>,
    c_init: f64,
    lambda0: f64,
    x_norm: f64,
    m: usize,
) -> Result<PerturbationCheck> {
    let diff = w_t.sub(w_0)?;
    let r_used = if diff.max_abs() == T::zero() {
        0.0
    } else {
        operator_norm_est(&diff, T::lit(1e-8), 10_000)?.value.as_f64()
    };
    let r_budget = (m as f64).sqrt() * lambda0 / (16.0 * c_init * x_norm * x_norm);
    Ok(PerturbationCheck {
        r_used,
        r_budget,
        ok: r_used <= r_budget,
    })
}

/// Drift of the feature kernel from its initial value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelStability {
    /// `||G(t) - G(0)||`.
    pub g_gap: f64,
    pub lambda_min_g: f64,
    /// `g_gap <= lambda0 / 4`.
    pub gap_ok: bool,
    /// `lambda_min_g >= lambda0 / 2`.
    pub lambda_ok: bool,
}

pub fn kernel_stability<T: Scalar>(
    g_t: &DenseMatrix<T>,
    g_0: &DenseMatrix<T>,
    lambda0: f64,
) -> Result<KernelStability> {
    let g_gap = sym_op_norm(&g_t.sub(g_0)?)?.as_f64();
    let lambda_min_g = sym_eig_min(g_t)?.as_f64();
    Ok(KernelStability {
        g_gap,
        lambda_min_g,
        gap_ok: g_gap <= lambda0 / 4.0,
        lambda_ok: lambda_min_g >= lambda0 / 2.0,
    })
}

/// Kernels and spectral monitors at one training step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub step: usize,
    #[serde(rename = "lambda_min_G")]
    pub lambda_min_g: f64,
    #[serde(rename = "lambda_min_H")]
    pub lambda_min_h: f64,
    #[serde(rename = "R_used")]
    pub r_used: f64,
    #[serde(rename = "R_budget")]
    pub r_budget: f64,
    pub g_gap: f64,
    pub norms: ReportNorms,
    #[serde(skip)]
    pub matrices: Option<ReportMatrices>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ReportNorms {
    pub a_over_sqrt_m: f64,
    pub w_over_sqrt_m: f64,
    pub u_drift: f64,
    pub v_drift: f64,
    pub scaled_a: f64,
}

#[derive(Debug, Clone)]
pub struct ReportMatrices {
    pub g: DenseMatrix<f64>,
    pub m: DenseMatrix<f64>,
    pub q: DenseMatrix<f64>,
    pub h: DenseMatrix<f64>,
}
