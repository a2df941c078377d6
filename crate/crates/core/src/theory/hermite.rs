use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{check_unit_rows, UNIT_ROW_TOL};
use crate::numerics::DenseMatrix;
use crate::scalar::Scalar;

/// The Gaussian density is below 1e-340 beyond this point.
const UPPER: f64 = 40.0;
const ABS_TOL: f64 = 1e-13;
const MAX_DEPTH: usize = 40;

/// Gauss-Kronrod 7/15 abscissae (non-negative half) and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
/// Gauss 7-point weights at `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Coefficients `<relu, h_k>` against the normalized probabilists' Hermite polynomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteCoeffs {
    pub coeffs: Vec<f64>,
    /// Largest estimated absolute quadrature error over all coefficients.
    pub error_estimate: f64,
}

impl HermiteCoeffs {
    pub fn sum_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// `E[relu(g)^2] - sum_k c_k^2`, the energy beyond the truncation order.
    pub fn tail_energy(&self) -> f64 {
        (0.5 - self.sum_sq()).max(0.0)
    }
}

/// `h_0..h_k(x)` by the three-term recurrence `h_{j+1} = (x h_j - sqrt(j) h_{j-1}) / sqrt(j+1)`.
fn hermite_values(x: f64, k: usize, out: &mut [f64]) {
    out[0] = 1.0;
    if k >= 1 {
        out[1] = x;
    }
    for j in 1..k {
        out[j + 1] = (x * out[j] - (j as f64).sqrt() * out[j - 1]) / ((j + 1) as f64).sqrt();
    }
}

fn integrand(x: f64, k: usize, buf: &mut [f64]) {
    hermite_values(x, k, buf);
    let w = x * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    buf.iter_mut().for_each(|h| *h *= w);
}

/// One Gauss-Kronrod panel: Kronrod estimate and `|K - G|` per component.
fn panel(a: f64, b: f64, k: usize) -> (Vec<f64>, Vec<f64>) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut kron = vec![0.0; k + 1];
    let mut gauss = vec![0.0; k + 1];
    let mut buf = vec![0.0; k + 1];
    for (idx, (&x, &wk)) in XGK.iter().zip(&WGK).enumerate() {
        let nodes: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
        for &sgn in nodes {
            integrand(mid + sgn * half * x, k, &mut buf);
            for j in 0..=k {
                kron[j] += wk * buf[j];
                if idx % 2 == 1 {
                    gauss[j] += WG[idx / 2] * buf[j];
                }
            }
        }
    }
    let err = kron.iter().zip(&gauss).map(|(a, b)| (a - b).abs() * half).collect();
    kron.iter_mut().for_each(|v| *v *= half);
    (kron, err)
}

/// `<relu, h_k>` for `k = 0..=K` by adaptive Gauss-Kronrod quadrature of
/// `int_0^inf x h_k(x) N(x) dx`.
pub fn hermite_coeffs_relu(k_max: usize) -> HermiteCoeffs {
    let mut total = vec![0.0; k_max + 1];
    let mut worst = 0.0f64;
    let mut stack = vec![(0.0, UPPER, 0usize)];
    while let Some((a, b, depth)) = stack.pop() {
        let (vals, errs) = panel(a, b, k_max);
        let e = errs.iter().cloned().fold(0.0, f64::max);
        let budget = ABS_TOL * (b - a) / UPPER;
        if e <= budget || depth >= MAX_DEPTH {
            total.iter_mut().zip(&vals).for_each(|(t, v)| *t += v);
            worst += e;
        } else {
            let mid = 0.5 * (a + b);
            stack.push((mid, b, depth + 1));
            stack.push((a, mid, depth + 1));
        }
    }
    HermiteCoeffs {
        coeffs: total,
        error_estimate: worst,
    }
}

/// Truncated Hermite expansion of `G_inf` and its error envelopes.
#[derive(Debug, Clone)]
pub struct HermiteSeries<T> {
    pub g: DenseMatrix<T>,
    pub coeffs: HermiteCoeffs,
    /// Bound on the truncation error of diagonal entries.
    pub tail_diag: f64,
    /// Bound on the truncation error of off-diagonal entries.
    pub tail_offdiag: f64,
}

/// `G_inf ~ sum_{k<=K} c_k^2 (X X^T)^{o k}` with Hadamard powers of the Gram matrix.
pub fn g_infinity_hermite<T: Scalar>(x: &DenseMatrix<T>, k_max: usize) -> Result<HermiteSeries<T>> {
    check_unit_rows(x, UNIT_ROW_TOL)?;
    let coeffs = hermite_coeffs_relu(k_max);
    let xx = x.gram();
    let n = x.rows();
    let mut g = DenseMatrix::zeros(n, n);
    let mut power = DenseMatrix::filled(n, n, T::one());
    for c in &coeffs.coeffs {
        g.axpy(T::lit(c * c), &power)?;
        power = power.hadamard(&xx)?;
    }
    let mut max_off = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                max_off = max_off.max(xx[(i, j)].as_f64().abs().min(1.0));
            }
        }
    }
    let tail = coeffs.tail_energy();
    Ok(HermiteSeries {
        g,
        tail_diag: tail,
        tail_offdiag: tail * max_off.powi(k_max as i32 + 1),
        coeffs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sym_eig_min;
    use crate::theory::g_infinity_closed;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Exact coefficients: `1/sqrt(2 pi)`, `1/2`, zero for odd `k >= 3`, and
    /// `(-1)^{(k-2)/2} (k-3)!! / sqrt(2 pi k!)` for even `k >= 2`.
    fn exact(k: usize) -> f64 {
        let root_2pi = (2.0 * std::f64::consts::PI).sqrt();
        match k {
            0 => 1.0 / root_2pi,
            1 => 0.5,
            _ if k % 2 == 1 => 0.0,
            _ => {
                // (k-3)!! / sqrt(k!) accumulated as a running ratio to avoid overflow
                let mut ratio = 1.0 / (2.0f64).sqrt();
                let mut j = 2;
                while j < k {
                    ratio *= (j - 1) as f64 / (((j + 1) * (j + 2)) as f64).sqrt();
                    j += 2;
                }
                let sign = if (k / 2 - 1) % 2 == 0 { 1.0 } else { -1.0 };
                sign * ratio / root_2pi
            }
        }
    }

    fn random_unit(n: usize, d: usize, seed: u64) -> DenseMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DenseMatrix::from_fn(n, d, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        for i in 0..n {
            let nr = crate::numerics::norm2(x.row(i));
            x.row_mut(i).iter_mut().for_each(|v| *v /= nr);
        }
        x
    }

    #[test]
    fn coefficients_match_closed_form() {
        let hc = hermite_coeffs_relu(60);
        assert!(hc.error_estimate < 1e-10);
        for (k, &c) in hc.coeffs.iter().enumerate() {
            assert!((c - exact(k)).abs() <= 1e-10, "k={k}: {c} vs {}", exact(k));
        }
        assert!((hc.coeffs[0] - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!((hc.coeffs[1] - 0.5).abs() < 1e-12);
        assert!(hc.coeffs[3].abs() < 1e-10);
        assert!(hc.sum_sq() <= 0.5 + 1e-10);
    }

    #[test]
    fn parseval_energy_approaches_one_half() {
        let gaps: Vec<f64> = [5, 10, 20, 50, 100]
            .iter()
            .map(|&k| hermite_coeffs_relu(k).tail_energy())
            .collect();
        for w in gaps.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(gaps[4] < 1e-4);
    }

    #[test]
    fn series_matches_closed_form() {
        let x = random_unit(8, 10, 3);
        let series = g_infinity_hermite(&x, 50).unwrap();
        let closed = g_infinity_closed(&x).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let diff = (series.g[(i, j)] - closed[(i, j)]).abs();
                if i == j {
                    assert!(diff <= series.tail_diag + 1e-12);
                } else {
                    assert!(diff <= 1e-6, "({i},{j}) {diff:e}");
                    assert!(diff <= series.tail_offdiag + 1e-12);
                }
            }
        }
    }

    #[test]
    fn zeroth_order_is_constant() {
        let x = random_unit(3, 4, 5);
        let s = g_infinity_hermite(&x, 0).unwrap();
        let c0 = 1.0 / (2.0 * std::f64::consts::PI);
        assert!(s.g.data().iter().all(|&v| (v - c0).abs() < 1e-14));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn hadamard_powers_of_a_gram_are_psd(seed in 0u64..1000, k in 1i32..8) {
            let x = random_unit(6, 4, seed);
            let xx = x.gram();
            let pw = xx.map(|v| v.powi(k));
            prop_assert!(sym_eig_min(&pw).unwrap() >= -1e-10);
        }
    }
}
