use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::{norm2, DenseMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const RESTART_SEED: u64 = 0x6f70_6e6f_726d;

/// Result of a power-iteration estimate of the largest singular value.
#[derive(Debug, Clone)]
pub struct NormEstimate<T> {
    pub value: T,
    pub iterations: usize,
    /// `false` when `max_iter` was hit before the relative change fell below `tol`;
    /// `value` is then the best estimate seen.
    pub converged: bool,
    /// Unit right singular vector estimate; reusable as a warm start.
    pub vector: Vec<T>,
}

/// Estimates `||M||_2` by power iteration on `M^T M`.
///
/// The start vector is the normalized all-ones vector; if `M` nearly annihilates
/// it, a seeded Gaussian vector is used instead so the result stays reproducible.
pub fn operator_norm_est<T: Scalar>(m: &DenseMatrix<T>, tol: T, max_iter: usize) -> Result<NormEstimate<T>> {
    operator_norm_est_from(m, None, tol, max_iter)
}

/// Same as [`operator_norm_est`] but starting from `start` when given.
pub fn operator_norm_est_from<T: Scalar>(
    m: &DenseMatrix<T>,
    start: Option<&[T]>,
    tol: T,
    max_iter: usize,
) -> Result<NormEstimate<T>> {
    if m.is_empty() {
        return Err(Error::shape("operator_norm_est", "nonempty matrix", "0 entries"));
    }
    if !(tol > T::zero()) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    m.ensure_finite("operator_norm_est")?;
    let n = m.cols();
    let fro = m.frobenius();
    if fro == T::zero() {
        return Ok(NormEstimate {
            value: T::zero(),
            iterations: 0,
            converged: true,
            vector: vec![T::one() / T::from_usize_lossy(n).sqrt(); n],
        });
    }

    let mut v = match start {
        Some(s) if s.len() == n && norm2(s) > T::zero() => {
            let s_norm = norm2(s);
            s.iter().map(|&x| x / s_norm).collect::<Vec<_>>()
        }
        _ => vec![T::one() / T::from_usize_lossy(n).sqrt(); n],
    };
    let mut w = vec![T::zero(); m.rows()];
    let mut x = vec![T::zero(); n];

    m.matvec_into(&v, &mut w);
    let mut sigma = norm2(&w);
    if sigma <= T::lit(1e-8) * fro {
        let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
        for vi in v.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *vi = T::lit(g);
        }
        let nv = norm2(&v);
        v.iter_mut().for_each(|vi| *vi /= nv);
        m.matvec_into(&v, &mut w);
        sigma = norm2(&w);
    }

    let stop = tol * T::lit(0.1);
    let mut best = sigma;
    let mut best_v = v.clone();
    for it in 1..=max_iter {
        m.matvec_t_into(&w, &mut x);
        let nx = norm2(&x);
        if nx == T::zero() {
            break;
        }
        for (vi, &xi) in v.iter_mut().zip(&x) {
            *vi = xi / nx;
        }
        m.matvec_into(&v, &mut w);
        let next = norm2(&w);
        if next >= best {
            best = next;
            best_v.copy_from_slice(&v);
        }
        if (next - sigma).abs() <= stop * next {
            return Ok(NormEstimate {
                value: best,
                iterations: it,
                converged: true,
                vector: best_v,
            });
        }
        sigma = next;
    }
    Ok(NormEstimate {
        value: best,
        iterations: max_iter,
        converged: false,
        vector: best_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::reference::singular_values;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_and_diagonal() {
        let est = operator_norm_est(&DenseMatrix::<f64>::identity(3), 1e-12, 100).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
        let d = DenseMatrix::<f64>::from_diag(&[1.0, 2.0, 3.0]);
        let est = operator_norm_est(&d, 1e-12, 10_000).unwrap();
        assert!(est.converged);
        assert!((est.value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        let est = operator_norm_est(&DenseMatrix::<f64>::zeros(4, 3), 1e-6, 10).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn all_ones_in_null_space_restarts() {
        // rows (1, -1): the normalized all-ones start vector is annihilated.
        let m = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![2.0, -2.0]]).unwrap();
        let est = operator_norm_est(&m, 1e-12, 1000).unwrap();
        assert!((est.value - 10f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let one = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        assert!(operator_norm_est(&one, 0.0, 10).is_err());
        let mut nan = DenseMatrix::<f64>::zeros(2, 2);
        nan.data_mut()[0] = f64::NAN;
        assert!(matches!(operator_norm_est(&nan, 1e-6, 10), Err(Error::NonFinite(_))));
        assert!(operator_norm_est(&DenseMatrix::<f64>::zeros(0, 0), 1e-6, 10).is_err());
    }

    #[test]
    fn matches_svd_oracle_on_random_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let m = DenseMatrix::from_fn(20, 20, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let sv = singular_values(&m);
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let est = operator_norm_est(&m, 1e-12, 100_000).unwrap();
        assert!(est.converged);
        assert!((est.value - smax).abs() / smax <= 1e-8, "{} vs {}", est.value, smax);
    }

    #[test]
    fn sandwiched_between_rayleigh_probes_and_frobenius() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = DenseMatrix::from_fn(15, 9, |_, _| rng.gen_range(-1.0..1.0));
        let est = operator_norm_est(&m, 1e-10, 100_000).unwrap();
        assert!(est.value <= m.frobenius());
        for _ in 0..100 {
            let v: Vec<f64> = (0..9).map(|_| StandardNormal.sample(&mut rng)).collect();
            let ratio = m.matvec(&v).unwrap().norm() / norm2(&v);
            assert!(ratio <= est.value * (1.0 + 1e-9));
        }
    }

    #[test]
    fn warm_start_reuses_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let m: DenseMatrix<f64> = DenseMatrix::from_fn(30, 30, |_, _| rng.gen_range(-1.0..1.0));
        let cold = operator_norm_est(&m, 1e-10, 100_000).unwrap();
        let warm = operator_norm_est_from(&m, Some(&cold.vector), 1e-10, 100_000).unwrap();
        assert!(warm.iterations <= cold.iterations);
        assert!((warm.value - cold.value).abs() <= 1e-9 * cold.value);
    }
}
