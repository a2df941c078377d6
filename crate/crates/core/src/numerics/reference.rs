//! Slow, independent reference routines used to cross-check the fast kernels.
//!
//! Nothing on the training path calls into this module.

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Singular values by one-sided Jacobi (Hestenes) orthogonalization of the columns.
pub fn singular_values<T: Scalar>(m: &DenseMatrix<T>) -> Vec<T> {
    // work on columns of M (or M^T when wide) stored as rows of `u`
    let wide = m.cols() > m.rows();
    let mut u = if wide { m.clone() } else { m.transpose() };
    let k = u.rows();
    let len = u.cols();
    let eps = T::epsilon();
    for _ in 0..200 {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                for t in 0..len {
                    let a = u[(p, t)];
                    let b = u[(q, t)];
                    alpha += a * a;
                    beta += b * b;
                    gamma += a * b;
                }
                if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma == T::zero() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for col in 0..len {
                    let a = u[(p, col)];
                    let b = u[(q, col)];
                    u[(p, col)] = c * a - s * b;
                    u[(q, col)] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<T> = u.row_iter().map(super::norm2).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    sv
}

/// Eigenvalues of a symmetric 3x3 matrix from the trigonometric solution of
/// its characteristic cubic.
pub fn eigenvalues_3x3(s: &DenseMatrix<f64>) -> [f64; 3] {
    assert_eq!(s.shape(), (3, 3));
    let (a11, a22, a33) = (s[(0, 0)], s[(1, 1)], s[(2, 2)]);
    let (a12, a13, a23) = (s[(0, 1)], s[(0, 2)], s[(1, 2)]);
    let p1 = a12 * a12 + a13 * a13 + a23 * a23;
    if p1 == 0.0 {
        return [a11, a22, a33];
    }
    let q = (a11 + a22 + a33) / 3.0;
    let p2 = (a11 - q).powi(2) + (a22 - q).powi(2) + (a33 - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = DenseMatrix::from_fn(3, 3, |i, j| (s[(i, j)] - if i == j { q } else { 0.0 }) / p);
    let det_b = b[(0, 0)] * (b[(1, 1)] * b[(2, 2)] - b[(1, 2)] * b[(2, 1)])
        - b[(0, 1)] * (b[(1, 0)] * b[(2, 2)] - b[(1, 2)] * b[(2, 0)])
        + b[(0, 2)] * (b[(1, 0)] * b[(2, 1)] - b[(1, 1)] * b[(2, 0)]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    [e1, e2, e3]
}

/// Dense solve `M x = b` by Gaussian elimination with partial pivoting.
pub fn lu_solve<T: Scalar>(m: &DenseMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = m.rows();
    if m.cols() != n || b.len() != n {
        return Err(Error::shape(
            "lu_solve",
            format!("{n}x{n} system"),
            format!("{:?}, rhs {}", m.shape(), b.len()),
        ));
    }
    let mut a = m.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().partial_cmp(&a[(j, col)].abs()).expect("finite"))
            .expect("nonempty");
        if a[(piv, col)] == T::zero() {
            return Err(Error::NonFinite("lu_solve: singular matrix"));
        }
        if piv != col {
            for k in 0..n {
                let tmp = a[(col, k)];
                a[(col, k)] = a[(piv, k)];
                a[(piv, k)] = tmp;
            }
            x.swap(col, piv);
        }
        for r in (col + 1)..n {
            let f = a[(r, col)] / a[(col, col)];
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = a[(col, k)];
                a[(r, k)] -= f * v;
            }
            let xc = x[col];
            x[r] -= f * xc;
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for k in (r + 1)..n {
            s -= a[(r, k)] * x[k];
        }
        x[r] = s / a[(r, r)];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_of_diagonal() {
        let d = DenseMatrix::from_diag(&[1.0, -4.0, 2.0]);
        let sv: Vec<f64> = singular_values(&d);
        assert!((sv[0] - 4.0).abs() < 1e-14 && (sv[1] - 2.0).abs() < 1e-14 && (sv[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cubic_oracle_on_known_matrix() {
        // [[2,1,0],[1,2,0],[0,0,5]] has eigenvalues 1, 3, 5
        let s = DenseMatrix::from_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 5.0]]).unwrap();
        let mut e = eigenvalues_3x3(&s);
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (g, w) in e.iter().zip([1.0, 3.0, 5.0]) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_solves_small_system() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let x: Vec<f64> = lu_solve(&m, &[4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }
}
