use super::matrix::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_SWEEPS: usize = 100;

/// All eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(S + S^T)/2` first; inputs whose asymmetry
/// exceeds `1e-8 * ||S||_F` are rejected.
pub fn sym_eigenvalues<T: Scalar>(s: &DenseMatrix<T>) -> Result<Vec<T>> {
    let mut a = prepare(s)?;
    let n = a.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    jacobi_sweeps(&mut a, None);
    let mut ev: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(ev)
}

/// Eigenvalues (ascending) and the matching orthonormal eigenvectors as columns.
pub fn sym_eigen<T: Scalar>(s: &DenseMatrix<T>) -> Result<(Vec<T>, DenseMatrix<T>)> {
    let mut a = prepare(s)?;
    let n = a.rows();
    let mut v = DenseMatrix::identity(n);
    jacobi_sweeps(&mut a, Some(&mut v));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).expect("finite"));
    let vals = order.iter().map(|&i| a[(i, i)]).collect();
    let vecs = DenseMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((vals, vecs))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_eig_min<T: Scalar>(s: &DenseMatrix<T>) -> Result<T> {
    sym_eigenvalues(s)?
        .first()
        .copied()
        .ok_or_else(|| Error::shape("sym_eig_min", "nonempty square matrix", "0x0"))
}

/// Spectral norm of a symmetric matrix, `max |lambda_i|`.
pub fn sym_op_norm<T: Scalar>(s: &DenseMatrix<T>) -> Result<T> {
    let ev = sym_eigenvalues(s)?;
    Ok(ev.iter().fold(T::zero(), |m, x| m.max(x.abs())))
}

fn prepare<T: Scalar>(s: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if s.rows() != s.cols() {
        return Err(Error::shape(
            "symmetric eigensolver",
            "square",
            format!("{:?}", s.shape()),
        ));
    }
    s.ensure_finite("symmetric eigensolver")?;
    let sym = s.symmetrized()?;
    let fro = s.frobenius();
    let asym = s.sub(&s.transpose())?.frobenius();
    if asym > T::lit(1e-8) * fro {
        return Err(Error::shape(
            "symmetric eigensolver",
            "symmetric input",
            format!("asymmetry {asym:e} vs norm {fro:e}"),
        ));
    }
    Ok(sym)
}

fn off_diagonal_sq<T: Scalar>(a: &DenseMatrix<T>) -> T {
    let n = a.rows();
    let mut s = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    s + s
}

fn jacobi_sweeps<T: Scalar>(a: &mut DenseMatrix<T>, mut v: Option<&mut DenseMatrix<T>>) {
    let n = a.rows();
    let total = a.frobenius();
    if total == T::zero() {
        return;
    }
    let eps = T::epsilon();
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_sq(a).sqrt() <= eps * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= T::min_positive_value() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // skip rotations that cannot change the diagonal in working precision
                if apq.abs() <= eps * T::lit(0.01) * (app.abs() + aqq.abs()).min(total) {
                    a[(p, q)] = T::zero();
                    a[(q, p)] = T::zero();
                    continue;
                }
                let theta = (aqq - app) / (apq + apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = T::zero();
                a[(q, p)] = T::zero();
                if let Some(v) = v.as_deref_mut() {
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
}
