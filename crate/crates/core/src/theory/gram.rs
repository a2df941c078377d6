use crate::error::{Error, Result};
use crate::gradients::{dual_rows, ActivationPattern};
use crate::model::{BatchState, Params};
use crate::numerics::{resolvent_apply_t_batch, DenseMatrix};
use crate::scalar::Scalar;

/// `G = Phi Phi^T`.
pub fn gram_g<T: Scalar>(phi: &DenseMatrix<T>) -> DenseMatrix<T> {
    phi.gram()
}

/// `M` and `Q` from fresh resolvent solves at the batch equilibria.
pub fn gram_mq<T: Scalar>(
    p: &Params<T>,
    batch: &BatchState<T>,
    patterns: &[ActivationPattern],
    tol: T,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    if patterns.len() != batch.n() {
        return Err(Error::shape("gram_mq", batch.n(), patterns.len()));
    }
    let masks: Vec<Vec<bool>> = patterns.iter().map(|pt| pt.d.clone()).collect();
    let s = resolvent_apply_t_batch(&p.a, &masks, p.gamma_tilde(), &p.u, tol)?;
    let (w_rows, q_rows) = dual_rows(p, &s, patterns);
    Ok(gram_mq_from_rows(&w_rows, &q_rows))
}

/// `M_ij = w_i.w_j / m` and `Q_ij = q_i.q_j / m` from precomputed dual rows.
pub fn gram_mq_from_rows<T: Scalar>(
    w_rows: &DenseMatrix<T>,
    q_rows: &DenseMatrix<T>,
) -> (DenseMatrix<T>, DenseMatrix<T>) {
    let inv_m = T::one() / T::from_usize_lossy(w_rows.cols().max(1));
    (w_rows.gram().scale(inv_m), q_rows.gram().scale(inv_m))
}

/// `H = (gamma^2 M + 1) o Z Z^T + Q o X X^T + G`.
pub fn gram_h<T: Scalar>(
    m: &DenseMatrix<T>,
    q: &DenseMatrix<T>,
    g: &DenseMatrix<T>,
    z: &DenseMatrix<T>,
    x: &DenseMatrix<T>,
    gamma: T,
) -> Result<DenseMatrix<T>> {
    let n = g.rows();
    let square = |s: (usize, usize)| s == (n, n);
    if !square(m.shape()) || !square(q.shape()) || !square(g.shape()) || z.rows() != n || x.rows() != n {
        return Err(Error::shape(
            "gram_h",
            format!("{n}x{n} kernels with {n} rows of Z and X"),
            format!(
                "M {:?}, Q {:?}, G {:?}, Z {:?}, X {:?}",
                m.shape(),
                q.shape(),
                g.shape(),
                z.shape(),
                x.shape()
            ),
        ));
    }
    let zz = z.gram();
    let xx = x.gram();
    let g2 = gamma * gamma;
    Ok(DenseMatrix::from_fn(n, n, |i, j| {
        (g2 * m[(i, j)] + T::one()) * zz[(i, j)] + q[(i, j)] * xx[(i, j)] + g[(i, j)]
    }))
}
