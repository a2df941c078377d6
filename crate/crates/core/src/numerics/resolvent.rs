//! Application of `(I - g D A)^{-T}` through a truncated Neumann series.
//!
//! With `B = g A^T D`, the series `u + B u + B^2 u + ...` converges whenever
//! `g ||A|| < 1`. Every term must be strictly smaller than the one before it;
//! a term that fails to shrink proves the contraction certificate is void.

use super::matrix::{norm2, DenseMatrix, DenseVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_TERMS: usize = 10_000;

/// `s = (I - gamma_tilde * D * A)^{-T} u` for a 0/1 diagonal `D` given as a mask.
pub fn resolvent_apply_t<T: Scalar>(
    a: &DenseMatrix<T>,
    d: &[bool],
    gamma_tilde: T,
    u: &[T],
    tol: T,
) -> Result<DenseVector<T>> {
    let m = a.rows();
    if a.cols() != m || d.len() != m || u.len() != m {
        return Err(Error::shape(
            "resolvent_apply_t",
            format!("square A with D, u of length {m}"),
            format!("A {:?}, D {}, u {}", a.shape(), d.len(), u.len()),
        ));
    }
    let u_norm = norm2(u);
    if u_norm == T::zero() {
        return Ok(DenseVector::zeros(m));
    }
    let mut sum = u.to_vec();
    let mut term = u.to_vec();
    let mut masked = vec![T::zero(); m];
    let mut next = vec![T::zero(); m];
    let mut term_norm = u_norm;
    let mut k = 0;
    while term_norm > tol * u_norm {
        k += 1;
        if k > MAX_TERMS {
            return Err(Error::NotContraction { term: k, ratio: 1.0 });
        }
        for ((mv, &t), &on) in masked.iter_mut().zip(&term).zip(d) {
            *mv = if on { t } else { T::zero() };
        }
        a.matvec_t_into(&masked, &mut next);
        next.iter_mut().for_each(|x| *x *= gamma_tilde);
        let next_norm = norm2(&next);
        if next_norm >= term_norm {
            return Err(Error::NotContraction {
                term: k,
                ratio: (next_norm / term_norm).as_f64(),
            });
        }
        for (s, &x) in sum.iter_mut().zip(&next) {
            *s += x;
        }
        std::mem::swap(&mut term, &mut next);
        term_norm = next_norm;
    }

    // (I - g D A)^T s - u = s - g A^T D s - u
    for ((mv, &s), &on) in masked.iter_mut().zip(&sum).zip(d) {
        *mv = if on { s } else { T::zero() };
    }
    a.matvec_t_into(&masked, &mut next);
    let residual = sum
        .iter()
        .zip(&next)
        .zip(u)
        .map(|((&s, &b), &ui)| {
            let r = s - gamma_tilde * b - ui;
            r * r
        })
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt();
    check_residual(residual, tol, u_norm, k)?;
    DenseVector::new(sum)
}

/// Row `i` of the result is `(I - gamma_tilde * D_i * A)^{-T} u`.
///
/// Each row is truncated independently and rows are
/// frozen once converged, so a row's value does not depend on its batch-mates.
pub fn resolvent_apply_t_batch<T: Scalar>(
    a: &DenseMatrix<T>,
    masks: &[Vec<bool>],
    gamma_tilde: T,
    u: &[T],
    tol: T,
) -> Result<DenseMatrix<T>> {
    resolvent_apply_t_batch_from(a, masks, gamma_tilde, u, tol, None)
}

/// Same as [`resolvent_apply_t_batch`], iterating `s <- u + g A^T D s` from
/// `init` instead of from `u`. Without `init` the iterates are the partial
/// sums of the Neumann series. Successive corrections must shrink strictly.
pub fn resolvent_apply_t_batch_from<T: Scalar>(
    a: &DenseMatrix<T>,
    masks: &[Vec<bool>],
    gamma_tilde: T,
    u: &[T],
    tol: T,
    init: Option<&DenseMatrix<T>>,
) -> Result<DenseMatrix<T>> {
    let m = a.rows();
    let n = masks.len();
    if a.cols() != m || u.len() != m || masks.iter().any(|d| d.len() != m) {
        return Err(Error::shape(
            "resolvent_apply_t_batch",
            format!("square A with masks and u of length {m}"),
            format!("A {:?}, u {}", a.shape(), u.len()),
        ));
    }
    let u_norm = norm2(u);
    if u_norm == T::zero() || n == 0 {
        return Ok(DenseMatrix::zeros(n, m));
    }
    let mut s = match init {
        Some(s0) if s0.shape() == (n, m) => s0.clone(),
        Some(s0) => {
            return Err(Error::shape(
                "resolvent_apply_t_batch init",
                format!("{:?}", (n, m)),
                format!("{:?}", s0.shape()),
            ))
        }
        None => {
            let mut s = DenseMatrix::zeros(n, m);
            for i in 0..n {
                s.row_mut(i).copy_from_slice(u);
            }
            s
        }
    };
    // the correction that produced the starting point; for the Neumann start it is u itself
    let mut last = vec![if init.is_some() { T::infinity() } else { u_norm }; n];
    let mut terms = vec![0usize; n];
    let threshold = tol * u_norm;
    let mut active: Vec<usize> = (0..n).filter(|&i| last[i] > threshold).collect();

    while !active.is_empty() {
        let mut buf = DenseMatrix::zeros(active.len(), m);
        for (r, &i) in active.iter().enumerate() {
            mask_into(s.row(i), &masks[i], buf.row_mut(r));
        }
        let next = buf.matmul(a)?;
        let mut still = Vec::with_capacity(active.len());
        for (r, &i) in active.iter().enumerate() {
            terms[i] += 1;
            let mut diff_sq = T::zero();
            for ((sv, &b), &ui) in s.row_mut(i).iter_mut().zip(next.row(r)).zip(u) {
                let v = ui + gamma_tilde * b;
                let delta = v - *sv;
                diff_sq += delta * delta;
                *sv = v;
            }
            let diff = diff_sq.sqrt();
            if !diff.is_finite() || diff >= last[i] || terms[i] > MAX_TERMS {
                return Err(Error::NotContraction {
                    term: terms[i],
                    ratio: (diff / last[i]).as_f64(),
                });
            }
            last[i] = diff;
            if diff > threshold {
                still.push(i);
            }
        }
        active = still;
    }

    let mut buf = DenseMatrix::zeros(n, m);
    for i in 0..n {
        mask_into(s.row(i), &masks[i], buf.row_mut(i));
    }
    let back = buf.matmul(a)?;
    for i in 0..n {
        let residual = s
            .row(i)
            .iter()
            .zip(back.row(i))
            .zip(u)
            .map(|((&sv, &b), &ui)| {
                let r = sv - gamma_tilde * b - ui;
                r * r
            })
            .fold(T::zero(), |acc, v| acc + v)
            .sqrt();
        check_residual(residual, tol, u_norm, terms[i])?;
    }
    s.ensure_finite("resolvent_apply_t_batch")?;
    Ok(s)
}

fn mask_into<T: Scalar>(src: &[T], mask: &[bool], dst: &mut [T]) {
    for ((d, &s), &on) in dst.iter_mut().zip(src).zip(mask) {
        *d = if on { s } else { T::zero() };
    }
}

fn check_residual<T: Scalar>(residual: T, tol: T, u_norm: T, terms: usize) -> Result<()> {
    // the truncation leaves ||B^{K+1} u|| <= tol ||u||; allow rounding on top
    let slack = T::lit(10.0) * tol * u_norm + T::lit(64.0) * T::epsilon() * u_norm;
    if residual > slack {
        return Err(Error::NoConvergence {
            what: "resolvent residual check",
            iterations: terms,
            last_change: residual.as_f64(),
        });
    }
    Ok(())
}
