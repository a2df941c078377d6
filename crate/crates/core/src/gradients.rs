//! Implicit gradients of the squared loss and finite-difference oracles.
//!
//! With `s_i = (I - g D_i A)^{-T} u` and `w_i = D_i s_i`, the loss gradient is
//!
//! ```text
//! dL/dA = sum_i g r_i w_i z_i^T
//! dL/dW = sum_i r_i / sqrt(m) E_i (w_i + v) x_i^T
//! dL/du = sum_i r_i z_i
//! dL/dv = sum_i r_i phi_i
//! ```
//!
//! where `r_i = yhat_i - y_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{batch_forward_from, relu, relu_active, BatchState, Params, SolveOptions};
use crate::numerics::{dot, resolvent_apply_t_batch_from, DenseMatrix, DenseVector};
use crate::scalar::Scalar;

/// ReLU derivative flags at the equilibrium of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationPattern {
    /// `sigma'` at `g A z + phi`.
    pub d: Vec<bool>,
    /// `sigma'` at `W x`.
    pub e: Vec<bool>,
}

impl ActivationPattern {
    pub fn active_d(&self) -> usize {
        self.d.iter().filter(|&&b| b).count()
    }

    pub fn active_e(&self) -> usize {
        self.e.iter().filter(|&&b| b).count()
    }
}

/// Pattern of a single sample at a converged equilibrium `z`.
pub fn activation_patterns<T: Scalar>(p: &Params<T>, x: &[T], z: &[T], phi: &[T]) -> Result<ActivationPattern> {
    let m = p.m();
    if x.len() != p.d() || z.len() != m || phi.len() != m {
        return Err(Error::shape(
            "activation_patterns",
            format!("x {}, z and phi {m}", p.d()),
            format!("x {}, z {}, phi {}", x.len(), z.len(), phi.len()),
        ));
    }
    let g = p.gamma_tilde();
    let az = p.a.matvec(z)?;
    let d = az.iter().zip(phi).map(|(&a, &f)| relu_active(g * a + f)).collect();
    let wx = p.w.matvec(x)?;
    let e = wx.iter().map(|&v| relu_active(v)).collect();
    Ok(ActivationPattern { d, e })
}

/// Patterns of every sample in a forward batch.
pub fn batch_patterns<T: Scalar>(p: &Params<T>, batch: &BatchState<T>) -> Result<Vec<ActivationPattern>> {
    let wx = batch.x.matmul_nt(&p.w)?;
    Ok((0..batch.n())
        .map(|i| ActivationPattern {
            d: batch.pre_z.row(i).iter().map(|&q| relu_active(q)).collect(),
            e: wx.row(i).iter().map(|&v| relu_active(v)).collect(),
        })
        .collect())
}

/// Gradients of the loss with respect to all four parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub ga: DenseMatrix<T>,
    pub gw: DenseMatrix<T>,
    pub gu: DenseVector<T>,
    pub gv: DenseVector<T>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros(m: usize, d: usize) -> Self {
        Self {
            ga: DenseMatrix::zeros(m, m),
            gw: DenseMatrix::zeros(m, d),
            gu: DenseVector::zeros(m),
            gv: DenseVector::zeros(m),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ga.is_finite() && self.gw.is_finite() && self.gu.is_finite() && self.gv.is_finite()
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            ga: self.ga.scale(s),
            gw: self.gw.scale(s),
            gu: DenseVector::from_fn(self.gu.len(), |i| self.gu[i] * s),
            gv: DenseVector::from_fn(self.gv.len(), |i| self.gv[i] * s),
        }
    }

    /// Squared Frobenius norm over all blocks.
    pub fn norm_sq(&self) -> T {
        let f = |x: &[T]| x.iter().fold(T::zero(), |s, &v| s + v * v);
        f(self.ga.data()) + f(self.gw.data()) + f(&self.gu) + f(&self.gv)
    }

    /// Largest absolute entrywise difference across all blocks.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let f = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()));
        f(self.ga.data(), other.ga.data())
            .max(f(self.gw.data(), other.gw.data()))
            .max(f(&self.gu, &other.gu))
            .max(f(&self.gv, &other.gv))
    }

    pub fn block(&self, block: Block) -> DenseMatrix<T> {
        match block {
            Block::A => self.ga.clone(),
            Block::W => self.gw.clone(),
            Block::U => DenseMatrix::from_vec(self.gu.len(), 1, self.gu.to_vec()).expect("finite"),
            Block::V => DenseMatrix::from_vec(self.gv.len(), 1, self.gv.to_vec()).expect("finite"),
        }
    }
}

/// Intermediate products of the backward pass, reused by the Gram monitors.
#[derive(Debug, Clone)]
pub struct Backward<T> {
    pub grads: GradientSet<T>,
    pub patterns: Vec<ActivationPattern>,
    /// Row `i` is `s_i = (I - g D_i A)^{-T} u`.
    pub s: DenseMatrix<T>,
    /// Row `i` is `w_i = D_i s_i`.
    pub w_rows: DenseMatrix<T>,
    /// Row `i` is `E_i (w_i + v)`.
    pub q_rows: DenseMatrix<T>,
}

/// Closed-form gradients for a solved batch.
pub fn grad_all<T: Scalar>(p: &Params<T>, batch: &BatchState<T>, tol: T) -> Result<GradientSet<T>> {
    Ok(backward(p, batch, tol)?.grads)
}

pub fn backward<T: Scalar>(p: &Params<T>, batch: &BatchState<T>, tol: T) -> Result<Backward<T>> {
    backward_from(p, batch, tol, None)
}

/// Backward pass with the resolvent rows warm-started from `s_init`.
pub fn backward_from<T: Scalar>(
    p: &Params<T>,
    batch: &BatchState<T>,
    tol: T,
    s_init: Option<&DenseMatrix<T>>,
) -> Result<Backward<T>> {
    let m = p.m();
    let n = batch.n();
    if batch.z.cols() != m || batch.x.cols() != p.d() {
        return Err(Error::shape(
            "backward",
            format!("batch with m={m}, d={}", p.d()),
            format!("Z {:?}, X {:?}", batch.z.shape(), batch.x.shape()),
        ));
    }
    let patterns = batch_patterns(p, batch)?;
    let masks: Vec<Vec<bool>> = patterns.iter().map(|pt| pt.d.clone()).collect();
    let s = resolvent_apply_t_batch_from(&p.a, &masks, p.gamma_tilde(), &p.u, tol, s_init)?;
    let (w_rows, q_rows) = dual_rows(p, &s, &patterns);
    let r = batch.residual();
    let grads = assemble(p, batch, &w_rows, &q_rows, &r)?;
    debug_assert_eq!(w_rows.rows(), n);
    Ok(Backward {
        grads,
        patterns,
        s,
        w_rows,
        q_rows,
    })
}

/// `w_i = D_i s_i` and `q_i = E_i (w_i + v)` from the resolvent rows `s_i`.
pub(crate) fn dual_rows<T: Scalar>(
    p: &Params<T>,
    s: &DenseMatrix<T>,
    patterns: &[ActivationPattern],
) -> (DenseMatrix<T>, DenseMatrix<T>) {
    let (n, m) = s.shape();
    let mut w_rows = DenseMatrix::zeros(n, m);
    let mut q_rows = DenseMatrix::zeros(n, m);
    for (i, pt) in patterns.iter().enumerate() {
        let wr = w_rows.row_mut(i);
        for ((w, &si), &on) in wr.iter_mut().zip(s.row(i)).zip(&pt.d) {
            *w = if on { si } else { T::zero() };
        }
        let qr = q_rows.row_mut(i);
        for (k, q) in qr.iter_mut().enumerate() {
            *q = if pt.e[k] { w_rows[(i, k)] + p.v[k] } else { T::zero() };
        }
    }
    (w_rows, q_rows)
}

fn assemble<T: Scalar>(
    p: &Params<T>,
    batch: &BatchState<T>,
    w_rows: &DenseMatrix<T>,
    q_rows: &DenseMatrix<T>,
    r: &[T],
) -> Result<GradientSet<T>> {
    let g = p.gamma_tilde();
    let inv_sqrt_m = T::one() / T::from_usize_lossy(p.m()).sqrt();
    let scaled = |rows: &DenseMatrix<T>, c: T| {
        let mut out = rows.clone();
        for (i, &ri) in r.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|x| *x *= ri * c);
        }
        out
    };
    let ga = scaled(w_rows, g).matmul_tn(&batch.z)?;
    let gw = scaled(q_rows, inv_sqrt_m).matmul_tn(&batch.x)?;
    let gu = batch.z.matvec_t(r)?;
    let gv = batch.phi.matvec_t(r)?;
    let grads = GradientSet { ga, gw, gu, gv };
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    Ok(grads)
}

/// Parameter block selector for finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    A,
    W,
    U,
    V,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::A, Block::W, Block::U, Block::V];

    fn shape<T: Scalar>(self, p: &Params<T>) -> (usize, usize) {
        match self {
            Block::A => (p.m(), p.m()),
            Block::W => (p.m(), p.d()),
            Block::U | Block::V => (p.m(), 1),
        }
    }

    fn entry<T: Scalar>(self, p: &mut Params<T>, i: usize, j: usize) -> &mut T {
        match self {
            Block::A => {
                let m = p.m();
                &mut p.a.data_mut()[i * m + j]
            }
            Block::W => {
                let d = p.d();
                &mut p.w.data_mut()[i * d + j]
            }
            Block::U => &mut p.u[i],
            Block::V => &mut p.v[i],
        }
    }
}

/// Central-difference gradient of one block, with kink flags.
#[derive(Debug, Clone)]
pub struct FdGradient<T> {
    pub values: DenseMatrix<T>,
    /// Row-major flags, `true` where a ReLU kink lies inside the difference window.
    pub excluded: Vec<bool>,
}

impl<T: Scalar> FdGradient<T> {
    /// Largest `|fd - g| / max(|g|, floor)` over non-excluded coordinates.
    pub fn max_rel_error(&self, reference: &DenseMatrix<T>, floor: T) -> T {
        self.values
            .data()
            .iter()
            .zip(reference.data())
            .zip(&self.excluded)
            .filter(|(_, &ex)| !ex)
            .fold(T::zero(), |acc, ((&f, &g), _)| {
                acc.max((f - g).abs() / g.abs().max(floor))
            })
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&b| b).count()
    }
}

struct Probe<T> {
    loss: T,
    pre_z: DenseMatrix<T>,
    pre_w: DenseMatrix<T>,
}

fn probe<T: Scalar>(p: &Params<T>, x: &DenseMatrix<T>, y: &[T], opts: &SolveOptions<T>) -> Result<Probe<T>> {
    let st = batch_forward_from(p, x, y, opts, None)?;
    Ok(Probe {
        loss: st.loss(),
        pre_w: x.matmul_nt(&p.w)?,
        pre_z: st.pre_z,
    })
}

/// Central differences `(L(theta + eps e) - L(theta - eps e)) / (2 eps)` for
/// every coordinate of `block`, re-solving equilibria to `tol_fp`.
///
/// A coordinate is flagged when some pre-activation `q` of some sample moves
/// by `delta` under the perturbation and `|q| <= 10 * delta`, i.e. a kink
/// lies within ten perturbation widths.
pub fn finite_diff_grad<T: Scalar>(
    p: &Params<T>,
    x: &DenseMatrix<T>,
    y: &[T],
    block: Block,
    eps: T,
    tol_fp: T,
) -> Result<FdGradient<T>> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let opts = SolveOptions::new(tol_fp);
    let base = probe(p, x, y, &opts)?;
    let (rows, cols) = block.shape(p);
    let mut values = DenseMatrix::zeros(rows, cols);
    let mut excluded = vec![false; rows * cols];
    let mut work = p.clone();
    let two_eps = eps + eps;
    let window = T::lit(10.0);
    for i in 0..rows {
        for j in 0..cols {
            let orig = *block.entry(&mut work, i, j);
            *block.entry(&mut work, i, j) = orig + eps;
            let plus = probe(&work, x, y, &opts)?;
            *block.entry(&mut work, i, j) = orig - eps;
            let minus = probe(&work, x, y, &opts)?;
            *block.entry(&mut work, i, j) = orig;
            values[(i, j)] = (plus.loss - minus.loss) / two_eps;
            let near = |b: &DenseMatrix<T>, q1: &DenseMatrix<T>, q2: &DenseMatrix<T>| {
                b.data().iter().zip(q1.data()).zip(q2.data()).any(|((&q, &a), &c)| {
                    let delta = (a - q).abs().max((c - q).abs());
                    delta > T::zero() && q.abs() <= window * delta
                })
            };
            excluded[i * cols + j] =
                near(&base.pre_z, &plus.pre_z, &minus.pre_z) || near(&base.pre_w, &plus.pre_w, &minus.pre_w);
        }
    }
    Ok(FdGradient { values, excluded })
}

/// Gradients obtained by backpropagating through `k` Picard iterations started at zero.
///
/// Independent of the resolvent route; converges to [`grad_all`] as `k` grows.
pub fn grad_unrolled<T: Scalar>(p: &Params<T>, x: &DenseMatrix<T>, y: &[T], k: usize) -> Result<GradientSet<T>> {
    let m = p.m();
    if x.cols() != p.d() || y.len() != x.rows() {
        return Err(Error::shape("grad_unrolled", p.d(), x.cols()));
    }
    let g = p.gamma_tilde();
    let inv_sqrt_m = T::one() / T::from_usize_lossy(m).sqrt();
    let mut out = GradientSet::zeros(m, p.d());
    for (i, xi) in x.row_iter().enumerate() {
        let wx = p.w.matvec(xi)?;
        let phi: Vec<T> = wx.iter().map(|&v| relu(v) * inv_sqrt_m).collect();
        let mut iterates = Vec::with_capacity(k + 1);
        let mut masks = Vec::with_capacity(k);
        iterates.push(vec![T::zero(); m]);
        for l in 0..k {
            let az = p.a.matvec(&iterates[l])?;
            let pre: Vec<T> = az.iter().zip(&phi).map(|(&a, &f)| g * a + f).collect();
            masks.push(pre.iter().map(|&q| relu_active(q)).collect::<Vec<bool>>());
            iterates.push(pre.into_iter().map(relu).collect());
        }
        let zk = &iterates[k];
        let r = dot(&p.u, zk) + dot(&p.v, &phi) - y[i];
        let mut upstream: Vec<T> = p.u.iter().map(|&ui| r * ui).collect();
        let mut g_phi: Vec<T> = p.v.iter().map(|&vi| r * vi).collect();
        for l in (0..k).rev() {
            let delta: Vec<T> = upstream
                .iter()
                .zip(&masks[l])
                .map(|(&u, &on)| if on { u } else { T::zero() })
                .collect();
            let zl = &iterates[l];
            for (a_row, &dr) in (0..m).zip(&delta) {
                if dr == T::zero() {
                    continue;
                }
                for (ga, &zc) in out.ga.row_mut(a_row).iter_mut().zip(zl) {
                    *ga += g * dr * zc;
                }
            }
            g_phi.iter_mut().zip(&delta).for_each(|(a, &b)| *a += b);
            upstream = p.a.matvec_t(&delta)?.iter().map(|&v| g * v).collect();
        }
        for (row, (&gp, &pre)) in g_phi.iter().zip(wx.iter()).enumerate() {
            if !relu_active(pre) {
                continue;
            }
            for (gw, &xc) in out.gw.row_mut(row).iter_mut().zip(xi) {
                *gw += inv_sqrt_m * gp * xc;
            }
        }
        out.gu.iter_mut().zip(zk).for_each(|(a, &b)| *a += r * b);
        out.gv.iter_mut().zip(&phi).for_each(|(a, &b)| *a += r * b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{batch_forward, init_params};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar() -> Params<f64> {
        Params::from_parts(
            DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap(),
            DenseMatrix::from_vec(1, 1, vec![2.0]).unwrap(),
            DenseVector::new(vec![1.0]).unwrap(),
            DenseVector::new(vec![1.0]).unwrap(),
            0.6,
            0.5,
            0,
        )
        .unwrap()
    }

    fn unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f64> {
        let mut x = DenseMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        for i in 0..n {
            let nr = crate::numerics::norm2(x.row(i));
            x.row_mut(i).iter_mut().for_each(|v| *v /= nr);
        }
        x
    }

    fn instance(m: usize, d: usize, n: usize, seed: u64) -> (Params<f64>, DenseMatrix<f64>, Vec<f64>) {
        let p = init_params(m, d, 0.5, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let x = unit_rows(n, d, &mut rng);
        let y = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (p, x, y)
    }

    #[test]
    fn pattern_examples() {
        let p = scalar();
        let pt = activation_patterns(&p, &[1.0], &[4.0], &[2.0]).unwrap();
        assert_eq!(pt.d, vec![true]);
        let pt = activation_patterns(&p, &[0.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(pt.d, vec![cfg!(feature = "relu-subgradient-one")]);
        let mut q = scalar();
        q.w[(0, 0)] = -3.0;
        let pt = activation_patterns(&q, &[1.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(pt.e, vec![false]);
    }

    #[test]
    fn scalar_instance_hand_values() {
        // z = 4, phi = 2, yhat = 6; y = 5 gives a unit residual
        let p = scalar();
        let x = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let st = batch_forward(&p, &x, &[5.0], 1e-14).unwrap();
        let g = grad_all(&p, &st, 1e-14).unwrap();
        assert!((g.gu[0] - 4.0).abs() < 1e-12);
        assert!((g.gv[0] - 2.0).abs() < 1e-12);
        assert!((g.ga[(0, 0)] - 4.0).abs() < 1e-12);
        // (1/sqrt m) E (D s + v) x = 1 * (2 + 1) * 1
        assert!((g.gw[(0, 0)] - 3.0).abs() < 1e-12);
        let fd = finite_diff_grad(&p, &x, &[5.0], Block::A, 1e-5, 1e-12).unwrap();
        assert!((fd.values[(0, 0)] - 4.0).abs() < 1e-6);
        let fd = finite_diff_grad(&p, &x, &[5.0], Block::W, 1e-5, 1e-12).unwrap();
        assert!((fd.values[(0, 0)] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn zero_residual_gives_zero_gradients() {
        let (p, x, _) = instance(12, 3, 4, 5);
        let st0 = batch_forward(&p, &x, &[0.0; 4], 1e-12).unwrap();
        let yhat = st0.yhat.to_vec();
        let st = batch_forward(&p, &x, &yhat, 1e-12).unwrap();
        let g = grad_all(&p, &st, 1e-12).unwrap();
        assert_eq!(g.norm_sq(), 0.0);
    }

    #[test]
    fn gu_is_z_transpose_residual() {
        let (p, x, y) = instance(12, 3, 4, 6);
        let st = batch_forward(&p, &x, &y, 1e-12).unwrap();
        let g = grad_all(&p, &st, 1e-12).unwrap();
        let r = st.residual();
        assert_eq!(g.gu, st.z.matvec_t(&r).unwrap());
    }

    #[test]
    fn all_blocks_match_finite_differences() {
        let (p, x, y) = instance(16, 4, 5, 7);
        let st = batch_forward(&p, &x, &y, 1e-13).unwrap();
        let g = grad_all(&p, &st, 1e-13).unwrap();
        for block in Block::ALL {
            let fd = finite_diff_grad(&p, &x, &y, block, 1e-5, 1e-12).unwrap();
            let err = fd.max_rel_error(&g.block(block), 1e-3);
            assert!(err <= 1e-5, "{block:?}: {err:e}");
            assert!(fd.excluded_count() < fd.excluded.len() / 2);
        }
    }

    #[test]
    fn u_block_is_never_excluded() {
        let (p, x, y) = instance(10, 3, 3, 8);
        let fd = finite_diff_grad(&p, &x, &y, Block::U, 1e-5, 1e-12).unwrap();
        assert_eq!(fd.excluded_count(), 0);
    }

    #[test]
    fn unrolled_converges_geometrically_to_implicit() {
        let (p, x, y) = instance(16, 4, 5, 9);
        let st = batch_forward(&p, &x, &y, 1e-14).unwrap();
        let implicit = grad_all(&p, &st, 1e-14).unwrap();
        let err = |k| grad_unrolled(&p, &x, &y, k).unwrap().max_abs_diff(&implicit);
        let e5 = err(5);
        assert!(e5 > 0.0);
        for k in (10..=60).step_by(5) {
            let bound = 2.0 * e5 * p.gamma0.powi(k as i32 - 5) + 1e-12;
            assert!(err(k) <= bound, "K={k}");
        }
    }

    #[test]
    fn dead_unit_one_sided_derivative() {
        // W row 0 is zero, so unit 0 sits on the kink of the input layer.
        // Moving that row along -x keeps it dead: the one-sided derivative is 0,
        // which only the zero subgradient reproduces.
        let (mut p, x, y) = instance(6, 2, 1, 10);
        p.w.row_mut(0).iter_mut().for_each(|v| *v = 0.0);
        let st = batch_forward(&p, &x, &y, 1e-13).unwrap();
        let g = grad_all(&p, &st, 1e-13).unwrap();
        let xr = x.row(0);
        let predicted = -dot(g.gw.row(0), xr);
        let h = 1e-6;
        let mut q = p.clone();
        for (w, &xc) in q.w.row_mut(0).iter_mut().zip(xr) {
            *w -= h * xc;
        }
        let l1 = batch_forward(&q, &x, &y, 1e-13).unwrap().loss();
        let one_sided = (l1 - st.loss()) / h;
        let matches = (one_sided - predicted).abs() <= 1e-6 * (1.0 + one_sided.abs());
        assert_eq!(
            matches,
            !cfg!(feature = "relu-subgradient-one"),
            "{one_sided} vs {predicted}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn gradients_are_linear_in_the_residual(seed in 0u64..1000, s in -3.0f64..3.0) {
            let (p, x, y) = instance(10, 3, 4, seed);
            let st = batch_forward(&p, &x, &y, 1e-12).unwrap();
            let g = grad_all(&p, &st, 1e-12).unwrap();
            // shift labels so every residual is multiplied by s
            let y2: Vec<f64> = st.yhat.iter().zip(&y).map(|(&yh, &yi)| yh - s * (yh - yi)).collect();
            let st2 = batch_forward(&p, &x, &y2, 1e-12).unwrap();
            let g2 = grad_all(&p, &st2, 1e-12).unwrap();
            let scale = g.norm_sq().sqrt().max(1.0);
            prop_assert!(g2.max_abs_diff(&g.scale(s)) <= 1e-10 * scale);
        }

        #[test]
        fn single_sample_patterns_match_batch(seed in 0u64..1000) {
            let (p, x, y) = instance(10, 3, 4, seed);
            let st = batch_forward(&p, &x, &y, 1e-12).unwrap();
            let all = batch_patterns(&p, &st).unwrap();
            for i in 0..4 {
                let one = activation_patterns(&p, x.row(i), st.z.row(i), st.phi.row(i)).unwrap();
                prop_assert_eq!(&one.e, &all[i].e);
                prop_assert_eq!(one.active_d(), all[i].active_d());
            }
        }
    }
}
