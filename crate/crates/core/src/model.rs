//! Implicit ReLU network: parameters, feature map, equilibrium solver, prediction and loss.
//!
//! The hidden state is the fixed point `z = relu(g A z + phi)` with
//! `phi = relu(W x) / sqrt(m)` and `g = gamma / sqrt(m)`; the prediction is
//! `u.z + v.phi`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm2, operator_norm_est_from, DenseMatrix, DenseVector};
use crate::scalar::Scalar;

/// Multiplicative safety margin applied to the cached `||A||` estimate at the gate.
pub const GATE_INFLATION: f64 = 1.01;
/// Rows of `X` must have unit norm within this tolerance before a forward pass.
pub const UNIT_ROW_TOL: f64 = 1e-8;
/// Default relative tolerance of the fixed-point and resolvent solvers.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_GAMMA0: f64 = 0.5;

/// ReLU derivative as an activity flag. The subgradient at exactly zero is 0.
#[inline]
pub fn relu_active<T: Scalar>(pre: T) -> bool {
    if cfg!(feature = "relu-subgradient-one") {
        pre >= T::zero()
    } else {
        pre > T::zero()
    }
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

/// Trainable blocks plus the fixed scaling of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub a: DenseMatrix<T>,
    pub w: DenseMatrix<T>,
    pub u: DenseVector<T>,
    pub v: DenseVector<T>,
    pub gamma0: T,
    pub gamma: T,
    pub seed: u64,
    /// `||A||/sqrt(m)` measured when the parameters were created.
    pub c_init: T,
    a_norm: T,
    a_norm_vec: Vec<T>,
}

/// Power-iteration settings used whenever `Params` measures `||A||`.
#[derive(Debug, Clone, Copy)]
pub struct NormOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NormOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 5_000,
        }
    }
}

/// Initializes `A, W ~ N(0,1)` and `u, v` Rademacher, then picks
/// `gamma = min(gamma0, gamma0 / (2 c))` with `c = ||A||/sqrt(m)`.
pub fn init_params<T: Scalar>(m: usize, d: usize, gamma0: T, seed: u64) -> Result<Params<T>> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidConfig(format!("m and d must be positive (m={m}, d={d})")));
    }
    check_gamma0(gamma0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> T {
        let g: f64 = StandardNormal.sample(rng);
        T::lit(g)
    };
    let a = DenseMatrix::from_fn(m, m, |_, _| gauss(&mut rng));
    let w = DenseMatrix::from_fn(m, d, |_, _| gauss(&mut rng));
    let rademacher = |rng: &mut ChaCha8Rng| -> T {
        if rng.gen::<bool>() {
            T::one()
        } else {
            -T::one()
        }
    };
    let u = DenseVector::from_fn(m, |_| rademacher(&mut rng));
    let v = DenseVector::from_fn(m, |_| rademacher(&mut rng));

    let est = operator_norm_est_from(
        &a,
        None,
        T::lit(NormOptions::default().tol),
        NormOptions::default().max_iter,
    )?;
    let sqrt_m = T::from_usize_lossy(m).sqrt();
    let c_init = est.value / sqrt_m;
    let two = T::lit(2.0);
    let gamma = if c_init > T::zero() {
        gamma0.min(gamma0 / (two * c_init))
    } else {
        gamma0
    };
    Ok(Params {
        a,
        w,
        u,
        v,
        gamma0,
        gamma,
        seed,
        c_init,
        a_norm: est.value,
        a_norm_vec: est.vector,
    })
}

fn check_gamma0<T: Scalar>(gamma0: T) -> Result<()> {
    if !(gamma0 > T::zero() && gamma0 < T::one()) {
        return Err(Error::InvalidConfig(format!("gamma0 must lie in (0,1), got {gamma0}")));
    }
    Ok(())
}

impl<T: Scalar> Params<T> {
    /// Assembles parameters from explicit blocks (tests, checkpoints).
    pub fn from_parts(
        a: DenseMatrix<T>,
        w: DenseMatrix<T>,
        u: DenseVector<T>,
        v: DenseVector<T>,
        gamma0: T,
        gamma: T,
        seed: u64,
    ) -> Result<Self> {
        let m = a.rows();
        if m == 0 || a.cols() != m || w.rows() != m || w.cols() == 0 || u.len() != m || v.len() != m {
            return Err(Error::shape(
                "Params::from_parts",
                "A m x m, W m x d, u and v of length m",
                format!("A {:?}, W {:?}, u {}, v {}", a.shape(), w.shape(), u.len(), v.len()),
            ));
        }
        check_gamma0(gamma0)?;
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0,1), got {gamma}")));
        }
        a.ensure_finite("Params::from_parts A")?;
        w.ensure_finite("Params::from_parts W")?;
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite("Params::from_parts u/v"));
        }
        let opts = NormOptions::default();
        let est = operator_norm_est_from(&a, None, T::lit(opts.tol), opts.max_iter)?;
        let c_init = est.value / T::from_usize_lossy(m).sqrt();
        Ok(Self {
            a,
            w,
            u,
            v,
            gamma0,
            gamma,
            seed,
            c_init,
            a_norm: est.value,
            a_norm_vec: est.vector,
        })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.a.rows()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.w.cols()
    }

    #[inline]
    pub fn gamma_tilde(&self) -> T {
        self.gamma / T::from_usize_lossy(self.m()).sqrt()
    }

    /// Cached estimate of `||A||`.
    pub fn a_norm(&self) -> T {
        self.a_norm
    }

    /// Re-estimates `||A||`, warm-starting from the previous singular vector.
    pub fn refresh_a_norm(&mut self, opts: NormOptions) -> Result<T> {
        let est = operator_norm_est_from(&self.a, Some(&self.a_norm_vec), T::lit(opts.tol), opts.max_iter)?;
        self.a_norm = est.value;
        self.a_norm_vec = est.vector;
        Ok(est.value)
    }

    /// Raises the cached `||A||` by `delta`; after `A += E` the triangle
    /// inequality keeps the cache an upper bound when `delta >= ||E||`.
    pub fn bump_a_norm(&mut self, delta: T) {
        self.a_norm += delta.max(T::zero());
    }

    /// `g ||A||` using the cached norm, without inflation.
    pub fn scaled_a_norm(&self) -> T {
        self.gamma_tilde() * self.a_norm
    }

    /// Contraction gate: `g * 1.01 * ||A||_est <= gamma0`.
    pub fn check_well_posed(&self) -> Result<()> {
        let scaled = self.scaled_a_norm() * T::lit(GATE_INFLATION);
        if scaled <= self.gamma0 {
            Ok(())
        } else {
            Err(Error::WellPosednessLost {
                scaled_norm: scaled.as_f64(),
                gamma0: self.gamma0.as_f64(),
                sample: None,
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.w.is_finite() && self.u.is_finite() && self.v.is_finite()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            a: self.a.cast(),
            w: self.w.cast(),
            u: self.u.cast(),
            v: self.v.cast(),
            gamma0: U::lit(self.gamma0.as_f64()),
            gamma: U::lit(self.gamma.as_f64()),
            seed: self.seed,
            c_init: U::lit(self.c_init.as_f64()),
            a_norm: U::lit(self.a_norm.as_f64()),
            a_norm_vec: self.a_norm_vec.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }

    /// Flat binary checkpoint: `m, d` (u64), `gamma0, gamma` (f64), `seed` (u64),
    /// then `A, W, u, v` row-major as f64, all little-endian.
    pub fn write_checkpoint(&self, mut out: impl Write) -> Result<()> {
        out.write_all(&(self.m() as u64).to_le_bytes())?;
        out.write_all(&(self.d() as u64).to_le_bytes())?;
        out.write_all(&self.gamma0.as_f64().to_le_bytes())?;
        out.write_all(&self.gamma.as_f64().to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        let blocks: [&[T]; 4] = [self.a.data(), self.w.data(), &self.u, &self.v];
        let mut buf = Vec::with_capacity(8 * (self.a.data().len() + self.w.data().len() + 2 * self.m()));
        for block in blocks {
            for x in block {
                buf.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint(mut input: impl Read) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next_u64 = |input: &mut dyn Read| -> Result<u64> {
            input
                .read_exact(&mut word)
                .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
            Ok(u64::from_le_bytes(word))
        };
        let m = next_u64(&mut input)? as usize;
        let d = next_u64(&mut input)? as usize;
        let gamma0 = f64::from_bits(next_u64(&mut input)?);
        let gamma = f64::from_bits(next_u64(&mut input)?);
        let seed = next_u64(&mut input)?;
        if m == 0 || d == 0 || m > 1 << 20 || d > 1 << 24 {
            return Err(Error::Checkpoint(format!("implausible dimensions m={m}, d={d}")));
        }
        let mut read_block = |len: usize| -> Result<Vec<T>> {
            let mut bytes = vec![0u8; len * 8];
            input
                .read_exact(&mut bytes)
                .map_err(|e| Error::Checkpoint(format!("truncated body: {e}")))?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect())
        };
        let a = DenseMatrix::from_vec(m, m, read_block(m * m)?)?;
        let w = DenseMatrix::from_vec(m, d, read_block(m * d)?)?;
        let u = DenseVector::new(read_block(m)?)?;
        let v = DenseVector::new(read_block(m)?)?;
        Self::from_parts(a, w, u, v, T::lit(gamma0), T::lit(gamma), seed)
    }
}

/// `phi = relu(W x) / sqrt(m)`.
pub fn compute_phi<T: Scalar>(w: &DenseMatrix<T>, x: &[T]) -> Result<DenseVector<T>> {
    if x.len() != w.cols() {
        return Err(Error::shape("compute_phi", w.cols(), x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("compute_phi input"));
    }
    let scale = T::one() / T::from_usize_lossy(w.rows()).sqrt();
    let mut wx = w.matvec(x)?;
    wx.iter_mut().for_each(|e| *e = relu(*e) * scale);
    Ok(wx)
}

/// Feature matrix `Phi = relu(X W^T) / sqrt(m)`, one row per sample.
pub fn compute_phi_batch<T: Scalar>(w: &DenseMatrix<T>, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let mut phi = x.matmul_nt(w)?;
    let scale = T::one() / T::from_usize_lossy(w.rows()).sqrt();
    phi.data_mut().iter_mut().for_each(|e| *e = relu(*e) * scale);
    Ok(phi)
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution<T> {
    pub z: DenseVector<T>,
    pub iterations: usize,
    /// `||z - relu(g A z + phi)||`.
    pub residual: T,
    /// Successive-iterate distances `||z^{l+1} - z^l||`, filled only when tracing.
    pub trace: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    pub trace: bool,
}

impl<T: Scalar> SolveOptions<T> {
    pub fn new(tol: T) -> Self {
        Self {
            tol,
            max_iter: 10_000,
            trace: false,
        }
    }
}

/// Iteration cap implied by geometric contraction at rate `gamma0` from `z = 0`.
pub fn picard_iteration_cap<T: Scalar>(phi_norm: T, tol: T, gamma0: T) -> usize {
    let num = (tol * (T::one() - gamma0) / phi_norm.max(tol)).ln();
    let k = (num / gamma0.ln()).ceil().as_f64().max(0.0);
    k as usize + 1
}

/// Fixed points for every row of `phi` (batched Picard iteration).
#[derive(Debug, Clone)]
pub struct Equilibria<T> {
    pub z: DenseMatrix<T>,
    /// `g A z + phi` at the returned `z`.
    pub pre: DenseMatrix<T>,
    pub iterations: Vec<usize>,
    pub residuals: Vec<T>,
    pub traces: Vec<Vec<T>>,
}

/// Picard iteration `z <- relu(g A z + phi)` for each row of `phi`, starting
/// from `init` (or zero). Rows stop independently once successive iterates are
/// within `tol * max(1, ||phi_i||)`.
pub fn solve_equilibria<T: Scalar>(
    p: &Params<T>,
    phi: &DenseMatrix<T>,
    opts: &SolveOptions<T>,
    init: Option<&DenseMatrix<T>>,
) -> Result<Equilibria<T>> {
    let m = p.m();
    let n = phi.rows();
    if phi.cols() != m {
        return Err(Error::shape("solve_equilibria", m, phi.cols()));
    }
    p.check_well_posed()?;
    let g = p.gamma_tilde();
    let mut z = match init {
        Some(z0) if z0.shape() == (n, m) => z0.clone(),
        Some(z0) => {
            return Err(Error::shape(
                "solve_equilibria init",
                format!("{:?}", (n, m)),
                format!("{:?}", z0.shape()),
            ))
        }
        None => DenseMatrix::zeros(n, m),
    };
    let thresholds: Vec<T> = (0..n).map(|i| opts.tol * norm2(phi.row(i)).max(T::one())).collect();
    let mut iterations = vec![0usize; n];
    let mut traces = vec![Vec::new(); n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut sweep = 0usize;
    while !active.is_empty() {
        sweep += 1;
        if sweep > opts.max_iter {
            let i = active[0];
            return Err(Error::Sample {
                index: i,
                source: Box::new(Error::NoConvergence {
                    what: "equilibrium solve",
                    iterations: opts.max_iter,
                    last_change: traces[i].last().map_or(f64::NAN, |x: &T| x.as_f64()),
                }),
            });
        }
        let mut buf = DenseMatrix::zeros(active.len(), m);
        for (r, &i) in active.iter().enumerate() {
            buf.row_mut(r).copy_from_slice(z.row(i));
        }
        let pre = buf.matmul_nt(&p.a)?;
        let mut still = Vec::with_capacity(active.len());
        for (r, &i) in active.iter().enumerate() {
            let zi = z.row_mut(i);
            let mut diff_sq = T::zero();
            for ((zk, &ak), &fk) in zi.iter_mut().zip(pre.row(r)).zip(phi.row(i)) {
                let next = relu(g * ak + fk);
                let delta = next - *zk;
                diff_sq += delta * delta;
                *zk = next;
            }
            let diff = diff_sq.sqrt();
            iterations[i] += 1;
            if opts.trace {
                traces[i].push(diff);
            }
            if !diff.is_finite() {
                return Err(Error::Sample {
                    index: i,
                    source: Box::new(Error::NonFinite("equilibrium iterate")),
                });
            }
            if diff > thresholds[i] {
                still.push(i);
            }
        }
        active = still;
    }

    let mut pre = z.matmul_nt(&p.a)?;
    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let mut sq = T::zero();
        for ((q, &zk), &fk) in pre.row_mut(i).iter_mut().zip(z.row(i)).zip(phi.row(i)) {
            *q = g * *q + fk;
            let r = zk - relu(*q);
            sq += r * r;
        }
        residuals.push(sq.sqrt());
    }
    Ok(Equilibria {
        z,
        pre,
        iterations,
        residuals,
        traces,
    })
}

/// Fixed point `z* = relu(g A z* + phi)` for a single feature vector, from `z = 0`.
pub fn solve_equilibrium<T: Scalar>(
    p: &Params<T>,
    phi: &[T],
    tol: T,
    max_iter: usize,
) -> Result<EquilibriumSolution<T>> {
    let opts = SolveOptions {
        tol,
        max_iter,
        trace: false,
    };
    solve_equilibrium_with(p, phi, &opts, None)
}

pub fn solve_equilibrium_with<T: Scalar>(
    p: &Params<T>,
    phi: &[T],
    opts: &SolveOptions<T>,
    init: Option<&[T]>,
) -> Result<EquilibriumSolution<T>> {
    let phi_m = DenseMatrix::from_vec(1, phi.len(), phi.to_vec())?;
    let init_m = match init {
        Some(z0) => Some(DenseMatrix::from_vec(1, z0.len(), z0.to_vec())?),
        None => None,
    };
    let eq = solve_equilibria(p, &phi_m, opts, init_m.as_ref()).map_err(|e| match e {
        Error::Sample { source, .. } => *source,
        other => other,
    })?;
    Ok(EquilibriumSolution {
        z: DenseVector::from_slice(eq.z.row(0)),
        iterations: eq.iterations[0],
        residual: eq.residuals[0],
        trace: eq.traces.into_iter().next().unwrap_or_default(),
    })
}

/// `yhat = u.z + v.phi`.
pub fn predict<T: Scalar>(p: &Params<T>, z: &[T], phi: &[T]) -> Result<T> {
    if z.len() != p.m() || phi.len() != p.m() {
        return Err(Error::shape(
            "predict",
            p.m(),
            format!("z {}, phi {}", z.len(), phi.len()),
        ));
    }
    Ok(dot(&p.u, z) + dot(&p.v, phi))
}

/// `L = 1/2 ||yhat - y||^2`.
pub fn loss<T: Scalar>(yhat: &[T], y: &[T]) -> Result<T> {
    if yhat.len() != y.len() {
        return Err(Error::shape("loss", yhat.len(), y.len()));
    }
    Ok(T::lit(0.5) * residual_sq(yhat, y))
}

pub(crate) fn residual_sq<T: Scalar>(yhat: &[T], y: &[T]) -> T {
    yhat.iter()
        .zip(y)
        .map(|(&a, &b)| (a - b) * (a - b))
        .fold(T::zero(), |s, v| s + v)
}

/// Everything a forward pass over the training set produces.
#[derive(Debug, Clone)]
pub struct BatchState<T> {
    pub x: DenseMatrix<T>,
    pub y: DenseVector<T>,
    pub phi: DenseMatrix<T>,
    pub z: DenseMatrix<T>,
    /// `g A z + phi` at the solved equilibria.
    pub pre_z: DenseMatrix<T>,
    pub yhat: DenseVector<T>,
    pub iterations: Vec<usize>,
    pub residuals: Vec<T>,
}

impl<T: Scalar> BatchState<T> {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    /// `yhat - y`.
    pub fn residual(&self) -> Vec<T> {
        self.yhat.iter().zip(self.y.iter()).map(|(&a, &b)| a - b).collect()
    }

    pub fn loss(&self) -> T {
        T::lit(0.5) * residual_sq(&self.yhat, &self.y)
    }
}

/// Checks the unit-norm precondition on every row of `X`.
pub fn check_unit_rows<T: Scalar>(x: &DenseMatrix<T>, tol: f64) -> Result<()> {
    for (i, row) in x.row_iter().enumerate() {
        let nrm = norm2(row).as_f64();
        if (nrm - 1.0).abs() > tol {
            return Err(Error::NonUnitRow { row: i, norm: nrm });
        }
    }
    Ok(())
}

/// Forward pass over all rows of `x`.
pub fn batch_forward<T: Scalar>(p: &Params<T>, x: &DenseMatrix<T>, y: &[T], tol: T) -> Result<BatchState<T>> {
    batch_forward_from(p, x, y, &SolveOptions::new(tol), None)
}

/// Forward pass with explicit solver options and an optional warm start for `Z`.
pub fn batch_forward_from<T: Scalar>(
    p: &Params<T>,
    x: &DenseMatrix<T>,
    y: &[T],
    opts: &SolveOptions<T>,
    z_init: Option<&DenseMatrix<T>>,
) -> Result<BatchState<T>> {
    if x.cols() != p.d() || y.len() != x.rows() {
        return Err(Error::shape(
            "batch_forward",
            format!("X with {} columns and {} labels", p.d(), x.rows()),
            format!("X {:?}, y {}", x.shape(), y.len()),
        ));
    }
    check_unit_rows(x, UNIT_ROW_TOL.max(T::epsilon().as_f64() * 64.0))?;
    let phi = compute_phi_batch(&p.w, x)?;
    let eq = solve_equilibria(p, &phi, opts, z_init)?;
    let yhat: Vec<T> = (0..x.rows())
        .map(|i| dot(&p.u, eq.z.row(i)) + dot(&p.v, phi.row(i)))
        .collect();
    let yhat = DenseVector::new(yhat).map_err(|_| Error::NonFinite("predictions"))?;
    Ok(BatchState {
        x: x.clone(),
        y: DenseVector::new(y.to_vec())?,
        phi,
        z: eq.z,
        pre_z: eq.pre,
        yhat,
        iterations: eq.iterations,
        residuals: eq.residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn scalar_params(gamma0: f64) -> Params<f64> {
        Params::from_parts(
            DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap(),
            DenseMatrix::from_vec(1, 1, vec![2.0]).unwrap(),
            DenseVector::new(vec![1.0]).unwrap(),
            DenseVector::new(vec![1.0]).unwrap(),
            gamma0,
            0.5,
            0,
        )
        .unwrap()
    }

    #[test]
    fn init_has_exact_rademacher_norms_and_is_deterministic() {
        for seed in 0..5 {
            let p: Params<f64> = init_params(37, 3, 0.5, seed).unwrap();
            assert_eq!(p.u.norm_sq(), 37.0);
            assert_eq!(p.v.norm_sq(), 37.0);
            assert!(p.u.iter().chain(p.v.iter()).all(|&x| x == 1.0 || x == -1.0));
            let q: Params<f64> = init_params(37, 3, 0.5, seed).unwrap();
            assert_eq!(p, q);
            let expect = 0.5f64.min(0.5 / (2.0 * p.c_init));
            assert_eq!(p.gamma, expect);
            assert!(p.check_well_posed().is_ok());
        }
    }

    #[test]
    fn init_rejects_bad_arguments() {
        assert!(init_params::<f64>(0, 3, 0.5, 0).is_err());
        assert!(init_params::<f64>(3, 3, 1.2, 0).is_err());
        assert!(init_params::<f64>(3, 3, 0.0, 0).is_err());
    }

    #[test]
    fn phi_examples() {
        let w = DenseMatrix::from_vec(1, 1, vec![2.0]).unwrap();
        assert_eq!(compute_phi(&w, &[1.0]).unwrap().as_slice(), &[2.0]);
        let w = DenseMatrix::from_vec(1, 1, vec![-3.0]).unwrap();
        assert_eq!(compute_phi(&w, &[1.0]).unwrap().as_slice(), &[0.0]);
        let w = DenseMatrix::from_fn(4, 2, |i, j| (i as f64) - (j as f64));
        assert!(compute_phi(&w, &[0.0, 0.0]).unwrap().iter().all(|&x| x == 0.0));
        assert!(matches!(compute_phi(&w, &[1.0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn scalar_fixed_point() {
        let p = scalar_params(0.6);
        let sol = solve_equilibrium(&p, &[2.0], 1e-12, 1000).unwrap();
        assert!((sol.z[0] - 4.0).abs() < 1e-10);
        assert!(sol.residual <= 1e-12 * 2.0);
        let zero = solve_equilibrium(&p, &[0.0], 1e-12, 1000).unwrap();
        assert_eq!(zero.z[0], 0.0);
        assert_eq!(zero.iterations, 1);
    }

    #[test]
    fn gate_rejects_expanding_scaling() {
        // g ||A|| = 0.5 but gamma0 = 0.5 leaves no room for the 1% inflation
        let p = scalar_params(0.5);
        assert!(matches!(
            solve_equilibrium(&p, &[1.0], 1e-10, 100),
            Err(Error::WellPosednessLost { .. })
        ));
    }

    #[test]
    fn predict_and_loss_examples() {
        let p = scalar_params(0.6);
        assert_eq!(predict(&p, &[4.0], &[2.0]).unwrap(), 6.0);
        assert_eq!(predict(&p, &[0.0], &[0.0]).unwrap(), 0.0);
        let mut q = p.clone();
        q.u[0] = -1.0;
        q.v[0] = -1.0;
        assert_eq!(predict(&q, &[4.0], &[2.0]).unwrap(), -6.0);
        assert_eq!(loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(loss(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 12.5);
        assert!(loss(&[1.0], &[1.0, 2.0]).is_err());
        assert!(predict(&p, &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn batch_forward_scalar_and_dead_features() {
        let p = scalar_params(0.6);
        let x = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let st = batch_forward(&p, &x, &[5.0], 1e-12).unwrap();
        assert!((st.yhat[0] - 6.0).abs() < 1e-10);
        let mut dead = p.clone();
        dead.w = DenseMatrix::zeros(1, 1);
        let st = batch_forward(&dead, &x, &[0.0], 1e-12).unwrap();
        assert_eq!(st.phi.data(), &[0.0]);
        assert_eq!(st.z.data(), &[0.0]);
        assert_eq!(st.yhat[0], 0.0);
        let not_unit = DenseMatrix::from_vec(1, 1, vec![2.0]).unwrap();
        assert!(matches!(
            batch_forward(&p, &not_unit, &[0.0], 1e-12),
            Err(Error::NonUnitRow { .. })
        ));
    }

    #[test]
    fn permuting_rows_permutes_predictions() {
        let p: Params<f64> = init_params(24, 3, 0.5, 4).unwrap();
        let rows = [vec![1.0, 0.0, 0.0], vec![0.6, 0.8, 0.0], vec![0.0, 0.6, -0.8]];
        let x = DenseMatrix::from_rows(&rows).unwrap();
        let xr = DenseMatrix::from_rows(&[rows[2].clone(), rows[0].clone(), rows[1].clone()]).unwrap();
        let a = batch_forward(&p, &x, &[0.0; 3], 1e-10).unwrap();
        let b = batch_forward(&p, &xr, &[0.0; 3], 1e-10).unwrap();
        assert_eq!(a.yhat[0], b.yhat[1]);
        assert_eq!(a.yhat[1], b.yhat[2]);
        assert_eq!(a.yhat[2], b.yhat[0]);
    }

    #[test]
    fn checkpoint_round_trip_and_layout() {
        let p: Params<f64> = init_params(5, 2, 0.5, 77).unwrap();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert_eq!(buf.len(), 40 + 8 * (25 + 10 + 5 + 5));
        assert_eq!(u64::from_le_bytes(buf[0..8].try_into().unwrap()), 5);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[16..24].try_into().unwrap()), 0.5);
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), p.gamma);
        assert_eq!(u64::from_le_bytes(buf[32..40].try_into().unwrap()), 77);
        assert_eq!(f64::from_le_bytes(buf[40..48].try_into().unwrap()), p.a[(0, 0)]);
        let q: Params<f64> = Params::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(q.a, p.a);
        assert_eq!(q.w, p.w);
        assert_eq!(q.u, p.u);
        assert_eq!(q.gamma, p.gamma);
        assert!(Params::<f64>::read_checkpoint(&buf[..50]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fixed_point_is_unique_and_bounded(seed in 0u64..10_000) {
            let p: Params<f64> = init_params(32, 4, 0.5, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let phi = compute_phi(&p.w, &x).unwrap();
            let tol = 1e-11;
            let opts = SolveOptions { tol, max_iter: 1000, trace: true };
            let cold = solve_equilibrium_with(&p, &phi, &opts, None).unwrap();
            let z0: Vec<f64> = (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let warm = solve_equilibrium_with(&p, &phi, &opts, Some(&z0)).unwrap();
            let scale = phi.norm().max(1.0);
            prop_assert!(crate::numerics::dist2(&cold.z, &warm.z) <= 2.0 * tol * scale);
            prop_assert!(cold.z.norm() <= phi.norm() / (1.0 - p.gamma0) + tol);
            prop_assert!(cold.iterations <= picard_iteration_cap(phi.norm(), tol, p.gamma0));
            for w in cold.trace.windows(2) {
                if w[0] > 0.0 {
                    prop_assert!(w[1] / w[0] <= p.gamma0 + 1e-9);
                }
            }
        }
    }
}
