use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{check_unit_rows, relu, UNIT_ROW_TOL};
use crate::numerics::{sym_eig_min, DenseMatrix};
use crate::scalar::Scalar;

/// `lambda0` at or below this value means the data has (nearly) parallel rows.
pub const DEGENERACY_FLOOR: f64 = 1e-12;

/// Samples per Monte Carlo block; blocks are seeded by index so the estimate
/// does not depend on how they are scheduled.
const MC_BLOCK: usize = 4096;

/// Degree-one arc-cosine kernel `E[relu(g.a) relu(g.b)]` for unit `a, b` with cosine `rho`.
pub fn arc_cosine<T: Scalar>(rho: T) -> T {
    let rho = rho.max(-T::one()).min(T::one());
    let theta = rho.acos();
    let pi = T::lit(std::f64::consts::PI);
    (theta.sin() + (pi - theta) * rho) / (pi + pi)
}

/// Closed form of `G_inf = E_w[relu(X w) relu(X w)^T]`.
pub fn g_infinity_closed<T: Scalar>(x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    check_unit_rows(x, UNIT_ROW_TOL)?;
    let xx = x.gram();
    let n = x.rows();
    let mut g = DenseMatrix::from_fn(n, n, |i, j| arc_cosine(xx[(i, j)]));
    for i in 0..n {
        for j in 0..i {
            let v = g[(i, j)];
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Monte Carlo estimate `(1/S) sum_s relu(X w_s) relu(X w_s)^T` with `w_s ~ N(0, I)`.
pub fn g_infinity_mc<T: Scalar>(x: &DenseMatrix<T>, samples: usize, seed: u64) -> Result<DenseMatrix<T>> {
    if samples == 0 {
        return Err(Error::InvalidConfig("Monte Carlo sample count must be positive".into()));
    }
    let (n, d) = x.shape();
    let blocks = samples.div_ceil(MC_BLOCK);
    let partials: Vec<DenseMatrix<T>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = MC_BLOCK.min(samples - b * MC_BLOCK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let w = DenseMatrix::from_fn(len, d, |_, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                T::lit(g)
            });
            let act = x.matmul_nt(&w).expect("shapes agree").map(relu);
            act.gram()
        })
        .collect();
    let mut acc = DenseMatrix::zeros(n, n);
    for part in &partials {
        acc.axpy(T::one(), part)?;
    }
    Ok(acc.scale(T::one() / T::from_usize_lossy(samples)))
}

/// `lambda0 = lambda_min(G_inf)`; rejects data whose kernel is numerically singular.
pub fn lambda0_estimate<T: Scalar>(x: &DenseMatrix<T>) -> Result<T> {
    let lam = sym_eig_min(&g_infinity_closed(x)?)?;
    if lam.as_f64() <= DEGENERACY_FLOOR {
        return Err(Error::DegenerateData { lambda0: lam.as_f64() });
    }
    Ok(lam)
}
