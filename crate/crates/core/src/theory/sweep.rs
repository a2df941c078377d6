use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::compute_phi_batch;
use crate::numerics::{sym_eig_min, sym_op_norm, DenseMatrix};
use crate::scalar::Scalar;

use super::{g_infinity_closed, lambda0_estimate};

/// `G(0) = Phi Phi^T` for a fresh `W ~ N(0,1)` of width `m`. Only `W` is drawn,
/// so wide sweeps never allocate the `m x m` transition matrix.
pub fn feature_gram_at_init<T: Scalar>(x: &DenseMatrix<T>, m: usize, seed: u64) -> Result<DenseMatrix<T>> {
    if m == 0 {
        return Err(Error::InvalidConfig("width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DenseMatrix::from_fn(m, x.cols(), |_, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        T::lit(g)
    });
    Ok(compute_phi_batch(&w, x)?.gram())
}

/// One row of a width sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectraRow {
    pub m: usize,
    pub seed: u64,
    #[serde(rename = "lambda_min_G0")]
    pub lambda_min_g0: f64,
    pub lambda0: f64,
    /// `||G(0) - G_inf||`.
    pub gap_norm: f64,
}

/// `lambda_min(G(0))` and `||G(0) - G_inf||` for every width in `widths` and
/// seeds `0..seeds`, ordered by width then seed.
pub fn spectra_sweep<T: Scalar>(x: &DenseMatrix<T>, widths: &[usize], seeds: u64) -> Result<Vec<SpectraRow>> {
    if widths.is_empty() || seeds == 0 {
        return Err(Error::InvalidConfig(
            "width list and seed count must be nonempty".into(),
        ));
    }
    let lambda0 = lambda0_estimate(x)?.as_f64();
    let g_inf = g_infinity_closed(x)?;
    let jobs: Vec<(usize, u64)> = widths.iter().flat_map(|&m| (0..seeds).map(move |s| (m, s))).collect();
    jobs.par_iter()
        .map(|&(m, seed)| {
            let g0 = feature_gram_at_init(x, m, seed)?;
            Ok(SpectraRow {
                m,
                seed,
                lambda_min_g0: sym_eig_min(&g0)?.as_f64(),
                lambda0,
                gap_norm: sym_op_norm(&g0.sub(&g_inf)?)?.as_f64(),
            })
        })
        .collect()
}

/// Mean of `|lambda_min(G(0)) - lambda0|` per width, in the order of `widths`.
pub fn mean_lambda_gap(rows: &[SpectraRow], widths: &[usize]) -> Vec<f64> {
    widths
        .iter()
        .map(|&m| {
            let sel: Vec<f64> = rows
                .iter()
                .filter(|r| r.m == m)
                .map(|r| (r.lambda_min_g0 - r.lambda0).abs())
                .collect();
            sel.iter().sum::<f64>() / sel.len().max(1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_has_lambda0_one_half() {
        let x = DenseMatrix::<f64>::from_rows(&[vec![0.6, 0.8]]).unwrap();
        let rows = spectra_sweep(&x, &[64, 256], 2).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| (r.lambda0 - 0.5).abs() < 1e-15));
        assert_eq!((rows[0].m, rows[0].seed, rows[3].m, rows[3].seed), (64, 0, 256, 1));
    }

    #[test]
    fn gap_shrinks_with_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = crate::verify::random_unit_rows(6, 8, &mut rng);
        let widths = [64, 1024, 16384];
        let rows = spectra_sweep(&x, &widths, 10).unwrap();
        let gaps = mean_lambda_gap(&rows, &widths);
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(spectra_sweep(&x, &[], 3).is_err());
    }

    #[test]
    fn sweep_is_deterministic_across_pools() {
        let x = DenseMatrix::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| spectra_sweep(&x, &[32, 128], 3).unwrap());
        let b = four.install(|| spectra_sweep(&x, &[32, 128], 3).unwrap());
        assert_eq!(a, b);
    }
}
