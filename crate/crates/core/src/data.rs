//! Dataset loading (CSV, IDX), unit normalization, separation of parallel
//! rows and synthetic instances.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm2, DenseMatrix, DenseVector};
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const DEFAULT_PARALLEL_TOL: f64 = 1e-6;
pub const DEFAULT_NOISE_SIGMA: f64 = 1e-3;
const MAX_SEPARATION_PASSES: usize = 100;

/// Where a dataset came from and what was done to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    pub transforms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Csv {
        path: PathBuf,
        label: String,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        classes: (u8, u8),
        per_class: usize,
        seed: u64,
    },
    Synthetic {
        n: usize,
        d: usize,
        seed: u64,
        labels: LabelMode,
    },
    Inline,
}

/// Features (one row per sample) and real-valued regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x: DenseMatrix<T>,
    pub y: DenseVector<T>,
    pub provenance: Provenance,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: DenseMatrix<T>, y: DenseVector<T>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::shape("Dataset::new", x.rows(), y.len()));
        }
        if x.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            x,
            y,
            provenance: Provenance {
                source: Source::Inline,
                transforms: Vec::new(),
            },
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            x: self.x.cast(),
            y: self.y.cast(),
            provenance: self.provenance.clone(),
        }
    }

    /// Largest `|x_i . x_j|` over distinct rows (rows assumed unit-norm).
    pub fn max_abs_cosine(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                worst = worst.max(dot(self.x.row(i), self.x.row(j)).abs());
            }
        }
        worst
    }

    /// Checks unit rows within `norm_tol` and pairwise `|cos| <= 1 - parallel_tol`.
    pub fn check_assumptions(&self, norm_tol: f64, parallel_tol: f64) -> Result<()> {
        crate::model::check_unit_rows(&self.x, norm_tol)?;
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                let c = dot(self.x.row(i), self.x.row(j)).abs().as_f64();
                if c > 1.0 - parallel_tol {
                    return Err(Error::InvalidConfig(format!(
                        "rows {i} and {j} are parallel (|cos| = {c})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Maps labels `{0, 1}` to `{-1, +1}`.
    pub fn with_pm_one_labels(mut self) -> Self {
        let two = T::lit(2.0);
        self.y.iter_mut().for_each(|v| *v = two * *v - T::one());
        self.provenance.transforms.push("labels 0/1 -> -1/+1".into());
        self
    }
}

/// Label column of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl std::fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelColumn::Index(i) => write!(f, "#{i}"),
            LabelColumn::Name(s) => f.write_str(s),
        }
    }
}

/// Reads comma-separated numeric rows; one column is the label, the rest are features.
pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn, has_header: bool) -> Result<Dataset<f64>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let label_idx = match label {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => {
            if !has_header {
                return Err(Error::InvalidConfig(format!(
                    "label column {name:?} given by name but file has no header"
                )));
            }
            let headers = rdr.headers().map_err(csv_error)?;
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidConfig(format!("no column named {name:?}")))?
        }
    };
    let mut width = None;
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(Error::RaggedRows {
                line,
                expected,
                got: rec.len(),
            });
        }
        if label_idx >= rec.len() {
            return Err(Error::InvalidConfig(format!(
                "label column {label_idx} out of range ({} columns)",
                rec.len()
            )));
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric field {field:?} in column {k}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite field {field:?} in column {k}"),
                });
            }
            if k == label_idx {
                labels.push(v);
            } else {
                feats.push(v);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = feats.len() / n;
    if d == 0 {
        return Err(Error::InvalidConfig("CSV has no feature columns".into()));
    }
    let mut ds = Dataset::new(DenseMatrix::from_vec(n, d, feats)?, DenseVector::new(labels)?)?;
    ds.provenance.source = Source::Csv {
        path: path.to_path_buf(),
        label: label.to_string(),
    };
    Ok(ds)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

fn read_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let found = read_u32(&mut r)?;
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(read_u32(&mut r)? as usize);
    }
    let total: usize = dims.iter().product();
    let mut body = vec![0u8; total];
    r.read_exact(&mut body)?;
    Ok((dims, body))
}

/// Loads two classes of an IDX image/label pair, `per_class` samples each
/// drawn with `seed`. Pixels are scaled to `[0, 1]`; the first class is
/// labelled 0 and the second 1.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    classes: (u8, u8),
    per_class: usize,
    seed: u64,
) -> Result<Dataset<f64>> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let (idims, pixels) = read_idx(images, IDX_IMAGES_MAGIC)?;
    let (ldims, labs) = read_idx(labels, IDX_LABELS_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(Error::CountMismatch {
            images: idims[0],
            labels: ldims[0],
        });
    }
    if classes.0 == classes.1 {
        return Err(Error::InvalidConfig("the two IDX classes must differ".into()));
    }
    let d = idims[1] * idims[2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(2 * per_class);
    for (target, class) in [(0.0, classes.0), (1.0, classes.1)] {
        let pool: Vec<usize> = (0..labs.len()).filter(|&i| labs[i] == class).collect();
        if pool.len() < per_class {
            return Err(Error::InsufficientSamples {
                class,
                available: pool.len(),
                requested: per_class,
            });
        }
        let mut pick: Vec<usize> = pool.choose_multiple(&mut rng, per_class).copied().collect();
        pick.sort_unstable();
        chosen.extend(pick.into_iter().map(|i| (i, target)));
    }
    if chosen.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = chosen.len();
    let x = DenseMatrix::from_fn(n, d, |r, c| f64::from(pixels[chosen[r].0 * d + c]) / 255.0);
    let y = DenseVector::from_fn(n, |r| chosen[r].1);
    let mut ds = Dataset::new(x, y)?;
    ds.provenance.source = Source::Idx {
        images: images.to_path_buf(),
        labels: labels.to_path_buf(),
        classes,
        per_class,
        seed,
    };
    ds.provenance.transforms.push("pixels / 255".into());
    Ok(ds)
}

/// Writes an IDX image file (`n x rows x cols` unsigned bytes).
pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for dim in [images.len(), rows, cols] {
        f.write_all(&(dim as u32).to_be_bytes())?;
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::shape("write_idx_images", rows * cols, img.len()));
        }
        f.write_all(img)?;
    }
    f.flush()?;
    Ok(())
}

/// Writes an IDX label file.
pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    f.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    f.flush()?;
    Ok(())
}

/// Scales every row to unit Euclidean norm.
pub fn normalize_unit<T: Scalar>(ds: &Dataset<T>) -> Result<Dataset<T>> {
    let mut out = ds.clone();
    for i in 0..out.n() {
        let nr = norm2(out.x.row(i));
        if nr == T::zero() {
            return Err(Error::ZeroRow(i));
        }
        out.x.row_mut(i).iter_mut().for_each(|v| *v /= nr);
    }
    out.provenance.transforms.push("unit rows".into());
    Ok(out)
}

/// Perturbs later rows of (anti)parallel pairs with Gaussian noise and
/// renormalizes until every pair has `|cos| <= 1 - parallel_tol`.
pub fn deparallelize<T: Scalar>(ds: &Dataset<T>, parallel_tol: f64, noise_sigma: f64, seed: u64) -> Result<Dataset<T>> {
    if !(parallel_tol > 0.0 && parallel_tol < 1.0) || !(noise_sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "parallel_tol must lie in (0,1) and noise_sigma be positive (got {parallel_tol}, {noise_sigma})"
        )));
    }
    let mut out = ds.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = T::lit(1.0 - parallel_tol);
    let mut touched = false;
    for _ in 0..MAX_SEPARATION_PASSES {
        let mut changed = false;
        for j in 1..out.n() {
            for i in 0..j {
                if dot(out.x.row(i), out.x.row(j)).abs() > limit {
                    let row = out.x.row_mut(j);
                    for v in row.iter_mut() {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        *v += T::lit(noise_sigma * g);
                    }
                    let nr = norm2(row);
                    if nr == T::zero() {
                        return Err(Error::ZeroRow(j));
                    }
                    row.iter_mut().for_each(|v| *v /= nr);
                    changed = true;
                }
            }
        }
        if !changed {
            if touched {
                out.provenance.transforms.push(format!(
                    "deparallelize tol={parallel_tol} sigma={noise_sigma} seed={seed}"
                ));
            }
            return Ok(out);
        }
        touched = true;
    }
    Err(Error::CannotSeparate {
        passes: MAX_SEPARATION_PASSES,
    })
}

/// Label distribution of synthetic instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    PmOne,
    Gaussian,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pm_one" => Ok(LabelMode::PmOne),
            "gaussian" => Ok(LabelMode::Gaussian),
            other => Err(Error::InvalidConfig(format!(
                "unknown label mode {other:?} (pm_one|gaussian)"
            ))),
        }
    }
}

/// Rows uniform on the unit sphere with pairwise `|cos| < 0.9`, labels per `mode`.
pub fn synthetic_gen(n: usize, d: usize, seed: u64, mode: LabelMode) -> Result<Dataset<f64>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if d < 2 && n > 1 {
        return Err(Error::InvalidConfig(format!("synthetic data with n={n} needs d >= 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    for _ in 0..1000 {
        let raw = Dataset::new(
            DenseMatrix::from_fn(n, d, |_, _| gauss(&mut rng)),
            DenseVector::zeros(n),
        )?;
        let Ok(unit) = normalize_unit(&raw) else { continue };
        if unit.max_abs_cosine() >= 0.9 {
            continue;
        }
        let mut ds = deparallelize(&unit, DEFAULT_PARALLEL_TOL, DEFAULT_NOISE_SIGMA, seed)?;
        ds.y = DenseVector::from_fn(n, |_| match mode {
            LabelMode::PmOne => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            LabelMode::Gaussian => gauss(&mut rng),
        });
        ds.provenance.source = Source::Synthetic {
            n,
            d,
            seed,
            labels: mode,
        };
        return Ok(ds);
    }
    Err(Error::CannotSeparate { passes: 1000 })
}

/// Normalization followed by separation of parallel rows with default settings.
pub fn prepare<T: Scalar>(ds: &Dataset<T>, seed: u64) -> Result<Dataset<T>> {
    let unit = normalize_unit(ds)?;
    deparallelize(&unit, DEFAULT_PARALLEL_TOL, DEFAULT_NOISE_SIGMA, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::lambda0_estimate;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn csv_with_header_and_named_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "f1,f2,label\n1,2,0\n3,4,1\n5,6,1\n");
        let ds = load_csv(&p, &LabelColumn::Name("label".into()), true).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.y.as_slice(), &[0.0, 1.0, 1.0]);
        assert_eq!(ds.x.row(1), &[3.0, 4.0]);
        let by_index = load_csv(&p, &LabelColumn::Index(0), true).unwrap();
        assert_eq!(by_index.y.as_slice(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad = write(dir.path(), "b.csv", "1,2,0\n3,x,1\n");
        match load_csv(&bad, &LabelColumn::Index(2), false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let ragged = write(dir.path(), "r.csv", "1,2,0\n3,1\n");
        assert!(matches!(
            load_csv(&ragged, &LabelColumn::Index(0), false),
            Err(Error::RaggedRows { line: 2, .. })
        ));
        let empty = write(dir.path(), "e.csv", "");
        assert!(matches!(
            load_csv(&empty, &LabelColumn::Index(0), false),
            Err(Error::EmptyDataset)
        ));
        let header_only = write(dir.path(), "h.csv", "a,b\n");
        assert!(matches!(
            load_csv(&header_only, &LabelColumn::Index(0), true),
            Err(Error::EmptyDataset)
        ));
    }

    fn idx_fixture(dir: &Path) -> (PathBuf, PathBuf) {
        let labels: Vec<u8> = (0..30).map(|i| (i % 3) as u8).collect();
        let images: Vec<Vec<u8>> = (0..30)
            .map(|i| (0..4).map(|k| ((i * 7 + k * 13) % 256) as u8).collect())
            .collect();
        let ip = dir.join("img.idx");
        let lp = dir.join("lab.idx");
        write_idx_images(&ip, 2, 2, &images).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_round_trip_and_sampling() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = idx_fixture(dir.path());
        let ds = load_idx(&ip, &lp, (0, 1), 5, 7).unwrap();
        assert_eq!(ds.n(), 10);
        assert_eq!(ds.d(), 4);
        assert_eq!(ds.y.iter().filter(|&&v| v == 0.0).count(), 5);
        assert!(ds.x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(ds, load_idx(&ip, &lp, (0, 1), 5, 7).unwrap());
        assert_ne!(ds.x, load_idx(&ip, &lp, (0, 1), 5, 8).unwrap().x);
        assert!(matches!(
            load_idx(&ip, &lp, (0, 1), 11, 7),
            Err(Error::InsufficientSamples {
                class: 0,
                available: 10,
                requested: 11
            })
        ));
    }

    #[test]
    fn idx_header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = idx_fixture(dir.path());
        assert!(matches!(load_idx(&lp, &lp, (0, 1), 1, 0), Err(Error::BadMagic { .. })));
        let short = dir.path().join("short.idx");
        write_idx_labels(&short, &[0, 1]).unwrap();
        assert!(matches!(
            load_idx(&ip, &short, (0, 1), 1, 0),
            Err(Error::CountMismatch { images: 30, labels: 2 })
        ));
    }

    #[test]
    fn normalize_examples() {
        let ds: Dataset<f64> = Dataset::new(
            DenseMatrix::from_rows(&[vec![3.0, 4.0], vec![0.6, 0.8]]).unwrap(),
            DenseVector::new(vec![0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let u = normalize_unit(&ds).unwrap();
        assert!((u.x[(0, 0)] - 0.6).abs() < 1e-15 && (u.x[(0, 1)] - 0.8).abs() < 1e-15);
        assert!((u.x[(1, 0)] - 0.6).abs() < 1e-15);
        let zero = Dataset::new(
            DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap(),
            DenseVector::zeros(2),
        )
        .unwrap();
        assert!(matches!(normalize_unit(&zero), Err(Error::ZeroRow(1))));
    }

    #[test]
    fn deparallelize_examples() {
        let rows = vec![
            vec![0.6, 0.8, 0.0],
            vec![0.6, 0.8, 0.0],
            vec![-0.6, -0.8, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let ds = Dataset::new(
            DenseMatrix::from_rows(&rows).unwrap(),
            DenseVector::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        )
        .unwrap();
        let out = deparallelize(&ds, 1e-6, 1e-3, 3).unwrap();
        out.check_assumptions(1e-12, 1e-6).unwrap();
        assert_eq!(out.x.row(0), ds.x.row(0));
        assert_eq!(out.x.row(3), ds.x.row(3));
        assert_eq!(out.y, ds.y);
        assert!(lambda0_estimate(&out.x).is_ok());
        let again = deparallelize(&out, 1e-6, 1e-3, 3).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn synthetic_instances() {
        let ds = synthetic_gen(10, 20, 1, LabelMode::PmOne).unwrap();
        assert!(ds.max_abs_cosine() < 0.9);
        ds.check_assumptions(1e-12, DEFAULT_PARALLEL_TOL).unwrap();
        assert!(ds.y.iter().all(|&v| v == 1.0 || v == -1.0));
        assert_eq!(ds, synthetic_gen(10, 20, 1, LabelMode::PmOne).unwrap());
        assert!(lambda0_estimate(&ds.x).unwrap() > 0.0);
        let g = synthetic_gen(5, 3, 2, LabelMode::Gaussian).unwrap();
        assert!(g.y.iter().any(|&v| v != 1.0 && v != -1.0));
        assert!(synthetic_gen(3, 1, 0, LabelMode::PmOne).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pipeline_preserves_rows_and_labels(seed in 0u64..10_000, dup in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            rows.push(rows[dup].iter().map(|v| v * 2.0).collect());
            let y: Vec<f64> = (0..7).map(|i| i as f64).collect();
            let ds = Dataset::new(DenseMatrix::from_rows(&rows).unwrap(), DenseVector::new(y.clone()).unwrap()).unwrap();
            let out = prepare(&ds, seed).unwrap();
            prop_assert_eq!(out.n(), 7);
            prop_assert_eq!(out.y.as_slice(), &y[..]);
            prop_assert!(out.check_assumptions(1e-12, DEFAULT_PARALLEL_TOL).is_ok());
            let again = deparallelize(&out, DEFAULT_PARALLEL_TOL, DEFAULT_NOISE_SIGMA, seed + 1).unwrap();
            prop_assert_eq!(again.x, out.x);
        }
    }
}
