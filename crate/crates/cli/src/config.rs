//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use deq_core::data::{self, Dataset, LabelColumn, LabelMode};
use deq_core::training::{GatePolicy, Mode, TrainConfig, DEFAULT_ALPHA_COEFF};
use deq_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Csv,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub data_seed: Option<u64>,
    pub m: usize,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub gamma0: f64,
    pub alpha_coeff: f64,
    pub alpha: Option<f64>,
    pub steps: usize,
    pub tol_fp: f64,
    pub k_mon: usize,
    pub k_norm: usize,
    pub k_ckpt: usize,
    pub dt: Option<f64>,
    pub probes: usize,
    pub gates: GatePolicy,
    pub precision: Precision,
    pub dataset: DatasetKind,
    pub labels: Option<LabelMode>,
    pub csv_path: Option<PathBuf>,
    pub label_column: String,
    pub header: bool,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub classes: (u8, u8),
    pub per_class: usize,
    pub pm_one: bool,
    pub out: PathBuf,
    pub emit_matrices: bool,
    pub m_list: Vec<usize>,
    pub seeds: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: Mode::Gd,
            seed: 0,
            data_seed: None,
            m: t.m,
            n: None,
            d: None,
            gamma0: t.gamma0,
            alpha_coeff: DEFAULT_ALPHA_COEFF,
            alpha: None,
            steps: t.steps,
            tol_fp: t.tol_fp,
            k_mon: t.k_mon,
            k_norm: t.k_norm,
            k_ckpt: 0,
            dt: None,
            probes: t.probes,
            gates: GatePolicy::Abort,
            precision: Precision::F64,
            dataset: DatasetKind::Synthetic,
            labels: None,
            csv_path: None,
            label_column: "0".into(),
            header: true,
            idx_images: None,
            idx_labels: None,
            classes: (0, 1),
            per_class: 100,
            pm_one: false,
            out: PathBuf::from("out"),
            emit_matrices: false,
            m_list: vec![256, 1024, 4096, 16384],
            seeds: 20,
        }
    }
}

/// Every accepted key with a one-line description, shown by `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("mode", "gd | flow"),
    ("seed", "parameter initialization seed"),
    (
        "data_seed",
        "seed for data generation, sampling and row separation (default: seed)",
    ),
    ("m", "width"),
    ("n", "sample count (synthetic; checked against loaded data otherwise)"),
    (
        "d",
        "input dimension (synthetic; checked against loaded data otherwise)",
    ),
    ("gamma0", "contraction level in (0,1)"),
    ("alpha_coeff", "c_alpha in alpha = c_alpha * lambda0 / n^2"),
    ("alpha", "explicit stepsize, overrides alpha_coeff"),
    ("steps", "number of updates"),
    ("tol_fp", "fixed-point and resolvent tolerance"),
    ("k_mon", "kernel monitor cadence"),
    ("k_norm", "||A|| power-iteration refresh cadence"),
    ("k_ckpt", "checkpoint cadence, 0 = final only"),
    ("dt", "Euler increment (flow mode)"),
    ("probes", "dynamics probes (flow mode)"),
    ("gates", "abort | record"),
    ("precision", "f64 | f32"),
    ("dataset", "synthetic | csv | idx"),
    ("labels", "synthetic labels: pm_one | gaussian"),
    ("csv_path", "CSV file"),
    ("label_column", "CSV label column, index or header name"),
    ("header", "CSV has a header row (true | false)"),
    ("idx_images", "IDX image file"),
    ("idx_labels", "IDX label file"),
    ("classes", "two IDX classes, e.g. 0,1"),
    ("per_class", "IDX samples per class"),
    ("pm_one", "map 0/1 labels to -1/+1 (true | false)"),
    ("out", "output directory"),
    (
        "emit_matrices",
        "also write G, M, Q, H at monitored steps (true | false)",
    ),
    ("m_list", "spectra: comma-separated widths"),
    ("seeds", "spectra: seeds per width"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad boolean {value:?} for key {key}"))),
    }
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "data_seed" => self.data_seed = Some(parse(key, v)?),
            "m" => self.m = parse(key, v)?,
            "n" => self.n = Some(parse(key, v)?),
            "d" => self.d = Some(parse(key, v)?),
            "gamma0" => self.gamma0 = parse(key, v)?,
            "alpha_coeff" => self.alpha_coeff = parse(key, v)?,
            "alpha" => self.alpha = Some(parse(key, v)?),
            "steps" => self.steps = parse(key, v)?,
            "tol_fp" => self.tol_fp = parse(key, v)?,
            "k_mon" => self.k_mon = parse(key, v)?,
            "k_norm" => self.k_norm = parse(key, v)?,
            "k_ckpt" => self.k_ckpt = parse(key, v)?,
            "dt" => self.dt = Some(parse(key, v)?),
            "probes" => self.probes = parse(key, v)?,
            "gates" => self.gates = v.parse()?,
            "precision" => {
                self.precision = match v {
                    "f64" => Precision::F64,
                    "f32" => Precision::F32,
                    _ => return Err(Error::InvalidConfig(format!("precision must be f64 or f32, got {v:?}"))),
                }
            }
            "dataset" => {
                self.dataset = match v {
                    "synthetic" => DatasetKind::Synthetic,
                    "csv" => DatasetKind::Csv,
                    "idx" => DatasetKind::Idx,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "dataset must be synthetic, csv or idx, got {v:?}"
                        )))
                    }
                }
            }
            "labels" => self.labels = Some(v.parse()?),
            "csv_path" => self.csv_path = Some(PathBuf::from(v)),
            "label_column" => self.label_column = v.to_string(),
            "header" => self.header = parse_bool(key, v)?,
            "idx_images" => self.idx_images = Some(PathBuf::from(v)),
            "idx_labels" => self.idx_labels = Some(PathBuf::from(v)),
            "classes" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(Error::InvalidConfig(format!(
                        "classes needs two comma-separated values, got {v:?}"
                    )));
                }
                self.classes = (parse(key, parts[0])?, parse(key, parts[1])?);
            }
            "per_class" => self.per_class = parse(key, v)?,
            "pm_one" => self.pm_one = parse_bool(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "emit_matrices" => self.emit_matrices = parse_bool(key, v)?,
            "m_list" => {
                self.m_list = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "seeds" => self.seeds = parse(key, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: no + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: no + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// The resolved configuration as `key = value` lines, in [`KEYS`] order.
    /// Unset optional keys and `out` are omitted.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _) in KEYS.iter().filter(|(k, _)| *k != "out") {
            let v = match *k {
                "mode" => self.mode.to_string(),
                "seed" => self.seed.to_string(),
                "data_seed" => self.data_seed().to_string(),
                "m" => self.m.to_string(),
                "n" => opt_str(&self.n),
                "d" => opt_str(&self.d),
                "gamma0" => self.gamma0.to_string(),
                "alpha_coeff" => self.alpha_coeff.to_string(),
                "alpha" => opt_str(&self.alpha),
                "steps" => self.steps.to_string(),
                "tol_fp" => self.tol_fp.to_string(),
                "k_mon" => self.k_mon.to_string(),
                "k_norm" => self.k_norm.to_string(),
                "k_ckpt" => self.k_ckpt.to_string(),
                "dt" => opt_str(&self.dt),
                "probes" => self.probes.to_string(),
                "gates" => match self.gates {
                    GatePolicy::Abort => "abort".into(),
                    GatePolicy::Record => "record".into(),
                },
                "precision" => match self.precision {
                    Precision::F64 => "f64".into(),
                    Precision::F32 => "f32".into(),
                },
                "dataset" => match self.dataset {
                    DatasetKind::Synthetic => "synthetic".into(),
                    DatasetKind::Csv => "csv".into(),
                    DatasetKind::Idx => "idx".into(),
                },
                "labels" => match self.labels.unwrap_or(LabelMode::PmOne) {
                    LabelMode::PmOne => "pm_one".into(),
                    LabelMode::Gaussian => "gaussian".into(),
                },
                "csv_path" => opt_str(&self.csv_path.as_ref().map(|p| p.display())),
                "label_column" => self.label_column.clone(),
                "header" => self.header.to_string(),
                "idx_images" => opt_str(&self.idx_images.as_ref().map(|p| p.display())),
                "idx_labels" => opt_str(&self.idx_labels.as_ref().map(|p| p.display())),
                "classes" => format!("{},{}", self.classes.0, self.classes.1),
                "per_class" => self.per_class.to_string(),
                "pm_one" => self.pm_one.to_string(),
                "emit_matrices" => self.emit_matrices.to_string(),
                "m_list" => self.m_list.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
                "seeds" => self.seeds.to_string(),
                _ => unreachable!("every key is listed"),
            };
            if !v.is_empty() {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }

    /// Loads (or generates) the dataset, then normalizes rows and separates parallel ones.
    pub fn load_dataset(&self) -> Result<Dataset<f64>> {
        let seed = self.data_seed();
        let ds = match self.dataset {
            DatasetKind::Synthetic => {
                let n = self.n.unwrap_or(10);
                let d = self.d.unwrap_or(20);
                return data::synthetic_gen(n, d, seed, self.labels.unwrap_or(LabelMode::PmOne));
            }
            DatasetKind::Csv => {
                let path = self
                    .csv_path
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("dataset = csv needs csv_path".into()))?;
                let col = match self.label_column.parse::<usize>() {
                    Ok(i) => LabelColumn::Index(i),
                    Err(_) => LabelColumn::Name(self.label_column.clone()),
                };
                data::load_csv(path, &col, self.header)?
            }
            DatasetKind::Idx => {
                let (Some(images), Some(labels)) = (&self.idx_images, &self.idx_labels) else {
                    return Err(Error::InvalidConfig(
                        "dataset = idx needs idx_images and idx_labels".into(),
                    ));
                };
                data::load_idx(images, labels, self.classes, self.per_class, seed)?
            }
        };
        let ds = if self.pm_one { ds.with_pm_one_labels() } else { ds };
        let ds = data::prepare(&ds, seed)?;
        if let Some(n) = self.n {
            if n != ds.n() {
                return Err(Error::InvalidConfig(format!(
                    "n = {n} but the dataset has {} rows",
                    ds.n()
                )));
            }
        }
        if let Some(d) = self.d {
            if d != ds.d() {
                return Err(Error::InvalidConfig(format!(
                    "d = {d} but the dataset has {} features",
                    ds.d()
                )));
            }
        }
        Ok(ds)
    }

    pub fn train_config(&self, n: usize, d: usize) -> TrainConfig {
        TrainConfig {
            m: self.m,
            d,
            n,
            gamma0: self.gamma0,
            alpha_coeff: self.alpha_coeff,
            alpha: self.alpha,
            steps: self.steps,
            tol_fp: self.tol_fp,
            k_mon: self.k_mon,
            k_norm: self.k_norm,
            k_ckpt: self.k_ckpt,
            seed: self.seed,
            mode: self.mode,
            dt: self.dt,
            probes: self.probes,
            gates: self.gates,
        }
    }
}
