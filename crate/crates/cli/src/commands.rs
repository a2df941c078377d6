use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use deq_core::data::Dataset;
use deq_core::model::Params;
use deq_core::numerics::DenseMatrix;
use deq_core::theory::{spectra_sweep, SpectralReport};
use deq_core::training::{gradient_flow, train, Mode, RecordWriter, StepRecord, TrainObserver, TrainOutcome};
use deq_core::verify::run_suite;
use deq_core::{Error, Scalar};
use serde::Serialize;

use crate::config::{Precision, RunConfig};

/// An exit code with the message printed to stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: code_of(&e),
            message: e.to_string(),
        }
    }
}

/// Theory and numerical failures exit with 3, everything else with 2.
fn code_of(e: &Error) -> u8 {
    match e {
        Error::WellPosednessLost { .. }
        | Error::NotContraction { .. }
        | Error::DegenerateData { .. }
        | Error::NoConvergence { .. }
        | Error::NonFinite(_) => 3,
        Error::Sample { source, .. } => code_of(source),
        _ => 2,
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(format!("I/O error: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::usage(format!("serialization error: {e}"))
    }
}

/// Runs `f` on a dedicated pool when a worker count is given.
pub fn with_workers<R: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<R, Failure> + Send,
) -> Result<R, Failure> {
    match workers {
        None => f(),
        Some(0) => Err(Failure::usage("workers must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
            pool.install(f)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Serialize)]
struct Matrices<'a> {
    step: usize,
    g: Vec<&'a [f64]>,
    m: Vec<&'a [f64]>,
    q: Vec<&'a [f64]>,
    h: Vec<&'a [f64]>,
}

fn rows(a: &DenseMatrix<f64>) -> Vec<&[f64]> {
    (0..a.rows()).map(|i| a.row(i)).collect()
}

/// Streams records, reports and checkpoints into the output directory.
struct FileObserver {
    out: PathBuf,
    csv: RecordWriter<BufWriter<File>>,
    spectral: BufWriter<File>,
    emit_matrices: bool,
}

impl<T: Scalar> TrainObserver<T> for FileObserver {
    fn on_record(&mut self, rec: &StepRecord) -> deq_core::Result<()> {
        self.csv.write(rec)?;
        self.csv.flush()
    }

    fn on_report(&mut self, rep: &SpectralReport) -> deq_core::Result<()> {
        serde_json::to_writer(&mut self.spectral, rep)?;
        self.spectral.write_all(b"\n")?;
        self.spectral.flush()?;
        if let (true, Some(mats)) = (self.emit_matrices, &rep.matrices) {
            let dir = self.out.join("matrices");
            fs::create_dir_all(&dir)?;
            let body = Matrices {
                step: rep.step,
                g: rows(&mats.g),
                m: rows(&mats.m),
                q: rows(&mats.q),
                h: rows(&mats.h),
            };
            let mut f = BufWriter::new(File::create(dir.join(format!("step_{:06}.json", rep.step)))?);
            serde_json::to_writer(&mut f, &body)?;
            f.flush()?;
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, step: usize, p: &Params<T>) -> deq_core::Result<()> {
        let dir = self.out.join("checkpoints");
        fs::create_dir_all(&dir)?;
        let mut f = BufWriter::new(File::create(dir.join(format!("step_{step:06}.ckpt")))?);
        p.write_checkpoint(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    completed: bool,
    violation: Option<String>,
    precision: &'a str,
    n: usize,
    d: usize,
    lambda0: f64,
    step_size: f64,
    c_init: f64,
    lambda_hat: Option<f64>,
    initial_loss: f64,
    final_loss: f64,
    loss_ratio: f64,
    strictly_decreasing: bool,
    failed_verdicts: usize,
    records: usize,
    provenance: &'a deq_core::data::Provenance,
}

fn record_ok(r: &StepRecord) -> bool {
    r.well_posed && r.a_norm_ok && r.w_norm_ok && r.lambda_g_ok != Some(false) && r.bound_ok
}

fn run_typed<T: Scalar>(
    cfg: &RunConfig,
    data: &Dataset<f64>,
    obs: &mut FileObserver,
) -> Result<(TrainOutcome<T>, Dataset<T>), Failure> {
    let data: Dataset<T> = data.cast();
    let tc = cfg.train_config(data.n(), data.d());
    let outcome = match tc.mode {
        Mode::Gd => train(&tc, &data, obs)?,
        Mode::Flow => gradient_flow(&tc, &data, obs)?,
    };
    Ok((outcome, data))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), Failure> {
    let data = cfg.load_dataset()?;
    cfg.train_config(data.n(), data.d()).validate()?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    let mut obs = FileObserver {
        out: cfg.out.clone(),
        csv: RecordWriter::new(create(&cfg.out.join("train_log.csv"))?),
        spectral: create(&cfg.out.join("spectral.jsonl"))?,
        emit_matrices: cfg.emit_matrices,
    };
    let (log, violation) = match cfg.precision {
        Precision::F64 => {
            let (o, _) = run_typed::<f64>(cfg, &data, &mut obs)?;
            write_final(&cfg.out, &o.params)?;
            (o.log, o.violation)
        }
        Precision::F32 => {
            let (o, _) = run_typed::<f32>(cfg, &data, &mut obs)?;
            write_final(&cfg.out, &o.params)?;
            (o.log, o.violation)
        }
    };
    log.write_jsonl(create(&cfg.out.join("train_log.jsonl"))?)?;
    if log.config.mode == Mode::Flow {
        let mut w = csv::Writer::from_writer(create(&cfg.out.join("dynamics.csv"))?);
        for p in &log.probes {
            w.serialize(p)
                .map_err(|e| Failure::usage(format!("dynamics.csv: {e}")))?;
        }
        w.flush()?;
    }

    let first = log.records.first().map(|r| r.loss).unwrap_or(f64::NAN);
    let last = log.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    let failed = log.records.iter().filter(|r| !record_ok(r)).count();
    let summary = Summary {
        completed: violation.is_none(),
        violation: violation.as_ref().map(|v| v.to_string()),
        precision: match cfg.precision {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        },
        n: data.n(),
        d: data.d(),
        lambda0: log.lambda0,
        step_size: log.step_size,
        c_init: log.c_init,
        lambda_hat: log.lambda_hat(),
        initial_loss: first,
        final_loss: last,
        loss_ratio: last / first,
        strictly_decreasing: log.strictly_decreasing(),
        failed_verdicts: failed,
        records: log.records.len(),
        provenance: &data.provenance,
    };
    let mut f = create(&cfg.out.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n")?;
    f.flush()?;

    println!(
        "steps {} loss {:.6e} -> {:.6e} (ratio {:.3e}) lambda0 {:.6e} h {:.6e}",
        log.records.len().saturating_sub(1),
        first,
        last,
        last / first,
        log.lambda0,
        log.step_size
    );
    if let Some(v) = violation {
        return Err(Failure {
            code: 3,
            message: v.to_string(),
        });
    }
    if failed > 0 {
        return Err(Failure {
            code: 3,
            message: format!("{failed} logged steps have a failed verdict"),
        });
    }
    Ok(())
}

fn write_final<T: Scalar>(out: &Path, p: &Params<T>) -> Result<(), Failure> {
    let mut f = create(&out.join("final.ckpt"))?;
    p.write_checkpoint(&mut f)?;
    f.flush()?;
    Ok(())
}

pub fn cmd_verify(seed: u64, quick: bool, out: Option<&Path>) -> Result<(), Failure> {
    let report = run_suite(seed, quick)?;
    for r in &report.results {
        println!(
            "{:<6} {:<28} value {:>12.4e} threshold {:>12.4e} margin {:>12.4e} ({} instances)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.threshold,
            r.margin,
            r.instances
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut f = create(&dir.join("verify.json"))?;
        serde_json::to_writer_pretty(&mut f, &report)?;
        f.write_all(b"\n")?;
        f.flush()?;
    }
    match report.first_failure() {
        None => Ok(()),
        Some(r) => Err(Failure {
            code: 1,
            message: format!(
                "property {} failed: value {:e} vs threshold {:e}",
                r.name, r.value, r.threshold
            ),
        }),
    }
}

pub fn cmd_spectra(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.m_list.is_empty() {
        return Err(Failure::usage("m_list is empty"));
    }
    let data = cfg.load_dataset()?;
    let rows = spectra_sweep(&data.x, &cfg.m_list, cfg.seeds)?;
    fs::create_dir_all(&cfg.out)?;
    let mut w = csv::Writer::from_writer(create(&cfg.out.join("spectra.csv"))?);
    for r in &rows {
        w.serialize(r)
            .map_err(|e| Failure::usage(format!("spectra.csv: {e}")))?;
    }
    w.flush()?;
    for &m in &cfg.m_list {
        let sel: Vec<_> = rows.iter().filter(|r| r.m == m).collect();
        let k = sel.len() as f64;
        println!(
            "m {:>6} mean lambda_min(G0) {:.6e} mean gap {:.6e} lambda0 {:.6e}",
            m,
            sel.iter().map(|r| r.lambda_min_g0).sum::<f64>() / k,
            sel.iter().map(|r| r.gap_norm).sum::<f64>() / k,
            sel[0].lambda0
        );
    }
    Ok(())
}
