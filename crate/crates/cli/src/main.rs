use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use commands::Failure;
use config::{RunConfig, KEYS};

#[derive(Parser, Debug)]
#[command(name = "deq", version, about = "Train and check ReLU implicit networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train with gradient descent or Euler-discretized gradient flow.
    #[command(after_help = keys_help())]
    Train(TrainArgs),
    /// Run the seeded property suite.
    Verify(VerifyArgs),
    /// Sweep lambda_min(G(0)) and ||G(0) - G_inf|| over widths and seeds.
    #[command(after_help = keys_help())]
    Spectra(SpectraArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "DEQ_WORKERS")]
    workers: Option<usize>,
    /// Override any configuration key, e.g. `--set k_mon=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Dataset: `synthetic`, `csv[:PATH]` or `idx[:IMAGES,LABELS]`; bare kinds take paths from the config.
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// gd | flow
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long)]
    alpha_coeff: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Reduced instance counts.
    #[arg(long)]
    quick: bool,
}

#[derive(Args, Debug)]
struct SpectraArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated widths.
    #[arg(long)]
    m_list: Option<String>,
    /// Seeds per width.
    #[arg(long)]
    seeds: Option<u64>,
}

fn keys_help() -> String {
    let mut s = String::from("Configuration keys (file lines or --set):\n");
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:<14} {d}\n"));
    }
    s
}

fn apply_dataset(cfg: &mut RunConfig, source: &str) -> Result<(), Failure> {
    if matches!(source, "synthetic" | "csv" | "idx") {
        cfg.set("dataset", source)?;
    } else if let Some(path) = source.strip_prefix("csv:") {
        cfg.set("dataset", "csv")?;
        cfg.set("csv_path", path)?;
    } else if let Some(paths) = source.strip_prefix("idx:") {
        let (images, labels) = paths
            .split_once(',')
            .ok_or_else(|| Failure::usage(format!("idx dataset needs IMAGES,LABELS, got {paths:?}")))?;
        cfg.set("dataset", "idx")?;
        cfg.set("idx_images", images)?;
        cfg.set("idx_labels", labels)?;
    } else {
        return Err(Failure::usage(format!("unrecognized dataset {source:?}")));
    }
    Ok(())
}

fn resolve(common: &Common, extra: &[(&str, Option<String>)]) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(source) = &common.dataset {
        apply_dataset(&mut cfg, source)?;
    }
    for (k, v) in extra {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(a) => {
            let cfg = resolve(
                &a.common,
                &[
                    ("mode", a.mode.clone()),
                    ("m", a.m.map(|v| v.to_string())),
                    ("n", a.n.map(|v| v.to_string())),
                    ("gamma0", a.gamma0.map(|v| v.to_string())),
                    ("alpha_coeff", a.alpha_coeff.map(|v| v.to_string())),
                    ("steps", a.steps.map(|v| v.to_string())),
                ],
            )?;
            commands::with_workers(a.common.workers, || commands::cmd_train(&cfg))
        }
        Command::Verify(a) => {
            let cfg = resolve(&a.common, &[])?;
            let out = a.common.out.as_ref().map(|_| cfg.out.clone());
            commands::with_workers(a.common.workers, || {
                commands::cmd_verify(cfg.seed, a.quick, out.as_deref())
            })
        }
        Command::Spectra(a) => {
            let cfg = resolve(
                &a.common,
                &[("m_list", a.m_list.clone()), ("seeds", a.seeds.map(|v| v.to_string()))],
            )?;
            commands::with_workers(a.common.workers, || commands::cmd_spectra(&cfg))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
