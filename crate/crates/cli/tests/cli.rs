use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deq"))
        .args(args)
        .env_remove("DEQ_WORKERS")
        .output()
        .expect("run deq")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn small_train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--m", "64", "--steps", "25", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    deq(&args)
}

#[test]
fn train_writes_logs_with_descending_loss() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_train(dir.path(), &["--set", "k_ckpt=10"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "train_log.csv",
        "train_log.jsonl",
        "spectral.jsonl",
        "summary.json",
        "config.txt",
        "final.ckpt",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    assert!(dir.path().join("checkpoints/step_000020.ckpt").exists());
    let csv = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("step,t,loss,resid_sq,"));
    let losses: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 26);
    assert!(losses.windows(2).all(|w| w[1] < w[0]));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completed"], true);
}

#[test]
fn reruns_and_worker_counts_give_identical_files() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    assert_eq!(code(&small_train(a.path(), &["--workers", "1"])), 0);
    assert_eq!(code(&small_train(b.path(), &["--workers", "1"])), 0);
    assert_eq!(code(&small_train(c.path(), &["--workers", "4"])), 0);
    for f in [
        "train_log.csv",
        "train_log.jsonl",
        "spectral.jsonl",
        "summary.json",
        "config.txt",
        "final.ckpt",
    ] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f} differs between reruns");
        assert_eq!(
            x,
            fs::read(c.path().join(f)).unwrap(),
            "{f} differs between worker counts"
        );
    }
}

#[test]
fn flow_mode_writes_dynamics() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_train(
        dir.path(),
        &["--mode", "flow", "--set", "dt=0.001", "--set", "probes=5"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dyn_csv = fs::read_to_string(dir.path().join("dynamics.csv")).unwrap();
    assert_eq!(dyn_csv.lines().next().unwrap(), "step,t,abs_err,hr_norm,rel_err");
    assert_eq!(dyn_csv.lines().count(), 6);
}

#[test]
fn invalid_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_train(dir.path(), &["--gamma0", "1.2"])), 2);
    assert_eq!(code(&small_train(dir.path(), &["--set", "no_such_key=1"])), 2);
    assert_eq!(code(&small_train(dir.path(), &["--mode", "sideways"])), 2);
    assert_eq!(
        code(&small_train(dir.path(), &["--dataset", "csv:/nonexistent.csv"])),
        2
    );
    assert_eq!(code(&deq(&["train", "--bogus-flag"])), 2);
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "m = 64\nsteps\n").unwrap();
    let o = deq(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn gate_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_train(dir.path(), &["--set", "alpha=5"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completed"], false);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nm = 32\nsteps = 5\nk_mon = 5\n").unwrap();
    let out = dir.path().join("out");
    let o = deq(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--steps",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(text.contains("m = 32\n") && text.contains("steps = 7\n") && text.contains("k_mon = 5\n"));
    assert_eq!(
        fs::read_to_string(out.join("train_log.csv")).unwrap().lines().count(),
        9
    );
}

#[test]
fn csv_dataset_trains() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    fs::write(&path, "y,a,b,c\n1,1,0,0\n-1,0,1,0\n1,0,0,1\n-1,1,1,0\n").unwrap();
    let source = format!("csv:{}", path.display());
    let o = small_train(dir.path(), &["--dataset", &source, "--set", "label_column=y"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 4);
    assert_eq!(summary["d"], 3);
}

#[test]
fn idx_dataset_trains() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = (dir.path().join("img"), dir.path().join("lbl"));
    let imgs: Vec<Vec<u8>> = (0..12u32)
        .map(|i| (0..16u32).map(|p| ((i * 37 + p * 11) % 251) as u8).collect())
        .collect();
    let lbls: Vec<u8> = (0..12).map(|i| (i % 3) as u8).collect();
    deq_core::data::write_idx_images(&images, 4, 4, &imgs).unwrap();
    deq_core::data::write_idx_labels(&labels, &lbls).unwrap();
    let source = format!("idx:{},{}", images.display(), labels.display());
    let o = small_train(
        dir.path(),
        &[
            "--dataset",
            &source,
            "--set",
            "per_class=3",
            "--set",
            "classes=1,2",
            "--set",
            "pm_one=true",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 6);
    assert_eq!(summary["d"], 16);
    let o = small_train(dir.path(), &["--dataset", &source, "--set", "per_class=9"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_quick_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = deq(&["verify", "--quick", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
    assert!(stdout.contains("gradient_fd"));
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn spectra_writes_csv_and_rejects_empty_width_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = deq(&["spectra", "--m-list", "32,128", "--seeds", "2", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("spectra.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "m,seed,lambda_min_G0,lambda0,gap_norm");
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(code(&deq(&["spectra", "--m-list", "", "--out", out])), 2);
}

#[test]
fn workers_env_var_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_deq"))
        .args([
            "train",
            "--m",
            "32",
            "--steps",
            "2",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env("DEQ_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
