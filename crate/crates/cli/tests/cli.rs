//! End-to-end runs of the `anomaly` binary on small synthetic data.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn anomaly(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anomaly"))
        .args(args)
        .env_remove("ANOMALY_DATA_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = anomaly(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    anomaly(args).status.code().expect("exited normally")
}

/// A quick KD-CAE setup: 32x32 disks, narrow filters.
const KD_SMALL: &[&str] = &[
    "--model", "kd-cae", "--data-root", "synthetic", "--image-size", "32", "--kd-filters", "4,8,8",
    "--synthetic-train", "30", "--synthetic-test", "12", "--epochs", "3", "--batch-size", "8",
];

fn train_small(dir: &Path, extra: &[&str]) {
    let d = dir.to_str().unwrap();
    let mut args = vec!["train", "--out", d];
    args.extend_from_slice(KD_SMALL);
    args.extend_from_slice(extra);
    ok(&args);
}

fn summary_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("eval/summary.csv")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("no {key} in summary"))
        .to_string()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn ni_cae_training_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |dir: &str| {
        vec![
            "train".to_string(), "--out".into(), dir.into(), "--model".into(), "ni-cae".into(), "--data-root".into(),
            "synthetic".into(), "--image-size".into(), "32".into(), "--ni-filters".into(), "4,4,4,4,4".into(),
            "--ni-bottleneck".into(), "16".into(), "--synthetic-train".into(), "20".into(), "--synthetic-test".into(),
            "4".into(), "--epochs".into(), "30".into(), "--seed".into(), "7".into(),
        ]
    };
    for run in ["a", "b"] {
        let d = tmp.path().join(run);
        let a = args(d.to_str().unwrap());
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(fs::read(a.join("model.anomf")).unwrap(), fs::read(b.join("model.anomf")).unwrap());
    assert_eq!(fs::read(a.join("history.csv")).unwrap(), fs::read(b.join("history.csv")).unwrap());
    // noise defaults to on for the NI-CAE: floor(0.1 * 20) = 2 images
    assert_eq!(data_rows(&a.join("noise_plan.csv")).len(), 2);
}

#[test]
fn noise_plan_lists_a_tenth_of_the_training_images() {
    let tmp = tempfile::tempdir().unwrap();
    for k in [9usize, 10, 37] {
        let dir = tmp.path().join(format!("k{k}"));
        let k_s = k.to_string();
        train_small(&dir, &["--noise-train", "on", "--synthetic-train", &k_s, "--epochs", "1"]);
        let rows = data_rows(&dir.join("noise_plan.csv"));
        assert_eq!(rows.len(), k / 10, "K = {k}");
        assert!(rows.iter().all(|r| r[1].starts_with("train/good/")));
    }
    let clean = tmp.path().join("clean");
    train_small(&clean, &["--epochs", "1"]);
    assert!(!clean.join("noise_plan.csv").exists());
}

/// The epoch after which patience runs out, recomputed from the validation losses.
fn expected_stop(val: &[f64], patience: usize) -> Option<(usize, usize)> {
    let (mut best, mut best_epoch, mut waited) = (f64::INFINITY, 0, 0);
    for (i, &v) in val.iter().enumerate() {
        if v < best {
            best = v;
            best_epoch = i + 1;
            waited = 0;
        } else {
            waited += 1;
            if waited >= patience {
                return Some((i + 1, best_epoch));
            }
        }
    }
    None
}

#[test]
fn early_stop_is_recorded_in_history() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("plateau");
    // a learning rate far too large makes validation loss bounce around a plateau
    train_small(&dir, &["--epochs", "40", "--patience", "2", "--learning-rate", "0.05"]);
    let text = fs::read_to_string(dir.join("history.csv")).unwrap();
    let val: Vec<f64> = data_rows(&dir.join("history.csv")).iter().map(|r| r[2].parse().unwrap()).collect();
    let (stop, best) = expected_stop(&val, 2).expect("the plateau run should stop early");
    assert_eq!(val.len(), stop);
    assert!(text.contains(&format!("# early stop after epoch {stop}, best epoch {best}")), "{text}");
}

#[test]
fn evaluation_is_reproducible_from_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    train_small(&dir, &["--seed", "5"]);
    let d = dir.to_str().unwrap();
    ok(&["eval", "--out", d]);
    let first: Vec<Vec<u8>> = ["summary.csv", "detail.csv", "scores.csv"]
        .iter()
        .map(|f| fs::read(dir.join("eval").join(f)).unwrap())
        .collect();
    ok(&["eval", "--out", d]);
    for (i, f) in ["summary.csv", "detail.csv", "scores.csv"].iter().enumerate() {
        assert_eq!(fs::read(dir.join("eval").join(f)).unwrap(), first[i], "{f}");
    }
    for f in ["histogram_recon.csv", "histogram_recon.pgm", "histogram_kde.csv", "diagnostics/diagnostics.csv", "diagnostics/00000.pgm"] {
        assert!(dir.join("eval").join(f).exists(), "{f}");
    }
    // the summary's counts agree with the per-image decisions
    let detail = data_rows(&dir.join("eval/detail.csv"));
    let tp = detail.iter().filter(|r| r[1] == "defect" && r[3] == "defect").count();
    assert_eq!(summary_value(&dir, "tp"), tp.to_string());
    assert_eq!(summary_value(&dir, "n"), "12");
}

#[test]
fn fixed_recon_threshold_drives_decisions() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("tb");
    let d = dir.to_str().unwrap();
    let mut args = vec!["train", "--config", "builtin:toothbrush", "--out", d];
    args.extend_from_slice(KD_SMALL);
    args.extend_from_slice(&["--class", "toothbrush", "--rule", "recon_only", "--kde-threshold", "off"]);
    ok(&args);
    ok(&["eval", "--out", d]);
    assert_eq!(summary_value(&dir, "threshold_tau_re"), "0.005000");
    for r in data_rows(&dir.join("eval/scores.csv")) {
        let err: f64 = r[2].parse().unwrap();
        assert_eq!(r[4], if err > 0.005 { "defect" } else { "good" }, "{r:?}");
        assert!(r[3].is_empty(), "no density without a density threshold");
    }
}

#[test]
fn calibrated_threshold_flags_the_upper_tail_of_good_images() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("cal");
    train_small(&dir, &["--rule", "recon_only", "--recon-threshold", "calibrate:75", "--synthetic-train", "60"]);
    let d = dir.to_str().unwrap();
    ok(&["eval", "--out", d, "--eval-split", "validation"]);
    let rows = data_rows(&dir.join("eval/scores.csv"));
    assert!(rows.iter().all(|r| r[1] == "good"));
    let errors: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    let tau: f64 = summary_value(&dir, "threshold_tau_re").parse().unwrap();
    let above = errors.iter().filter(|&&e| e > tau).count();
    assert_eq!(summary_value(&dir, "fp"), above.to_string());
    // 12 validation images, linear-interpolated 75th percentile: 3 strictly above
    assert_eq!(rows.len(), 12);
    assert_eq!(above, 3);
}

#[test]
fn checkpoint_kind_must_match() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("kd");
    train_small(&dir, &["--epochs", "1"]);
    let d = dir.to_str().unwrap();
    assert_eq!(code(&["eval", "--out", d, "--model", "ni-cae"]), 1);
    assert_eq!(code(&["eval", "--out", d, "--image-size", "64"]), 1);
    let ckpt = dir.join("model.anomf");
    assert_eq!(code(&["generate", "--out", d, "--checkpoint", ckpt.to_str().unwrap()]), 1);
    assert_eq!(code(&["generate", "--out", d]), 1);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("x");
    let d = d.to_str().unwrap();
    assert_eq!(code(&["train", "--out", d, "--data-root", "synthetic"]), 1, "missing model");
    assert_eq!(code(&["train", "--out", d, "--model", "kd-cae", "--bogus", "1"]), 1);
    assert_eq!(code(&["train", "--out", d, "--model", "kd-cae", "--epochs", "lots"]), 1);
    assert_eq!(code(&["train", "--out", d, "--model", "kd-cae"]), 1, "no data root");
    assert_eq!(code(&["train", "--config", "builtin:bottle", "--out", d]), 1, "bundled config without data");
    let missing = tmp.path().join("no-such-root");
    assert_eq!(code(&["train", "--out", d, "--model", "kd-cae", "--class", "bottle", "--data-root", missing.to_str().unwrap()]), 2);
    assert_eq!(code(&["eval", "--out", tmp.path().join("not-a-run").to_str().unwrap()]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn diverging_training_exits_with_numeric_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("nan");
    let d = dir.to_str().unwrap();
    let mut args = vec!["train", "--out", d];
    args.extend_from_slice(KD_SMALL);
    args.extend_from_slice(&["--learning-rate", "1e300"]);
    assert_eq!(code(&args), 3);
}

#[test]
fn environment_supplies_the_data_root() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("env");
    let out = Command::new(env!("CARGO_BIN_EXE_anomaly"))
        .args(["train", "--out", dir.to_str().unwrap(), "--model", "kd-cae", "--image-size", "32", "--kd-filters", "4,4,4"])
        .args(["--synthetic-train", "10", "--synthetic-test", "4", "--epochs", "1"])
        .env("ANOMALY_DATA_ROOT", "synthetic")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = fs::read_to_string(dir.join("config.cfg")).unwrap();
    assert!(cfg.contains("root = synthetic"), "{cfg}");
}

#[test]
fn synth_output_loads_as_a_dataset_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = ok(&["synth", "--out", data.to_str().unwrap(), "--class", "disks", "--image-size", "32", "--synthetic-train", "12", "--synthetic-test", "6"]);
    let class_dir = data.join("disks");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), class_dir.to_str().unwrap());
    assert_eq!(fs::read_dir(class_dir.join("train/good")).unwrap().count(), 12);
    assert_eq!(data_rows(&class_dir.join("manifest.csv")).len(), 18);
    let run = tmp.path().join("run");
    ok(&[
        "train", "--out", run.to_str().unwrap(), "--model", "kd-cae", "--class", "disks", "--data-root",
        data.to_str().unwrap(), "--image-size", "32", "--kd-filters", "4,4,4", "--epochs", "1",
    ]);
    ok(&["eval", "--out", run.to_str().unwrap()]);
    assert_eq!(summary_value(&run, "n"), "6");
    let detail = fs::read_to_string(run.join("eval/detail.csv")).unwrap();
    assert!(detail.contains("test/good/"), "{detail}");
}

#[test]
fn cnn_run_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("cnn");
    let d = dir.to_str().unwrap();
    ok(&[
        "train", "--out", d, "--model", "cnn", "--data-root", "synthetic", "--image-size", "32", "--synthetic-train",
        "10", "--synthetic-test", "30", "--epochs", "2", "--cnn-filters", "4", "--cnn-hidden", "8",
    ]);
    ok(&["eval", "--out", d]);
    // 40 pooled images, 30% held out
    assert_eq!(summary_value(&dir, "n"), "12");
    assert_eq!(summary_value(&dir, "threshold_cutoff"), "0.500000");
    assert!(dir.join("eval/histogram_probability.csv").exists());
}

#[test]
fn dcgan_generate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("gan");
    let d = dir.to_str().unwrap();
    ok(&[
        "train", "--out", d, "--model", "dcgan", "--data-root", "synthetic", "--image-size", "32", "--synthetic-train",
        "16", "--synthetic-test", "2", "--steps", "5", "--z-dim", "8", "--base-channels", "2", "--batch-size", "4",
    ]);
    for f in ["generator.anomf", "discriminator.anomf", "history.csv", "config.cfg"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    assert_eq!(data_rows(&dir.join("history.csv")).len(), 5);
    ok(&["generate", "--out", d, "--n", "5"]);
    let gen = dir.join("generated");
    let sheet = fs::read(gen.join("sheet.pgm")).unwrap();
    let first = fs::read(gen.join("00004.pgm")).unwrap();
    ok(&["generate", "--out", d, "--n", "5"]);
    assert_eq!(fs::read(gen.join("sheet.pgm")).unwrap(), sheet);
    assert_eq!(fs::read(gen.join("00004.pgm")).unwrap(), first);
    ok(&["generate", "--out", d, "--n", "5", "--seed", "99"]);
    assert_ne!(fs::read(gen.join("00004.pgm")).unwrap(), first);
    ok(&["generate", "--out", d, "--n", "0"]);
    assert!(!gen.join("sheet.pgm").exists());
    assert_eq!(code(&["eval", "--out", d]), 1);
}

#[test]
fn report_pairs_runs_with_and_without_test_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = tmp.path().join("clean");
    train_small(&clean, &["--seed", "2"]);
    // same training run copied, then evaluated with test noise
    let noisy = tmp.path().join("noisy");
    fs::create_dir_all(&noisy).unwrap();
    for f in ["config.cfg", "model.anomf"] {
        fs::copy(clean.join(f), noisy.join(f)).unwrap();
    }
    ok(&["eval", "--out", clean.to_str().unwrap()]);
    ok(&["eval", "--out", noisy.to_str().unwrap(), "--noise-test", "on"]);
    assert_eq!(data_rows(&noisy.join("eval/noise_plan.csv")).len(), 1);
    let incomplete = tmp.path().join("incomplete");
    fs::create_dir_all(&incomplete).unwrap();
    let table_dir = tmp.path().join("table");
    let out = ok(&[
        "report", "--out", table_dir.to_str().unwrap(), clean.to_str().unwrap(), noisy.to_str().unwrap(), incomplete.to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping"));
    let table = fs::read_to_string(table_dir.join("report.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);
    let rows = data_rows(&table_dir.join("report.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][4].as_str(), rows[1][4].as_str()), ("off", "on"));
    // merged columns equal the per-run summaries
    for (col, key) in [(5, "n"), (6, "tp"), (7, "fp"), (8, "tn"), (9, "fn"), (10, "f1"), (11, "roc_auc")] {
        let merged: Vec<&str> = rows.iter().map(|r| r[col].as_str()).collect();
        assert_eq!(merged, vec![summary_value(&clean, key), summary_value(&noisy, key)], "{key}");
    }
    let single = ok(&["report", clean.to_str().unwrap()]);
    assert_eq!(String::from_utf8_lossy(&single.stdout).lines().count(), 2);
    assert_eq!(code(&["report", incomplete.to_str().unwrap()]), 2);
}
