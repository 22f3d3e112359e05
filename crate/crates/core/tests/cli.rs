//! End-to-end runs of the `iimlp` binary on small synthetic problems.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use iimlp::cli::{sha256_hex, RunManifest};

fn iimlp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iimlp"))
        .args(args)
        .env("IIMLP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = iimlp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const BLOBS: &str = r#"{
  "network": {"layers": 8, "data_width": 16, "classes": 3},
  "train": {"epochs": 3, "batch_size": 16, "snapshot_every": 2, "shuffle_seed": 5},
  "data": {"format": "blobs", "blobs_per_class": 20, "blobs_separation": 6.0},
  "probes": {"map_layers": [4, 8], "samples": [0, 3]}
}"#;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, BLOBS).unwrap();
    path
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn assert_inventory_matches(dir: &Path) {
    let m = manifest(dir);
    assert!(!m.outputs.is_empty());
    for f in &m.outputs {
        let bytes = fs::read(dir.join(&f.file)).unwrap();
        assert_eq!(sha256_hex(&bytes), f.sha256, "{}", f.file);
        assert_eq!(bytes.len() as u64, f.bytes);
    }
}

#[test]
fn calibrate_writes_json_and_round_trips_into_train() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cal");
    let stdout = ok(&["calibrate", "--target-mass", "0.8", "--layers", "100", "--out-dir", s(&out)]).stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("sigma"));
    let cal: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("calibration.json")).unwrap()).unwrap();
    let sigma = cal["sigma"].as_f64().unwrap();
    let q = cal["q_star"].as_f64().unwrap();
    assert!(sigma > 1.0 && sigma < 1.01);
    assert_inventory_matches(&out);

    let cfg = write_config(tmp.path());
    let run = tmp.path().join("run");
    ok(&[
        "train", "--config", s(&cfg), "--calibration", s(&out.join("calibration.json")), "--layers", "8",
        "--epochs", "1", "--quiet", "--out-dir", s(&run),
    ]);
    let m = manifest(&run);
    assert_eq!(m.config.network.sigma, sigma);
    assert_eq!(m.config.network.q_star, q);
}

#[test]
fn calibrate_rejects_bad_targets() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    for target in ["1.5", "0.99999"] {
        let res = iimlp(&["calibrate", "--target-mass", target, "--out-dir", s(&out)]);
        assert_eq!(res.status.code(), Some(2), "target {target}");
    }
    assert!(!out.join("calibration.json").exists());
}

#[test]
fn propagate_golden_headers_and_extreme_sigma() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("prop");
    ok(&[
        "propagate", "--layers", "10", "--width", "16", "--samples", "20", "--out-dir", s(&out),
    ]);
    let profile = fs::read_to_string(out.join("propagation_profile.csv")).unwrap();
    let mut lines = profile.lines();
    assert_eq!(lines.next(), Some("layer,q_ell,saturation_fraction"));
    assert_eq!(lines.clone().count(), 10);
    assert!(lines.all(|l| l.split(',').count() == 3));
    let spectrum = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert_eq!(spectrum.lines().next(), Some("source,atom_value,mass_at_atom,mass_at_zero,regime"));
    assert_eq!(spectrum.lines().count(), 3);
    let eig = fs::read_to_string(out.join("eigenvalues.csv")).unwrap();
    assert_eq!(eig.lines().next(), Some("eigenvalue"));
    assert_eq!(eig.lines().count(), 1 + 20 * 16);
    assert_inventory_matches(&out);

    let low = tmp.path().join("low");
    ok(&[
        "propagate", "--sigma", "0.5", "--layers", "100", "--width", "16", "--samples", "10", "--out-dir", s(&low),
    ]);
    let spectrum = fs::read_to_string(low.join("spectrum.csv")).unwrap();
    for row in spectrum.lines().skip(1) {
        let cols: Vec<&str> = row.split(',').collect();
        for v in &cols[1..4] {
            assert!(v.parse::<f64>().unwrap().is_finite(), "{row}");
        }
        assert_eq!(cols[4], "sigma_le_one");
    }
}

#[test]
fn train_and_analyze_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok(&["train", "--config", s(&cfg), "--quiet", "--out-dir", s(dir)]);
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next(),
        Some("epoch,train_loss,train_acc,test_acc,max_w_dev,frob_w_dev,wall_time_s")
    );
    assert_eq!(metrics.lines().count(), 4);
    for name in ["metrics.csv", "final.iimlp", "ckpt_epoch2.iimlp", "layer_accuracy_epoch2.csv", "weight_deviation.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_inventory_matches(&a);

    let ckpt = a.join("final.iimlp");
    let x = tmp.path().join("x");
    let y = tmp.path().join("y");
    for dir in [&x, &y] {
        ok(&["analyze", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out-dir", s(dir)]);
    }
    let files = [
        "layer_accuracy.csv",
        "discriminability.csv",
        "likelihood_0.csv",
        "likelihood_3.csv",
        "map_s0_l4.pgm",
        "map_s3_l8.pgm",
        "weight_deviation.csv",
    ];
    for name in files {
        assert_eq!(fs::read(x.join(name)).unwrap(), fs::read(y.join(name)).unwrap(), "{name}");
    }
    assert_eq!(
        fs::read_to_string(x.join("discriminability.csv")).unwrap().lines().next(),
        Some("layer,true_class,probe_class,r")
    );
    assert_inventory_matches(&x);
}

#[test]
fn rerun_from_manifest_reproduces_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let first = tmp.path().join("first");
    ok(&["train", "--config", s(&cfg), "--epochs", "2", "--quiet", "--out-dir", s(&first)]);
    let second = tmp.path().join("second");
    ok(&[
        "train", "--config", s(&first.join("manifest.json")), "--quiet", "--out-dir", s(&second),
    ]);
    let (m1, m2) = (manifest(&first), manifest(&second));
    assert_eq!(m1.outputs, m2.outputs);
}

#[test]
fn analyze_untrained_identity_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    // sigma = 1 and every |x| <= 0.1 * sqrt(15) < 1, so the network is the identity on the data.
    let cfg = tmp.path().join("config.json");
    let text = BLOBS
        .replace(r#""classes": 3}"#, r#""classes": 3, "sigma": 1.0}"#)
        .replace(r#""blobs_separation": 6.0}"#, r#""blobs_separation": 6.0, "target_variance": 0.01}"#);
    fs::write(&cfg, text).unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--config", s(&cfg), "--epochs", "1", "--learning-rate", "0", "--quiet", "--out-dir", s(&run)]);
    let out = tmp.path().join("an");
    ok(&[
        "analyze", "--config", s(&cfg), "--checkpoint", s(&run.join("final.iimlp")), "--out-dir", s(&out),
    ]);
    let curve = fs::read_to_string(out.join("layer_accuracy.csv")).unwrap();
    let values: Vec<&str> = curve.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values.len(), 9);
    assert!(values.iter().all(|v| *v == values[0]), "{values:?}");
    let pgm = fs::read(out.join("map_s0_l4.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
    assert!(pgm[pgm.len() - 16..].iter().all(|&p| p == 128));
    let table = fs::read_to_string(out.join("discriminability.csv")).unwrap();
    assert!(table.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let out = iimlp(&[
        "train", "--data-format", "idx", "--data-dir", s(&missing), "--out-dir", s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"network": {"sigmaa": 1.0}}"#).unwrap();
    let out = iimlp(&["propagate", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigmaa"));

    let cfg = write_config(tmp.path());
    let run = tmp.path().join("run");
    ok(&["train", "--config", s(&cfg), "--epochs", "1", "--quiet", "--out-dir", s(&run)]);
    // Checkpoint has N = 16; a 2x2 IDX dataset has N = 4.
    let idx = tmp.path().join("idx");
    write_tiny_idx(&idx);
    let out = iimlp(&[
        "analyze", "--checkpoint", s(&run.join("final.iimlp")), "--data-format", "idx", "--data-dir", s(&idx),
        "--out-dir", s(&tmp.path().join("an")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let out = Command::new(env!("CARGO_BIN_EXE_iimlp"))
        .args(["calibrate"])
        .env("IIMLP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn write_tiny_idx(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let images = |n: u32| {
        let mut b = vec![0, 0, 8, 3];
        for d in [n, 2, 2] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend((0..n * 4).map(|i| (i * 37 % 251) as u8));
        b
    };
    let labels = |n: u32| {
        let mut b = vec![0, 0, 8, 1];
        b.extend_from_slice(&n.to_be_bytes());
        b.extend((0..n).map(|i| (i % 3) as u8));
        b
    };
    fs::write(dir.join("train-images-idx3-ubyte"), images(6)).unwrap();
    fs::write(dir.join("train-labels-idx1-ubyte"), labels(6)).unwrap();
    fs::write(dir.join("t10k-images-idx3-ubyte"), images(3)).unwrap();
    fs::write(dir.join("t10k-labels-idx1-ubyte"), labels(3)).unwrap();
}
