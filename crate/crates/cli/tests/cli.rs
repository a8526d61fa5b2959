use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
[spc]
ensemble_size = 3
latent_dim = 5
encoder_hidden = [32, 16]
pretrain_epochs = 5
loop_epochs = 2
learning_rate = 0.02
max_iterations = 3

[blobs]
n_clusters = 3
points_per_cluster = 20
ambient_dim = 6
"#;

const FAST_THEORY: &str = "[theory]\nn_samples = 10000\nlemma3_datasets = 5\nentropy_max_clusters = 4\n";

fn spc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spc")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn labels_csv(labels: &[usize]) -> String {
    let mut s = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

fn eval_json(dir: &Path, pred: &[usize], truth: &[usize]) -> Value {
    let p = write(dir, "pred.csv", &labels_csv(pred));
    let t = write(dir, "truth.csv", &labels_csv(truth));
    let out = spc(&["eval", path_str(&p), path_str(&t)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn run_writes_complete_directory_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let mut metrics = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = spc(&["run", "--config", path_str(&cfg), "--out", path_str(&out_dir), "--workers", "2"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let manifest: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
        let artifacts = manifest["artifacts"].as_array().unwrap();
        for required in ["config.toml", "history.csv", "labels.csv", "metrics.json", "consensus.csv"] {
            assert!(artifacts.iter().any(|a| a == required), "{required} missing from manifest");
        }
        for a in artifacts {
            assert!(out_dir.join(a.as_str().unwrap()).exists());
        }
        assert_eq!(manifest["dataset"]["n_points"], 60);
        assert!(artifacts.iter().any(|a| a.as_str().unwrap().starts_with("checkpoints/")));
        let history = fs::read_to_string(out_dir.join("history.csv")).unwrap();
        assert!(history.starts_with("iteration,n_agreed,agreed_acc,overall_acc,loss"));
        metrics.push(fs::read(out_dir.join("metrics.json")).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
    let m: Value = serde_json::from_slice(&metrics[0]).unwrap();
    assert!(m["accuracy"].as_f64().unwrap() > 0.9);
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let read = |workers: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let out = spc(&["run", "--config", path_str(&cfg), "--out", path_str(&out_dir), "--workers", workers]);
        assert_eq!(out.status.code(), Some(0));
        (
            fs::read(out_dir.join("metrics.json")).unwrap(),
            fs::read(out_dir.join("history.csv")).unwrap(),
        )
    };
    assert_eq!(read("1", "one"), read("4", "four"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out_dir = dir.path().join("s");
    let out = spc(&["run", "--config", path_str(&cfg), "--out", path_str(&out_dir), "--seed", "17"]);
    assert_eq!(out.status.code(), Some(0));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["master_seed"], 17);
}

#[test]
fn config_errors_exit_1_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    for (i, text) in ["[spc]\nensemble = 2\n", "[spc]\nensemble_size = 0\n", "not toml ["].iter().enumerate() {
        let cfg = write(dir.path(), &format!("bad{i}.toml"), text);
        let out_dir = dir.path().join(format!("out{i}"));
        let out = spc(&["run", "--config", path_str(&cfg), "--out", path_str(&out_dir)]);
        assert_eq!(out.status.code(), Some(1));
        assert!(!out_dir.exists());
    }
    // Only the config files remain: no staging directories.
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 3);

    assert_eq!(spc(&["run"]).status.code(), Some(1));
    assert_eq!(spc(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn existing_output_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out_dir = dir.path().join("taken");
    fs::create_dir(&out_dir).unwrap();
    fs::write(out_dir.join("keep"), "x").unwrap();
    let out = spc(&["run", "--config", path_str(&cfg), "--out", path_str(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(fs::read_to_string(out_dir.join("keep")).unwrap(), "x");
}

fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    for v in [count, rows, cols] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 1];
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

#[test]
fn idx_dataset_runs_and_bad_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // 40 tiny 2x2 images in two well-separated groups.
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40u8 {
        let base = if i % 2 == 0 { 10 } else { 220 };
        pixels.extend([base + i % 7, base + i % 5, base + i % 3, base]);
        labels.push(i % 2);
    }
    let images = dir.path().join("img.idx");
    let label_file = dir.path().join("lab.idx");
    fs::write(&images, idx_images(40, 2, 2, &pixels)).unwrap();
    fs::write(&label_file, idx_labels(&labels)).unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[spc]\nensemble_size = 2\nlatent_dim = 2\nencoder_hidden = [8]\npretrain_epochs = 3\nmax_iterations = 2\nlearning_rate = 0.02\n",
    );
    let out_dir = dir.path().join("idx_run");
    let out = spc(&[
        "run", "--config", path_str(&cfg), "--out", path_str(&out_dir), "--dataset", "idx",
        "--images", path_str(&images), "--labels", path_str(&label_file),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dataset"]["dim"], 4);
    assert_eq!(manifest["dataset"]["normalized_range"][0], -1.0);

    let truncated = dir.path().join("short.idx");
    fs::write(&truncated, &idx_images(40, 2, 2, &pixels)[..30]).unwrap();
    let out = spc(&[
        "run", "--config", path_str(&cfg), "--out", path_str(&dir.path().join("bad")), "--dataset", "idx",
        "--images", path_str(&truncated), "--labels", path_str(&label_file),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("bad").exists());

    let out = spc(&["run", "--out", path_str(&dir.path().join("none")), "--dataset", "idx"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_identical_and_permuted() {
    let dir = tempfile::tempdir().unwrap();
    let truth = [0, 0, 1, 1, 2, 2, 2];
    let m = eval_json(dir.path(), &truth, &truth);
    assert_eq!(m["accuracy"], 1.0);
    assert_eq!(m["nmi"], 1.0);
    let permuted: Vec<usize> = truth.iter().map(|l| (l + 1) % 3).collect();
    let m = eval_json(dir.path(), &permuted, &truth);
    assert_eq!(m["accuracy"], 1.0);
    assert_eq!(m["rand_index"], 1.0);
}

#[test]
fn eval_matches_hand_computed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let pred = [0, 0, 0, 1, 1, 1, 2, 2, 2, 0, 1, 2];
    let truth = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
    let m = eval_json(dir.path(), &pred, &truth);
    // Contingency rows (pred) x cols (truth): [3,0,1], [1,2,1], [0,2,2].
    // Diagonal matching covers 3 + 2 + 2 = 7 points.
    // Same-same pairs: C(3,2) + C(2,2) * 3 = 6; same-pred 18; same-truth 18;
    // agreeing pairs 66 + 2 * 6 - 36 = 42.
    // All marginals are 4 of 12, so both entropies are ln 3.
    let mi = 0.25 * (9.0f64 / 4.0).ln() + 0.25 * 0.75f64.ln() + 0.5 * 1.5f64.ln();
    let close = |k: &str, v: f64| assert!((m[k].as_f64().unwrap() - v).abs() < 1e-9, "{k}: {} vs {v}", m[k]);
    close("accuracy", 7.0 / 12.0);
    close("rand_index", 42.0 / 66.0);
    close("nmi", mi / 3f64.ln());
    assert_eq!(m["cluster_size_1"], 4);
}

#[test]
fn eval_bad_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", &labels_csv(&[0, 1, 0]));
    let b = write(dir.path(), "b.csv", &labels_csv(&[0, 1]));
    let junk = write(dir.path(), "j.csv", "index,label\n0,zero\n");
    assert_eq!(spc(&["eval", path_str(&a), path_str(&b)]).status.code(), Some(2));
    assert_eq!(spc(&["eval", path_str(&a), path_str(&junk)]).status.code(), Some(2));
    assert_eq!(spc(&["eval", path_str(&a), "/nonexistent/x.csv"]).status.code(), Some(2));
}

#[test]
fn verify_theory_defaults_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("theory");
    let out = spc(&["verify-theory", "--out", path_str(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("theory_report.json")).unwrap()).unwrap();
    let claims = report["claims"].as_array().unwrap();
    assert!(claims.iter().all(|c| c["status"] == "pass"));
    assert_eq!(report["lemma1"][0]["gap"]["n"], 100_000);
    let csv = fs::read_to_string(out_dir.join("entropy_curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 19 * 100);
}

#[test]
fn verify_theory_zero_step_is_not_applicable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", &format!("{FAST_THEORY}eta = 0.0\n"));
    let out_dir = dir.path().join("theory");
    let out = spc(&["verify-theory", "--config", path_str(&cfg), "--out", path_str(&out_dir)]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("theory_report.json")).unwrap()).unwrap();
    let claims = report["claims"].as_array().unwrap();
    assert!(claims.iter().any(|c| c["status"] == "not_applicable"));
    assert!(claims.iter().all(|c| c["status"] != "fail"));
}

#[test]
fn verify_theory_degenerate_sampler_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "t.toml",
        &format!("{FAST_THEORY}[[theory.samplers]]\nkind = \"two_point\"\nv = [0.0, 0.0, 0.0, 0.0]\n"),
    );
    let out = spc(&["verify-theory", "--config", path_str(&cfg), "--out", path_str(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("t").exists());
}

#[test]
fn verify_theory_failing_claim_exits_4_with_report() {
    // A sampler that is mean-zero but skewed: the gap falls below the bound.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "t.toml",
        &format!(
            "{FAST_THEORY}w = [-2.0]\neta = 0.05\nw_prime = 1.0\n\
             [[theory.samplers]]\nkind = \"empirical\"\npoints = {{ v = 1, dim = [4, 1], data = [3.0, -1.0, -1.0, -1.0] }}\n"
        ),
    );
    let out_dir = dir.path().join("t");
    let out = spc(&["verify-theory", "--config", path_str(&cfg), "--out", path_str(&out_dir)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("theory_report.json")).unwrap()).unwrap();
    assert!(report["claims"].as_array().unwrap().iter().any(|c| c["status"] == "fail"));
}
