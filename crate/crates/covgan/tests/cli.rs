use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use covgan::config::format_scene_config;
use covgan::format::read_dataset;
use covgan_core::scene::SceneConfig;
use tempfile::TempDir;

fn covgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covgan")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    scene: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let scene = dir.path().join("street.cfg");
        std::fs::write(&scene, format_scene_config(&SceneConfig::default())).unwrap();
        Self { dir, scene }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn build(&self, name: &str, m: usize, extra: &[&str]) -> PathBuf {
        let out = self.path(name);
        let m = m.to_string();
        let mut args = vec!["build-dataset", "--scene", s(&self.scene), "--grid", "4x3", "--m", &m, "--seed", "42", "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&covgan(&args));
        out
    }

    fn train(&self, data: &Path, name: &str) -> PathBuf {
        let out = self.path(name);
        ok(&covgan(&[
            "train", "--data", s(data), "--out", s(&out), "--epochs", "2", "--batch", "4", "--z-dim", "4",
            "--g-base", "4", "--d-base", "4", "--cond-dim", "4", "--holdout", "0.25",
        ]));
        out
    }
}

#[test]
fn build_writes_dataset_and_manifest() {
    let f = Fixture::new();
    let data = f.build("a.ccv", 8, &[]);
    let ds = read_dataset(&data, None).unwrap();
    assert_eq!(ds.records.len(), 12);
    assert_eq!((ds.header.m, ds.header.n_bs, ds.header.k_sub), (8, 4, 64));
    assert_eq!(ds.header.target_bs, 1);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.path("a.ccv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "build-dataset");
    assert_eq!(manifest["seeds"][0], 42);
    assert_eq!(manifest["digests"].as_array().unwrap().len(), 2);
}

#[test]
fn build_is_identical_across_worker_counts() {
    let f = Fixture::new();
    let a = f.build("w1.ccv", 8, &["--workers", "1"]);
    let b = f.build("w3.ccv", 8, &["--workers", "3"]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn missing_scene_is_a_config_error() {
    let f = Fixture::new();
    let out = covgan(&["build-dataset", "--scene", s(&f.path("nope.cfg")), "--grid", "2x2", "--out", s(&f.path("x.ccv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene config not found"));
    assert!(!f.path("x.ccv").exists());
}

#[test]
fn bad_arguments_are_config_errors() {
    let f = Fixture::new();
    for args in [
        vec!["frobnicate"],
        vec!["build-dataset", "--scene", s(&f.scene), "--grid", "4by3", "--out", "x"],
        vec!["build-dataset", "--scene", s(&f.scene), "--grid", "2x2", "--target-bs", "9", "--out", s(&f.path("t.ccv"))],
        vec!["build-dataset", "--scene", s(&f.scene), "--grid", "2x2", "--workers", "0", "--out", s(&f.path("t.ccv"))],
    ] {
        assert_eq!(covgan(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn help_exits_cleanly() {
    let out = covgan(&["--help"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("build-dataset"));
}

#[test]
fn train_eval_export_round_trip() {
    let f = Fixture::new();
    let data = f.build("d.ccv", 8, &[]);
    let ck = f.train(&data, "m.ckp");
    assert!(ck.exists());
    let log: serde_json::Value = serde_json::from_slice(&std::fs::read(f.path("m.ckp.log.json")).unwrap()).unwrap();
    let entries = log["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert!(entries.iter().all(|e| e["val_nmse"].as_f64().is_some()));
    assert!(f.path("m.ckp.manifest.json").exists());

    let report = f.path("r.json");
    let out = covgan(&[
        "eval", "--model", s(&ck), "--data", s(&data), "--out", s(&report), "--holdout", "0.25", "--subset", "test",
        "--z-policy", "avg:3:7", "--knn", "2",
    ]);
    ok(&out);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["model"]["per_sample"].as_array().unwrap().len(), 3);
    assert!(r["baseline_mean"]["mean"].as_f64().unwrap() >= 0.0);
    assert_eq!(r["knn_k"], 2);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("baseline_mean"), "{stdout}");
    assert!(f.path("r.json.manifest.json").exists());

    let imgs = f.path("imgs");
    ok(&covgan(&["export-images", "--model", s(&ck), "--data", s(&data), "--out", s(&imgs), "--count", "3"]));
    let mut names: Vec<String> =
        std::fs::read_dir(&imgs).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 6);
    assert!(f.path("imgs.manifest.json").exists());
    assert!(names.contains(&"sample000_truth_real.pgm".to_string()));
    assert!(names.contains(&"sample002_pred_real.pgm".to_string()));
    let pgm = std::fs::read(imgs.join("sample000_pred_real.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
    assert_eq!(pgm.len(), b"P5\n8 8\n255\n".len() + 64);
}

#[test]
fn incompatible_checkpoint_is_rejected() {
    let f = Fixture::new();
    let d8 = f.build("d8.ccv", 8, &[]);
    let d16 = f.build("d16.ccv", 16, &[]);
    let ck = f.train(&d8, "m.ckp");
    let out = covgan(&["eval", "--model", s(&ck), "--data", s(&d16), "--out", s(&f.path("r.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!f.path("r.json").exists());
    let out = covgan(&["export-images", "--model", s(&ck), "--data", s(&d16), "--out", s(&f.path("i")), "--count", "1"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn export_count_is_bounded() {
    let f = Fixture::new();
    let data = f.build("d.ccv", 8, &[]);
    let ck = f.train(&data, "m.ckp");
    let out = covgan(&["export-images", "--model", s(&ck), "--data", s(&data), "--out", s(&f.path("i")), "--count", "13"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn damaged_inputs_are_config_errors() {
    let f = Fixture::new();
    let data = f.build("d.ccv", 8, &[]);
    let ck = f.train(&data, "m.ckp");
    let bytes = std::fs::read(&data).unwrap();
    let cut = f.path("cut.ccv");
    std::fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
    let out = covgan(&["eval", "--model", s(&ck), "--data", s(&cut), "--out", s(&f.path("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));
    let out = covgan(&["eval", "--model", s(&data), "--data", s(&data), "--out", s(&f.path("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn two_by_two_grid_gives_four_records() {
    let f = Fixture::new();
    let out = f.path("g.ccv");
    ok(&covgan(&["build-dataset", "--scene", s(&f.scene), "--grid", "2x2", "--m", "8", "--out", s(&out)]));
    assert_eq!(read_dataset(&out, None).unwrap().records.len(), 4);
}

#[test]
fn batches_per_epoch_round_up() {
    let f = Fixture::new();
    let out = f.path("g.ccv");
    ok(&covgan(&["build-dataset", "--scene", s(&f.scene), "--grid", "2x2", "--m", "8", "--out", s(&out)]));
    let ck = f.path("m.ckp");
    ok(&covgan(&[
        "train", "--data", s(&out), "--out", s(&ck), "--epochs", "1", "--batch", "2", "--z-dim", "3", "--g-base", "4",
        "--d-base", "4", "--cond-dim", "4",
    ]));
    let log: serde_json::Value = serde_json::from_slice(&std::fs::read(f.path("m.ckp.log.json")).unwrap()).unwrap();
    let entries = log["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["batches"], 2);
}

#[test]
fn zero_latent_width_is_rejected() {
    let f = Fixture::new();
    let data = f.build("d.ccv", 8, &[]);
    let out = covgan(&["train", "--data", s(&data), "--out", s(&f.path("m.ckp")), "--z-dim", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!f.path("m.ckp").exists());
}

#[test]
fn size_sweep_reports_each_size() {
    let f = Fixture::new();
    let data = f.build("d.ccv", 8, &[]);
    let ck = f.train(&data, "m.ckp");
    let report = f.path("r.json");
    ok(&covgan(&[
        "eval", "--model", s(&ck), "--data", s(&data), "--out", s(&report), "--holdout", "0.25", "--subset", "test",
        "--sizes", "3,6,9", "--seeds", "1,2", "--epochs", "1",
    ]));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let sizes = r["sizes"].as_array().unwrap();
    assert_eq!(sizes.len(), 3);
    assert_eq!(sizes[2]["size"], 9);
    assert_eq!(sizes[0]["per_seed"].as_array().unwrap().len(), 2);
    assert!(r["curve_monotone"].is_boolean());
}

#[test]
fn export_planes_and_empty_export() {
    let f = Fixture::new();
    let data = f.build("d.ccv", 8, &[]);
    let ck = f.train(&data, "m.ckp");
    let imgs = f.path("imag");
    ok(&covgan(&["export-images", "--model", s(&ck), "--data", s(&data), "--out", s(&imgs), "--count", "5", "--plane", "imag"]));
    let names: Vec<String> =
        std::fs::read_dir(&imgs).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names.len(), 10);
    assert!(names.iter().all(|n| n.ends_with("_imag.pgm")));
    let none = f.path("none");
    ok(&covgan(&["export-images", "--model", s(&ck), "--data", s(&data), "--out", s(&none), "--count", "0"]));
    assert!(!none.exists() || std::fs::read_dir(&none).unwrap().next().is_none());
}
