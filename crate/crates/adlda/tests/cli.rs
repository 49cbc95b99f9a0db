use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adlda::checkpoint::Checkpoint;
use adlda::commands::{CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE};
use adlda_core::gradcheck::Target;
use serde_json::{json, Value};

fn adlda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adlda")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synthetic_config(epochs: usize) -> Value {
    json!({
        "version": 1,
        "seed": 4,
        "dataset": {"kind": "synthetic", "spec": {"train_size": 96, "test_size": 64}},
        "model": {"extractor": {"kind": "mlp", "hidden": [8], "tokens": 2},
                  "domain_head": {"attention": {"heads": 1, "bias": true}, "hidden": [8], "bias": true}},
        "train": {"eta": 0.05, "epochs": epochs, "batch_size": 16, "lambda_max": 0.1}
    })
}

fn objects_config(lambda: f64) -> Value {
    json!({
        "version": 1,
        "seed": 1,
        "dataset": {"kind": "objects", "spec": {"train_size": 64, "test_size": 8, "side": 8, "object_size": 4}},
        "model": {"extractor": {"kind": "conv", "filters": [4, 8]},
                  "domain_head": {"attention": {"heads": 2, "bias": true}, "hidden": [8], "bias": true}},
        "train": {"eta": 0.05, "epochs": 1, "batch_size": 16, "lambda_max": lambda}
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The single run directory under `out`.
fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    dirs.sort();
    dirs
}

#[test]
fn train_smoke_writes_three_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &synthetic_config(1));
    let out = tmp.path().join("out");
    let o = adlda(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dirs = run_dirs(&out);
    assert_eq!(dirs.len(), 1);
    for f in [METRICS_FILE, CHECKPOINT_FILE, MANIFEST_FILE] {
        assert!(dirs[0].join(f).is_file(), "{f}");
    }
    let manifest: Value = serde_json::from_slice(&fs::read(dirs[0].join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["runid"].as_str().unwrap(), dirs[0].file_name().unwrap().to_str().unwrap());
    assert!(manifest["finished_unix"].as_u64().unwrap() >= manifest["started_unix"].as_u64().unwrap());
}

#[test]
fn invalid_configs_exit_two_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = synthetic_config(1);
    v["train"]["lambda_max"] = json!(-0.5);
    let o = adlda(&["train", "--config", s(&write_config(tmp.path(), "neg.json", &v))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.lambda_max"), "{}", stderr(&o));

    let mut v = synthetic_config(1);
    v["train"]["learning_rate"] = json!(0.1);
    let o = adlda(&["train", "--config", s(&write_config(tmp.path(), "typo.json", &v))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));

    let o = adlda(&["train", "--config", s(&tmp.path().join("missing.json"))]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&adlda(&["train"])), 2);
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = synthetic_config(3);
    v["train"]["eta"] = json!(1e30);
    let o = adlda(&["train", "--config", s(&write_config(tmp.path(), "c.json", &v)), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn seeds_flag_summarizes_exactly_the_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &synthetic_config(1));
    let out = tmp.path().join("out");
    let o = adlda(&["train", "--config", s(&cfg), "--seeds", "1,2,3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(run_dirs(&out).len(), 3);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("mean±std(n=3)"));
    let accs: Vec<f64> = lines[1..4].iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    let mean: f64 = lines[4].split(',').nth(2).unwrap().split('±').next().unwrap().parse().unwrap();
    assert!((mean - accs.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    let summary = fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).find(|p| p.is_file()).unwrap();
    assert_eq!(fs::read_to_string(summary).unwrap(), text);
}

#[test]
fn replicate_parallelism_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &synthetic_config(2));
    let serial = Command::new(env!("CARGO_BIN_EXE_adlda"))
        .args(["train", "--config", s(&cfg), "--seeds", "5,6,7", "--out", s(&tmp.path().join("a"))])
        .env("ADLDA_THREADS", "1")
        .output()
        .unwrap();
    let parallel = Command::new(env!("CARGO_BIN_EXE_adlda"))
        .args(["train", "--config", s(&cfg), "--seeds", "5,6,7", "--out", s(&tmp.path().join("b"))])
        .env("ADLDA_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&serial), 0);
    assert_eq!(stdout(&serial), stdout(&parallel));
}

#[test]
fn metrics_are_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &synthetic_config(3));
    let mut files = Vec::new();
    for out in ["x", "y"] {
        let out = tmp.path().join(out);
        assert_eq!(code(&adlda(&["train", "--config", s(&cfg), "--out", s(&out)])), 0);
        let dir = &run_dirs(&out)[0];
        files.push((fs::read(dir.join(METRICS_FILE)).unwrap(), fs::read(dir.join(CHECKPOINT_FILE)).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn eval_matches_the_final_metrics_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &synthetic_config(2));
    let out = tmp.path().join("out");
    assert_eq!(code(&adlda(&["train", "--config", s(&cfg), "--out", s(&out)])), 0);
    let dir = &run_dirs(&out)[0];
    let manifest: Value = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    let expected = format!(
        "accuracy={} mean_loss={}\n",
        manifest["metrics"]["test_acc"].as_f64().unwrap(),
        manifest["metrics"]["test_loss"].as_f64().unwrap()
    );
    let ck = dir.join(CHECKPOINT_FILE);
    let o = adlda(&["eval", "--config", s(&cfg), "--checkpoint", s(&ck)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), expected);
    let csv = fs::read_to_string(dir.join(METRICS_FILE)).unwrap();
    let acc = csv.lines().last().unwrap().split(',').nth(3).unwrap();
    assert!(stdout(&o).starts_with(&format!("accuracy={acc} ")));

    let full = Checkpoint::decode(&fs::read(&ck).unwrap()).unwrap();
    let stripped = tmp.path().join("stripped.bin");
    fs::write(&stripped, full.strip_domain_head().unwrap().encode()).unwrap();
    assert!(fs::metadata(&stripped).unwrap().len() < fs::metadata(&ck).unwrap().len());
    assert_eq!(stdout(&adlda(&["eval", "--config", s(&cfg), "--checkpoint", s(&stripped)])), expected);

    let bytes = fs::read(&ck).unwrap();
    let truncated = tmp.path().join("truncated.bin");
    fs::write(&truncated, &bytes[..bytes.len() - 7]).unwrap();
    assert_eq!(code(&adlda(&["eval", "--config", s(&cfg), "--checkpoint", s(&truncated)])), 2);

    let mut other = synthetic_config(1);
    other["dataset"]["spec"]["side"] = json!(5);
    let mismatched = write_config(tmp.path(), "other.json", &other);
    assert_eq!(code(&adlda(&["eval", "--config", s(&mismatched), "--checkpoint", s(&ck)])), 2);
}

fn trained_objects(tmp: &Path, lambda: f64) -> (PathBuf, PathBuf) {
    let cfg = write_config(tmp, &format!("obj_{lambda}.json"), &objects_config(lambda));
    let out = tmp.join(format!("train_{lambda}"));
    let o = adlda(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (cfg, run_dirs(&out)[0].join(CHECKPOINT_FILE))
}

#[test]
fn cam_emits_one_overlay_per_image_and_darate() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, ck0) = trained_objects(tmp.path(), 0.0);
    let (_, ck5) = trained_objects(tmp.path(), 0.5);
    let run = |out: &str, images: &str| {
        adlda(&[
            "cam", "--config", s(&cfg), "--checkpoint", s(&ck0), "--checkpoint", s(&ck5),
            "--darates", "0,0.5", "--images", images, "--out", s(&tmp.path().join(out)),
        ])
    };
    let o = run("cam1", "0,3");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = &run_dirs(&tmp.path().join("cam1"))[0];
    let mut overlays: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("cam_") && n.ends_with(".ppm"))
        .collect();
    overlays.sort();
    assert_eq!(overlays.len(), 4);
    for f in &overlays {
        let bytes = fs::read(dir.join(f)).unwrap();
        assert!(bytes.starts_with(b"P6\n8 8\n255\n"));
        assert_eq!(bytes.len(), 11 + 8 * 8 * 3);
    }
    let grid = fs::read(dir.join("grid_0.ppm")).unwrap();
    assert!(grid.starts_with(b"P6\n16 8\n255\n"));
    // Every row carries a box-mass value in [0, 1].
    for line in stdout(&o).lines().skip(1) {
        let mass: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&mass));
    }

    assert_eq!(code(&run("cam2", "0,3")), 0);
    let dir2 = &run_dirs(&tmp.path().join("cam2"))[0];
    for f in &overlays {
        assert_eq!(fs::read(dir.join(f)).unwrap(), fs::read(dir2.join(f)).unwrap());
    }

    assert_eq!(code(&run("cam3", "0,99")), 2);
    let o = adlda(&[
        "cam", "--config", s(&cfg), "--checkpoint", s(&ck0), "--darates", "0,0.5", "--images", "0",
        "--out", s(&tmp.path().join("cam4")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("0.5"));
}

#[test]
fn gradcheck_reports_every_op_and_catches_a_fault() {
    let o = adlda(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    let reported: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for t in Target::all() {
        assert!(reported.contains(&t.name()), "{} missing", t.name());
    }
    assert_eq!(reported.iter().filter(|n| n.starts_with("train_step_oracle")).count(), 3);

    let o = adlda(&["gradcheck", "--inject-fault", "conv2d"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("conv2d"));
    assert!(stdout(&o).lines().any(|l| l.starts_with("conv2d,") && l.ends_with("FAIL")));
    assert_eq!(code(&adlda(&["gradcheck", "--inject-fault", "no_such_op"])), 2);
}

#[test]
fn synth_demo_rows_and_identity_control() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = synthetic_config(2);
    v["demo"] = json!({"lambda": 0.1, "seeds": [0, 1, 2, 3, 4]});
    let cfg = write_config(tmp.path(), "d.json", &v);
    let o = adlda(&["synth-demo", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("condition,seed,clean_test_loss,clean_test_acc"));
    assert_eq!(text.lines().count(), 1 + 3 * 5);
    let dir = &run_dirs(&tmp.path().join("o"))[0];
    assert_eq!(fs::read_to_string(dir.join("synth_demo.csv")).unwrap(), text);

    // All mass on the identity family: (a) and (b) see the same data.
    let p = adlda::config::AugmentationSpec::default();
    let mut probs = vec![0.0; p.families.len()];
    probs[0] = 1.0;
    v["augmentation"] = json!({"families": p.families, "probabilities": probs});
    let cfg = write_config(tmp.path(), "id.json", &v);
    let o = adlda(&["synth-demo", "--config", s(&cfg), "--out", s(&tmp.path().join("id"))]);
    assert_eq!(code(&o), 0);
    let losses = |c: &str| -> Vec<f64> {
        stdout(&o).lines().skip(1).filter(|l| l.starts_with(&format!("{c},"))).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect()
    };
    let d = adlda::stats::PairedDiff::of(&losses("b"), &losses("a"));
    assert!(d.mean.abs() <= 2.0 * d.std_err, "{d:?}");

    let o = adlda(&["synth-demo", "--config", s(&write_config(tmp.path(), "obj.json", &objects_config(0.1)))]);
    assert_eq!(code(&o), 2);
}
