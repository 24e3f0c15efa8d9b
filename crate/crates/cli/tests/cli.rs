use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use softts_core::synthetic::{write_dataset, SyntheticKind};

fn softts(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softts"))
        .args(args)
        .current_dir(dir)
        .env_remove("SOFTTS_ARCHIVE")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn archive(dir: &Path) -> PathBuf {
    let root = dir.join("arch");
    write_dataset(&root, SyntheticKind::Cbf, (12, 12), 1).unwrap();
    write_dataset(&root, SyntheticKind::SyntheticControl, (12, 12), 2).unwrap();
    root
}

/// Two datasets, one narrow model, baseline and ss, one seed: four cells.
fn plan(dir: &Path, archive_root: &str) -> PathBuf {
    let text = format!(
        r#"{{
  "data": {{"archive_root": "{archive_root}", "datasets": ["CBF", "SyntheticControl"]}},
  "encoder": {{"kind": "random_conv", "num_kernels": 16}},
  "models": [{{"preset": "inceptiontime-1", "base_channels": 4}}],
  "methods": ["baseline", "ss"],
  "train": {{"epochs": 10, "batch_size": 8, "seeds": [0]}},
  "report": {{"tsne": [{{"model": "inceptiontime-1", "dataset": "CBF", "perplexity": 3.0}}]}},
  "output_dir": "out"
}}"#
    );
    let path = dir.join("plan.json");
    fs::write(&path, text).unwrap();
    path
}

fn records(dir: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(dir.join("out/results.jsonl"))
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn report_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir.join("out/report"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn all_then_resume_then_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    archive(dir);
    plan(dir, "arch");

    let out = softts(dir, &["all", "--plan", "plan.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let recs = records(dir);
    assert_eq!(recs.len(), 4);
    for r in &recs {
        for field in [
            "dataset", "model", "depth", "method", "seed", "gamma", "beta", "tau", "epsilon",
            "best_accuracy", "eval_points", "wall_time",
        ] {
            assert!(r.get(field).is_some(), "missing {field}");
        }
        assert_eq!(r["eval_points"].as_array().unwrap().len(), 2);
    }
    let ss = recs.iter().find(|r| r["method"] == "ss").unwrap();
    assert_eq!((ss["beta"].as_f64(), ss["tau"].as_f64(), ss["gamma"].as_f64()), (Some(0.5), Some(2.0), Some(0.001)));
    let files = report_bytes(dir);
    let names: Vec<&str> = files.iter().map(|f| f.0.as_str()).collect();
    assert!(names.contains(&"table.csv"));
    assert!(names.contains(&"scatter_inceptiontime-1.svg"));
    assert!(names.contains(&"tsne_inceptiontime-1_CBF.svg"));
    assert!(!names.contains(&"cd_diagram.svg"));
    assert!(stderr(&out).contains("at least 3 datasets"), "{}", stderr(&out));
    assert!(dir.join("out/checkpoints/inceptiontime-1/CBF/ss-s0.safetensors").is_file());

    // a plain rerun refuses to mix with existing records
    let again = softts(dir, &["train", "--plan", "plan.json"]);
    assert!(!again.status.success());
    assert!(stderr(&again).contains("--resume"));

    // resuming after 3 of 4 cells adds exactly the missing one
    let text = fs::read_to_string(dir.join("out/results.jsonl")).unwrap();
    let first3: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    fs::write(dir.join("out/results.jsonl"), &first3).unwrap();
    let out = softts(dir, &["train", "--plan", "plan.json", "--resume"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let after = fs::read_to_string(dir.join("out/results.jsonl")).unwrap();
    assert!(after.starts_with(&first3));
    assert_eq!(after.lines().count(), 4);
    let restored: serde_json::Value = serde_json::from_str(after.lines().last().unwrap()).unwrap();
    let original: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(restored["eval_points"], original["eval_points"]);

    // a resumed `all` trains nothing and reproduces the reports byte for byte
    let before = report_bytes(dir);
    let out = softts(dir, &["all", "--plan", "plan.json", "--resume"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("trained 0 cells, 4 already recorded"), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(dir.join("out/results.jsonl")).unwrap(), after);
    assert_eq!(report_bytes(dir), before);
}

#[test]
fn unknown_method_names_its_field() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    archive(dir);
    let path = plan(dir, "arch");
    let text = fs::read_to_string(&path).unwrap().replace(r#""ss""#, r#""kd""#);
    fs::write(&path, text).unwrap();
    let out = softts(dir, &["all", "--plan", "plan.json"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("methods[1]") && err.contains("kd"), "{err}");
    assert!(!dir.join("out").exists());
}

#[test]
fn unknown_dataset_fails_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    archive(dir);
    let path = plan(dir, "arch");
    let text = fs::read_to_string(&path).unwrap().replace("SyntheticControl", "Nope");
    fs::write(&path, text).unwrap();
    let out = softts(dir, &["all", "--plan", "plan.json"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown dataset `Nope`"), "{}", stderr(&out));
    assert!(!dir.join("out").exists());
}

#[test]
fn archive_override_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let root = archive(dir);
    plan(dir, "missing-archive");
    let out = Command::new(env!("CARGO_BIN_EXE_softts"))
        .args(["encode", "--plan", "plan.json"])
        .current_dir(dir)
        .env("SOFTTS_ARCHIVE", &root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let reps = fs::read_dir(dir.join("out/representations")).unwrap().count();
    assert_eq!(reps, 2);
    let out = softts(dir, &["encode", "--plan", "plan.json"]);
    assert!(!out.status.success());
}

#[test]
fn failed_cells_give_nonzero_exit_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let root = dir.join("arch");
    // series of length 6 are too short for resnet18
    let ds = root.join("Short");
    fs::create_dir_all(&ds).unwrap();
    let rows: String = (0..8)
        .map(|i| format!("{}\t{}\t1\t2\t3\t4\t{}\n", i % 2 + 1, i, i % 3))
        .collect();
    fs::write(ds.join("Short_TRAIN.tsv"), &rows).unwrap();
    fs::write(ds.join("Short_TEST.tsv"), &rows).unwrap();
    let text = r#"{"data":{"archive_root":"arch","datasets":["Short"]},
        "models":[{"preset":"inceptiontime-1","base_channels":4},{"preset":"resnet18","base_channels":4}],
        "methods":["baseline"],"train":{"epochs":5},"output_dir":"out"}"#;
    fs::write(dir.join("plan.json"), text).unwrap();
    let out = softts(dir, &["train", "--plan", "plan.json"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("1 cells failed") && err.contains("Short/resnet18/baseline/seed0"), "{err}");
    assert_eq!(records(dir).len(), 1);
}

#[test]
fn single_dataset_encode_and_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    archive(dir);
    let out = softts(
        dir,
        &["encode", "--dataset", "arch/CBF", "--encoder", "random_conv", "--kernels", "8", "--seed", "3", "--out", "r.txt"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let header = fs::read_to_string(dir.join("r.txt")).unwrap();
    assert!(header.starts_with("12 16\n"));
    let out = softts(dir, &["labels", "--reps", "r.txt", "--dataset", "arch/CBF", "--gamma", "0.01", "--out", "s.txt"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cache = softts_core::softlabel::load_cache(dir.join("s.txt")).unwrap();
    assert_eq!((cache.len(), cache.num_classes(), cache.gamma), (12, 3, 0.01));

    let out = softts(
        dir,
        &["encode", "--dataset", "arch/CBF", "--encoder", "precomputed", "--reps-file", "r.txt", "--out", "copy.txt"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read(dir.join("copy.txt")).unwrap(), fs::read(dir.join("r.txt")).unwrap());
    let out = softts(dir, &["encode", "--dataset", "arch/CBF", "--encoder", "identity", "--no-normalize", "--out", "raw.txt"]);
    assert!(out.status.success());
    assert!(fs::read_to_string(dir.join("raw.txt")).unwrap().starts_with("12 128\n"));
}

#[test]
fn workers_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    archive(dir);
    plan(dir, "arch");
    let out = softts(dir, &["train", "--plan", "plan.json", "--workers", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut parallel: Vec<(String, String, serde_json::Value)> = records(dir)
        .into_iter()
        .map(|r| (r["dataset"].to_string(), r["method"].to_string(), r["eval_points"].clone()))
        .collect();
    fs::remove_dir_all(dir.join("out")).unwrap();
    assert!(softts(dir, &["train", "--plan", "plan.json"]).status.success());
    let mut serial: Vec<_> = records(dir)
        .into_iter()
        .map(|r| (r["dataset"].to_string(), r["method"].to_string(), r["eval_points"].clone()))
        .collect();
    parallel.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    serial.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    assert_eq!(parallel, serial);
}
