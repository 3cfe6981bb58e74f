//! End-to-end runs of the `hlm` binary: file formats, exit codes, and the
//! promise that failed commands leave nothing behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hlm-commands-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn hlm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlm")).args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = hlm(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], dir: &Path) -> i32 {
    hlm(args, dir).status.code().unwrap()
}

fn read_matrix(path: &Path) -> Vec<Vec<i8>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split(',').map(|v| v.trim().parse().unwrap()).collect())
        .collect()
}

fn read_column<T: std::str::FromStr>(path: &Path) -> Vec<T>
where
    T::Err: std::fmt::Debug,
{
    fs::read_to_string(path).unwrap().lines().map(|l| l.trim().parse().unwrap()).collect()
}

#[test]
fn majority_vote_round_trip() {
    let dir = scratch("mv");
    ok(&["gen", "--kind", "condind", "--count", "2", "--seed", "3", "--out", "data"], &dir);
    let x = read_matrix(&dir.join("data/dataset_1/X.csv"));
    let y: Vec<i8> = read_column(&dir.join("data/dataset_1/y.csv"));
    assert_eq!(x.len(), y.len());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("data/dataset_1/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["n"], x.len());

    ok(&["mv", "--matrix", "data/dataset_1/X.csv", "--out", "mv.csv"], &dir);
    let probs: Vec<f64> = read_column(&dir.join("mv.csv"));
    for (row, p) in x.iter().zip(&probs) {
        let pos = row.iter().filter(|&&v| v == 1).count() as f64;
        let neg = row.iter().filter(|&&v| v == -1).count() as f64;
        let expected = if pos + neg == 0.0 { 0.5 } else { pos / (pos + neg) };
        assert!((p - expected).abs() < 1e-15);
    }

    let printed = ok(&["eval", "--pred", "mv.csv", "--truth", "data/dataset_1/y.csv", "--metric", "acc"], &dir);
    let result: serde_json::Value = serde_json::from_str(&printed).unwrap();
    let hits = probs.iter().zip(&y).filter(|(p, &t)| (if **p >= 0.5 { 1 } else { -1 }) == t).count();
    assert_eq!(result["metric"], "acc");
    assert_eq!(result["n"], y.len());
    assert!((result["value"].as_f64().unwrap() - hits as f64 / y.len() as f64).abs() < 1e-15);
}

#[test]
fn exact_oracle_on_a_hand_checked_matrix() {
    let dir = scratch("oracle");
    // two points, three LFs that all agree: only (+1, -1) is valid
    fs::write(dir.join("X.csv"), "1,1,1\n-1,-1,-1\n").unwrap();
    ok(&["oracle", "--matrix", "X.csv", "--out", "h.json"], &dir);
    let h: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("h.json")).unwrap()).unwrap();
    assert_eq!(h["estimate"], serde_json::json!([1.0, -1.0]));
    assert_eq!(h["valid_count"], 1);

    ok(&["oracle", "--matrix", "X.csv", "--mc", "50", "--seed", "1", "--out", "mc.json"], &dir);
    let mc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("mc.json")).unwrap()).unwrap();
    assert_eq!(mc["estimate"], serde_json::json!([1.0, -1.0]));
}

#[test]
fn train_infer_finetune() {
    let dir = scratch("train");
    fs::write(
        dir.join("tiny.json"),
        r#"{"K": 1, "d": 4, "batch_size": 4, "patience": 5, "max_iterations": 10, "num_runs": 2,
            "validation_every": 5, "log_every": 5,
            "gen": {"n_range": [6, 10], "m_range": [3, 5]},
            "validation": {"num_datasets": 3, "datasets": {"n_range": [20, 30], "m_range": [3, 5]}}}"#,
    )
    .unwrap();
    let progress = ok(&["train", "--config", "tiny.json", "--out", "model"], &dir);
    assert!(progress.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    for f in ["config.json", "selection.json", "selected.model.json", "run_0/report.json", "run_1/final.model.json"] {
        assert!(dir.join("model").join(f).is_file(), "missing {f}");
    }

    ok(&["gen", "--kind", "condind", "--count", "1", "--seed", "9", "--out", "data"], &dir);
    let x = "data/dataset_0/X.csv";
    ok(&["infer", "--model", "model/selected.model.json", "--matrix", x, "--out", "p.csv"], &dir);
    let probs: Vec<f64> = read_column(&dir.join("p.csv"));
    assert_eq!(probs.len(), read_matrix(&dir.join(x)).len());
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));

    let y: Vec<i8> = read_column(&dir.join("data/dataset_0/y.csv"));
    let subset: String = y.iter().enumerate().step_by(3).map(|(i, v)| format!("{i},{v}\n")).collect();
    fs::write(dir.join("labels.csv"), subset).unwrap();
    ok(
        &["finetune", "--model", "model/selected.model.json", "--matrix", x, "--labels", "labels.csv", "--out", "ft.json"],
        &dir,
    );
    assert_ne!(fs::read(dir.join("ft.json")).unwrap(), fs::read(dir.join("model/selected.model.json")).unwrap());

    // multi-class inference: rows of C probabilities
    fs::write(dir.join("M.csv"), "1,2,3\n0,0,2\n3,3,1\n").unwrap();
    ok(&["infer", "--model", "model/selected.model.json", "--matrix", "M.csv", "--multiclass", "3", "--out", "s.csv"], &dir);
    for line in fs::read_to_string(dir.join("s.csv")).unwrap().lines() {
        let row: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row.len(), 3);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn exit_codes_and_no_partial_output() {
    let dir = scratch("codes");
    fs::write(dir.join("bad.csv"), "1,0\n1,x\n").unwrap();
    fs::write(dir.join("ragged.csv"), "1,0\n1\n").unwrap();
    fs::write(dir.join("silent.csv"), "0,0\n0,0\n").unwrap();
    fs::write(dir.join("nolabel.csv"), "1\n1\n").unwrap();
    fs::write(dir.join("unknown.json"), r#"{"no_such_key": 1}"#).unwrap();
    fs::write(dir.join("model.json"), r#"{"version": 99}"#).unwrap();

    assert_eq!(code(&["mv"], &dir), 2);
    assert_eq!(code(&["mv", "--matrix", "bad.csv", "--out", "o1"], &dir), 3);
    assert_eq!(code(&["mv", "--matrix", "missing.csv", "--out", "o2"], &dir), 4);
    assert_eq!(code(&["mv", "--matrix", "ragged.csv", "--out", "o3"], &dir), 3);
    assert_eq!(code(&["train", "--config", "unknown.json", "--out", "o4"], &dir), 5);
    assert_eq!(code(&["infer", "--model", "model.json", "--matrix", "silent.csv", "--out", "o5"], &dir), 6);
    assert_eq!(code(&["oracle", "--matrix", "silent.csv", "--out", "o6"], &dir), 7);
    // every vote is +1, so no LF can beat random on class -1
    assert_eq!(code(&["oracle", "--matrix", "nolabel.csv", "--out", "o7"], &dir), 7);
    for o in ["o1", "o2", "o3", "o4", "o5", "o6", "o7"] {
        assert!(!dir.join(o).exists(), "{o} was written");
    }
}
