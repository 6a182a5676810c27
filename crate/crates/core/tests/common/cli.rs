//! Running the `shapefit` binary from integration tests.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

pub fn run_cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapefit"))
        .current_dir(dir)
        .env("SHAPEFIT_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run_cli(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Runs every command twice in fresh directories and compares all outputs.
pub fn commands_are_deterministic() -> Result<(), String> {
    let run = || -> Vec<(String, Vec<u8>)> {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let mut outputs = Vec::new();
        let mut keep = |name: &str, out: Output| {
            outputs.push((format!("{name}:stdout"), out.stdout));
            outputs.push((format!("{name}:stderr"), out.stderr));
        };
        keep("simulate", ok(d, &["simulate", "--scenario", "2", "--n", "50", "--p", "6", "--seed", "9", "--out", "s"]));
        keep("fit", ok(d, &["fit", "--data", "s_train.csv", "--validation", "s_validation.csv", "--grid", "6x2", "--out", "m.json"]));
        keep("predict", ok(d, &["predict", "--model", "m.json", "--data", "s_test.csv", "--out", "p.csv"]));
        keep("export", ok(d, &["export-components", "--model", "m.json", "--out", "x.csv"]));
        keep("cv", ok(d, &["cv", "--data", "s_train.csv", "--folds", "4", "--grid", "5x2", "--seed", "3", "--out", "cv.json"]));
        keep(
            "protocol",
            ok(d, &["cv", "--data", "s_train.csv", "--protocol", "--p-total", "8", "--partitions", "2", "--folds", "3", "--grid", "4x2", "--out", "pr.json"]),
        );
        keep(
            "eval",
            ok(d, &["eval", "--scenario", "3", "--n", "40", "--p", "6", "--replicates", "2", "--methods", "dc,tv,convex", "--grid", "5x2", "--seed", "4", "--replicates-out", "r.jsonl", "--out", "e.csv"]),
        );
        let mut files: Vec<_> = fs::read_dir(d).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        for f in files {
            outputs.push((f.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&f).unwrap()));
        }
        outputs
    };
    let (a, b) = (run(), run());
    if a.len() != b.len() {
        return Err(format!("{} vs {} outputs", a.len(), b.len()));
    }
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        if x != y {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok(())
}
