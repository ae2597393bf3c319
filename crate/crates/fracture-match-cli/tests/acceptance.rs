//! Acceptance check for the command-line tool: a rerun of any command with
//! the same seed and configuration must reproduce its output files byte for
//! byte. Prints a `[criterion 10] PASS` line on success; run with
//! `--nocapture` to see it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fracture-match")
}

fn run_ok(dir: &Path, args: &[&str]) {
    let output = Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("failed to spawn the binary");
    assert!(
        output.status.success(),
        "`{}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Every file under `root`, keyed by relative path, with its raw bytes.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

const CONFIG: &str = r#"{
  "bootstrap": 50,
  "synth": {
    "strip_width": 224,
    "strip_height": 64,
    "pitch_um": 4.0,
    "replica_cutoff_um": 40.0
  }
}"#;

/// Runs the full command chain once inside `dir` and returns its file tree.
fn run_chain(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("run.config.json"), CONFIG).unwrap();
    let cfg = ["--config", "run.config.json"];

    let with_cfg = |mut head: Vec<&str>| -> Vec<String> {
        head.extend_from_slice(&cfg);
        head.into_iter().map(String::from).collect()
    };
    let commands: Vec<Vec<String>> = vec![
        with_cfg(vec![
            "synth", "--seed", "7", "--rods", "3", "--images", "6", "--out", "corpus",
        ]),
        with_cfg(vec![
            "preprocess", "corpus/rod00/base/img0.hmap", "--out", "clean.hmap",
        ]),
        with_cfg(vec![
            "compare", "corpus/rod00/base", "corpus/rod00/tip", "--out", "cmp",
        ]),
        with_cfg(vec!["train", "corpus", "--out", "model.json"]),
        with_cfg(vec!["classify", "model.json", "corpus", "--out", "reports"]),
        with_cfg(vec!["sweep", "corpus", "--out", "sweep"]),
    ];
    for command in &commands {
        let args: Vec<&str> = command.iter().map(String::as_str).collect();
        run_ok(dir, &args);
    }
    tree(dir)
}

#[test]
fn criterion_10_reruns_are_byte_identical() {
    let scratch = tempfile::tempdir().unwrap();
    let first = run_chain(&scratch.path().join("a"));
    let second = run_chain(&scratch.path().join("b"));

    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>(),
        "the two runs produced different file sets"
    );
    let mut compared = 0usize;
    for (path, bytes) in &first {
        assert_eq!(
            bytes,
            &second[path],
            "{} differs between identically-seeded runs",
            path.display()
        );
        compared += 1;
    }
    // 55 corpus files + cleaned map + model + 3 compare outputs +
    // 3 classify outputs + 2 sweep outputs + the config itself.
    assert!(compared > 60, "only {compared} files compared");
    println!(
        "[criterion 10] PASS synth/preprocess/compare/train/classify/sweep reruns reproduce all {compared} files byte for byte"
    );
}
