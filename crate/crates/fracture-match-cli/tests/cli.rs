//! End-to-end tests of the command-line interface, run against the built
//! binary on a miniature synthetic corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

/// Miniature geometry so every test runs in well under a second: six 64 px
/// windows per 224 x 64 strip at 4 um pitch.
const SMALL_CONFIG: &str = r#"{
  "synth": {
    "strip_width": 224,
    "strip_height": 64,
    "pitch_um": 4.0,
    "split_frequency": 40.0
  }
}
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracture-match"))
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = bin().args(args).current_dir(dir).output().expect("spawn binary");
    assert!(
        out.status.success(),
        "command {:?} failed with {:?}\nstdout: {}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn run_err(args: &[&str], dir: &Path) -> (i32, String) {
    let out = bin().args(args).current_dir(dir).output().expect("spawn binary");
    assert!(!out.status.success(), "command {args:?} unexpectedly succeeded");
    (out.status.code().expect("exit code"), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// Writes the small config and synthesizes a 3-rod corpus under `dir`.
fn setup_corpus(dir: &Path, seed: &str) -> PathBuf {
    fs::write(dir.join("small.json"), SMALL_CONFIG).unwrap();
    run_ok(
        &["synth", "--rods", "3", "--images", "6", "--seed", seed, "--config", "small.json",
          "--out", "corpus"],
        dir,
    );
    dir.join("corpus")
}

fn tree_digest(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<PathBuf> = walk(root);
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p.strip_prefix(root).unwrap().to_path_buf(), bytes)
        })
        .collect()
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

// ── synth ──

#[test]
fn synth_writes_the_full_corpus_tree() {
    let tmp = TempDir::new().unwrap();
    let corpus = setup_corpus(tmp.path(), "7");

    assert!(corpus.join("manifest.json").is_file());
    for rod in ["rod00", "rod01", "rod02"] {
        for role in ["base", "tip", "replica"] {
            for k in 0..6 {
                let img = corpus.join(rod).join(role).join(format!("img{k}.hmap"));
                assert!(img.is_file(), "missing {}", img.display());
            }
        }
    }
    assert_eq!(walk(&corpus).len(), 1 + 3 * 3 * 6);
}

#[test]
fn synth_rejects_zero_rods_as_usage_error() {
    let tmp = TempDir::new().unwrap();
    let (code, stderr) = run_err(&["synth", "--rods", "0", "--out", "x"], tmp.path());
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.contains("rod"), "stderr: {stderr}");
}

#[test]
fn synth_is_deterministic_in_the_seed() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("small.json"), SMALL_CONFIG).unwrap();
    for out in ["a", "b"] {
        run_ok(
            &["synth", "--rods", "2", "--images", "6", "--seed", "11", "--config", "small.json",
              "--out", out],
            tmp.path(),
        );
    }
    assert_eq!(tree_digest(&tmp.path().join("a")), tree_digest(&tmp.path().join("b")));

    // A different seed must change the surfaces.
    run_ok(
        &["synth", "--rods", "2", "--images", "6", "--seed", "12", "--config", "small.json",
          "--out", "c"],
        tmp.path(),
    );
    assert_ne!(tree_digest(&tmp.path().join("a")), tree_digest(&tmp.path().join("c")));
}

// ── compare ──

#[test]
fn compare_of_identical_sequences_gives_unit_correlations() {
    let tmp = TempDir::new().unwrap();
    let corpus = setup_corpus(tmp.path(), "7");
    let base = corpus.join("rod00").join("base");

    run_ok(
        &["compare", base.to_str().unwrap(), base.to_str().unwrap(), "--mirror", "off",
          "--out", "cmp"],
        tmp.path(),
    );
    let raw = fs::read_to_string(tmp.path().join("cmp").join("raw.csv")).unwrap();
    let mut lines = raw.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("pair_id,truth,r_b0_k0"));
    let row = lines.next().unwrap();
    let values: Vec<f64> = row.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    // Default band set has 2 bands; 6 windows.
    assert_eq!(values.len(), 2 * 6);
    for v in values {
        assert_eq!(v, 1.0, "self-comparison must correlate exactly at unity");
    }
}

#[test]
fn compare_emits_one_feature_per_band_and_window() {
    let tmp = TempDir::new().unwrap();
    let corpus = setup_corpus(tmp.path(), "7");
    let base = corpus.join("rod01").join("base");
    let tip = corpus.join("rod01").join("tip");

    run_ok(
        &["compare", base.to_str().unwrap(), tip.to_str().unwrap(), "--bands", "5,10,20",
          "--out", "cmp"],
        tmp.path(),
    );
    let features = fs::read_to_string(tmp.path().join("cmp").join("features.csv")).unwrap();
    let mut lines = features.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    // 2 bands x 6 windows plus the two id columns.
    assert_eq!(header.len(), 2 + 2 * 6);
    assert_eq!(header[2], "z_b0_k0");
    assert_eq!(lines.next().unwrap().split(',').count(), 2 + 2 * 6);
    assert!(lines.next().is_none());
    assert!(tmp.path().join("cmp").join("run.json").is_file());
}

#[test]
fn csv_grids_require_an_explicit_pitch() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    fs::create_dir(&seq).unwrap();
    fs::write(seq.join("img0.csv"), "0.1,0.2\n0.3,0.4\n").unwrap();

    let (code, stderr) = run_err(
        &["compare", "seq", "seq", "--mirror", "off", "--out", "cmp"],
        tmp.path(),
    );
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.contains("--pitch-um"), "error must name the missing flag: {stderr}");
}

// ── train / classify ──

#[test]
fn train_then_classify_separates_the_corpus() {
    let tmp = TempDir::new().unwrap();
    setup_corpus(tmp.path(), "7");

    run_ok(
        &["train", "corpus", "--config", "small.json", "--out", "model.json"],
        tmp.path(),
    );
    let model = fs::read_to_string(tmp.path().join("model.json")).unwrap();
    assert!(model.contains("fingerprint"));

    let out = run_ok(
        &["classify", "model.json", "corpus", "--config", "small.json", "--kind", "all",
          "--out", "cls"],
        tmp.path(),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("0 false positives, 0 false negatives over 9 match + 18 non-match pairs"),
        "stdout: {stdout}"
    );

    let reports = fs::read_to_string(tmp.path().join("cls").join("reports.csv")).unwrap();
    let ids: Vec<&str> =
        reports.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids.len(), 27);
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted, "reports must be ordered by pair id");
}

#[test]
fn classify_rejects_a_band_set_the_model_was_not_built_with() {
    let tmp = TempDir::new().unwrap();
    setup_corpus(tmp.path(), "7");
    run_ok(&["train", "corpus", "--config", "small.json", "--out", "model.json"], tmp.path());

    let (code, stderr) = run_err(
        &["classify", "model.json", "corpus", "--config", "small.json", "--bands", "5,20",
          "--out", "cls"],
        tmp.path(),
    );
    assert_eq!(code, 3, "stderr: {stderr}");
    assert!(stderr.contains("fingerprint mismatch"), "stderr: {stderr}");
}

// ── sweep ──

#[test]
fn sweep_emits_forty_rows() {
    let tmp = TempDir::new().unwrap();
    setup_corpus(tmp.path(), "7");
    run_ok(
        &["sweep", "corpus", "--config", "small.json", "--bootstrap", "50", "--seed", "3",
          "--out", "swp"],
        tmp.path(),
    );
    let csv = fs::read_to_string(tmp.path().join("swp").join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    // 10 survey bands x {match, non-match} x {plain, blurred}.
    assert_eq!(rows.len(), 40);
    assert!(csv.starts_with("band_lo,band_hi,group,blur,mean_r,ci_lo,ci_hi,lines,low_resolution"));
}

// ── preprocess ──

#[test]
fn preprocess_writes_a_loadable_cleaned_map() {
    use fracture_match::heightmap::Axis;

    let tmp = TempDir::new().unwrap();
    let corpus = setup_corpus(tmp.path(), "7");
    let img = corpus.join("rod00").join("base").join("img0.hmap");

    run_ok(
        &["preprocess", img.to_str().unwrap(), "--out", "clean.hmap"],
        tmp.path(),
    );
    let clean = fracture_match::HeightMap::load_binary(tmp.path().join("clean.hmap")).unwrap();
    assert_eq!((clean.width(), clean.height()), (64, 64));

    // With despiking off the output is exactly mirror-then-level.
    fs::write(tmp.path().join("plain.json"), "{ \"despike\": false }").unwrap();
    run_ok(
        &["preprocess", img.to_str().unwrap(), "--config", "plain.json", "--mirror", "h",
          "--out", "m1.hmap"],
        tmp.path(),
    );
    let mirrored = fracture_match::HeightMap::load_binary(tmp.path().join("m1.hmap")).unwrap();
    let expected = fracture_match::HeightMap::load_binary(&img)
        .unwrap()
        .mirrored(Axis::Horizontal)
        .remove_tilt();
    // The container stores f32 heights, so round the oracle the same way.
    let expected_f32: Vec<f64> = expected.heights().iter().map(|&v| v as f32 as f64).collect();
    assert_eq!(mirrored.heights(), expected_f32.as_slice());
    assert_ne!(mirrored.heights(), clean.heights());
}
