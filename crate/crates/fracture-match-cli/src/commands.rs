//! The six subcommand implementations.
//!
//! Each command is a thin orchestration of library calls: load inputs,
//! resolve options from the [`RunConfig`], run, write outputs under the
//! user-chosen path, print a short deterministic summary to stdout. Nothing
//! here prints timestamps or machine state, so identical inputs give
//! byte-identical outputs.

use std::fs;
use std::path::{Path, PathBuf};

use fracture_match::classifier::{
    band_sweep, classify_with_threshold, reports_to_csv, sweep_to_csv, train, Decision,
    MatchReport, SweepOptions, TrainOptions, TrainedClassifier,
};
use fracture_match::error::{Error, Result};
use fracture_match::features::{
    build_feature, build_features, enumerate_pairs, features_to_csv, FeatureMatrix, PairKind,
    SurfacePair, Truth,
};
use fracture_match::heightmap::{Axis, HeightMap, ImageSequence, Role};
use fracture_match::mvt::FitOptions;
use fracture_match::spectral::BandSet;
use fracture_match::synth::{self, Corpus};

use crate::config::{write_run_record, MirrorSetting, RunConfig};

// ── input loading ──

/// Reads one height map, picking the format from the file extension:
/// `.hmap` is the self-describing binary format, `.csv` is a bare grid that
/// needs the pixel pitch supplied on the command line.
fn load_map(path: &Path, cfg: &RunConfig) -> Result<HeightMap> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "hmap" => HeightMap::load_binary(path),
        "csv" => {
            let pitch = cfg.pitch_um.ok_or_else(|| {
                Error::param(
                    "--pitch-um",
                    format!(
                        "csv-grid input {} carries no pixel pitch; pass --pitch-um",
                        path.display()
                    ),
                )
            })?;
            HeightMap::load_csv(path, pitch)
        }
        other => Err(Error::param(
            "input",
            format!("{}: unknown extension {other:?}; expected .hmap or .csv", path.display()),
        )),
    }
}

/// Loads a directory of `.hmap`/`.csv` windows, sorted by file name, as one
/// image sequence.
fn load_sequence(dir: &Path, role: Role, cfg: &RunConfig) -> Result<ImageSequence> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(p.extension().and_then(|e| e.to_str()), Some("hmap") | Some("csv"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::param(
            "input",
            format!("{}: no .hmap or .csv files found", dir.display()),
        ));
    }
    let images = paths.iter().map(|p| load_map(p, cfg)).collect::<Result<Vec<_>>>()?;
    let label = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("sequence")
        .to_string();
    ImageSequence::from_images(label, role, images, cfg.overlap)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pairs of every requested kind, enumerated over a corpus. With the mirror
/// disabled each pair is downgraded to as-imaged comparison.
fn corpus_pairs(corpus: &Corpus, kinds: &[PairKind], cfg: &RunConfig) -> Result<Vec<SurfacePair>> {
    let mut pairs = Vec::new();
    for &kind in kinds {
        let (left_role, right_role) = kind.roles();
        let side = |role: Role| match role {
            Role::Base => &corpus.bases,
            Role::Tip => &corpus.tips,
            Role::Replica => &corpus.replicas,
        };
        pairs.extend(enumerate_pairs(side(left_role), side(right_role), left_role, right_role)?);
    }
    if !cfg.mirror_enabled() {
        pairs = pairs.into_iter().map(|p| p.with_mirror(false)).collect();
    }
    Ok(pairs)
}

// ── synth ──

pub fn cmd_synth(out: &Path, cfg: &RunConfig) -> Result<()> {
    let corpus = synth::generate_corpus(&cfg.synth, cfg.rods, cfg.images)?;
    synth::write_corpus(&corpus, out)?;
    println!(
        "wrote {} rods x 3 surfaces x {} windows of {} px to {}",
        cfg.rods,
        cfg.images,
        corpus.manifest.window,
        out.display()
    );
    Ok(())
}

// ── preprocess ──

pub fn cmd_preprocess(
    input: &Path,
    out: &Path,
    mirror: Option<MirrorSetting>,
    cfg: &RunConfig,
) -> Result<()> {
    let mut map = load_map(input, cfg)?;
    match mirror {
        Some(MirrorSetting::H) => map = map.mirrored(Axis::Horizontal),
        Some(MirrorSetting::V) => map = map.mirrored(Axis::Vertical),
        Some(MirrorSetting::Off) | None => {}
    }
    map = map.remove_tilt();
    let replaced = if cfg.despike {
        let (clean, replaced) = map.remove_spikes(cfg.spike_radius, cfg.spike_k)?;
        map = clean;
        replaced
    } else {
        0
    };
    map.save_binary(out)?;
    println!(
        "{}: removed tilt, replaced {replaced} spike pixels, wrote {}",
        input.display(),
        out.display()
    );
    Ok(())
}

// ── compare ──

/// Raw correlations in the same column-major layout as the feature CSV.
fn raw_to_csv(f: &FeatureMatrix) -> String {
    let mut out = String::from("pair_id,truth");
    for k in 0..f.cols() {
        for b in 0..f.rows() {
            out.push_str(&format!(",r_b{b}_k{k}"));
        }
    }
    out.push('\n');
    out.push_str(&f.pair_id);
    out.push(',');
    out.push_str(&f.truth.to_string());
    for k in 0..f.cols() {
        for b in 0..f.rows() {
            out.push_str(&format!(",{}", f.raw[b][k]));
        }
    }
    out.push('\n');
    out
}

pub fn cmd_compare(
    left: &Path,
    right: &Path,
    left_role: Role,
    right_role: Role,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let kind = PairKind::from_roles(left_role, right_role)?;
    let left_seq = load_sequence(left, left_role, cfg)?;
    let right_seq = load_sequence(right, right_role, cfg)?;
    let mut pair = SurfacePair::new(left_seq, right_seq, kind)?;
    if !cfg.mirror_enabled() {
        pair = pair.with_mirror(false);
    }
    let bands = cfg.band_set()?;
    let feature = build_feature(&pair, &bands, &cfg.preprocess(), cfg.blur)?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("features.csv"), &features_to_csv(std::slice::from_ref(&feature))?)?;
    write_text(&out.join("raw.csv"), &raw_to_csv(&feature))?;
    write_run_record(out, "compare", cfg)?;

    println!("{} ({} windows)", feature.pair_id, feature.cols());
    for (b, band) in bands.bands().iter().enumerate() {
        println!(
            "band [{}, {}) mm^-1: mean r {:+.4} over {} lines",
            band.lo,
            band.hi,
            feature.mean_raw(b),
            feature.lines[b]
        );
    }
    Ok(())
}

// ── train ──

pub fn cmd_train(corpus_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let corpus = synth::read_corpus(corpus_dir)?;
    let pairs = corpus_pairs(&corpus, &cfg.kind.kinds(), cfg)?;
    let bands = cfg.band_set()?;
    let features = build_features(&pairs, &bands, &cfg.preprocess(), cfg.blur)?;
    let (matches, nonmatches): (Vec<FeatureMatrix>, Vec<FeatureMatrix>) =
        features.into_iter().partition(|f| f.truth == Truth::Match);

    let options = TrainOptions {
        prior_match: cfg.prior,
        fit: FitOptions::default(),
        preprocess: cfg.preprocess(),
        blur: cfg.blur,
    };
    let model = train(&matches, &nonmatches, &options)?;
    for warning in model.match_fit.warnings.iter().chain(&model.nonmatch_fit.warnings) {
        eprintln!("warning: {warning}");
    }
    model.save(out)?;
    println!(
        "trained on {} match + {} non-match {} pairs; converged {}/{}; wrote {}",
        matches.len(),
        nonmatches.len(),
        cfg.kind,
        model.match_fit.converged,
        model.nonmatch_fit.converged,
        out.display()
    );
    Ok(())
}

// ── classify ──

#[derive(serde::Serialize)]
struct ClassifyDocument<'a> {
    model_fingerprint: &'a str,
    threshold: f64,
    reports: &'a [MatchReport],
}

pub fn cmd_classify(
    model_path: &Path,
    corpus_dir: &Path,
    out: &Path,
    bands_override: Option<Vec<f64>>,
    cfg: &RunConfig,
) -> Result<()> {
    let model = TrainedClassifier::load(model_path)?;
    let bands = match bands_override {
        Some(thresholds) => BandSet::from_thresholds(&thresholds)?,
        None => model.bands.clone(),
    };
    // Record the bands actually used, so run.json reproduces the run.
    let mut cfg = cfg.clone();
    cfg.bands = bands.thresholds();
    model.check_fingerprint(&bands, &cfg.preprocess(), cfg.blur)?;

    let corpus = synth::read_corpus(corpus_dir)?;
    let pairs = corpus_pairs(&corpus, &cfg.kind.kinds(), &cfg)?;
    let features = build_features(&pairs, &bands, &cfg.preprocess(), cfg.blur)?;
    let mut reports = features
        .iter()
        .map(|f| classify_with_threshold(&model, f, cfg.threshold))
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("reports.csv"), &reports_to_csv(&reports))?;
    let document = ClassifyDocument {
        model_fingerprint: &model.fingerprint,
        threshold: cfg.threshold,
        reports: &reports,
    };
    let json_path = out.join("reports.json");
    let mut json = serde_json::to_string_pretty(&document).map_err(|e| Error::BadFile {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;
    json.push('\n');
    write_text(&json_path, &json)?;
    write_run_record(out, "classify", &cfg)?;

    let n_match = reports.iter().filter(|r| r.truth == Truth::Match).count();
    let n_nonmatch = reports.iter().filter(|r| r.truth == Truth::NonMatch).count();
    let false_pos = reports
        .iter()
        .filter(|r| r.truth == Truth::NonMatch && r.decision == Decision::Match)
        .count();
    let false_neg = reports
        .iter()
        .filter(|r| r.truth == Truth::Match && r.decision == Decision::NonMatch)
        .count();
    println!(
        "{false_pos} false positives, {false_neg} false negatives over {n_match} match + {n_nonmatch} non-match pairs"
    );
    let unknown = reports.len() - n_match - n_nonmatch;
    if unknown > 0 {
        println!("{unknown} pairs had no ground truth");
    }
    Ok(())
}

// ── sweep ──

pub fn cmd_sweep(corpus_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let corpus = synth::read_corpus(corpus_dir)?;
    let pairs = corpus_pairs(&corpus, &[PairKind::ReplicaTip], cfg)?;
    let options = SweepOptions {
        preprocess: cfg.preprocess(),
        fit: FitOptions::default(),
        bootstrap: cfg.bootstrap,
        seed: cfg.seed,
        blur_variant: true,
    };
    let report = band_sweep(&pairs, &options)?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("sweep.csv"), &sweep_to_csv(&report))?;
    write_run_record(out, "sweep", cfg)?;

    println!(
        "{} sweep rows from {} match + {} non-match replica-tip pairs ({} bootstrap resamples, {} draws skipped); wrote {}",
        report.rows.len(),
        report.n_match,
        report.n_nonmatch,
        report.bootstrap,
        report.skipped_draws,
        out.join("sweep.csv").display()
    );
    Ok(())
}
