//! Match/non-match decisions from band-correlation features.
//!
//! Training fits one constrained matrix-variate t model to feature matrices
//! of known matching surface pairs and an independent one to known
//! non-matches (quadratic discriminant analysis: nothing is shared between
//! the classes). Classification evaluates both log-densities at a new
//! feature matrix and combines them with a prior into the posterior
//! probability of a match, reported together with the log-odds, which carry
//! the evidence magnitude long after the posterior saturates at 1.
//!
//! The module also hosts the ten-band survey: per-band mean correlations of
//! matched and non-matched pairs with bootstrap confidence intervals, the
//! diagnostic used to decide which frequency bands discriminate at all.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{build_features, FeatureMatrix, PreprocessOptions, SurfacePair, Truth};
use crate::mvt::{self, FitOptions, MatrixTParams};
use crate::spectral::BandSet;

/// Posterior threshold of the standard decision rule.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Version tag written into model files.
pub const MODEL_VERSION: u32 = 1;

// ── posterior arithmetic ────────────────────────────────────────────────

/// The binary call on a surface pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Match,
    NonMatch,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Match => "match",
            Decision::NonMatch => "non-match",
        })
    }
}

/// Combines a prior with two class log-densities into `(posterior,
/// log_odds)`.
///
/// `log_odds = ln(p/(1-p)) + log_f_match - log_f_nonmatch`, and the
/// posterior is the logistic function of it, evaluated on whichever side is
/// numerically safe, so the two class probabilities always sum to one. The
/// prior must lie strictly inside (0, 1).
pub fn posterior_from_log_densities(
    prior_match: f64,
    log_f_match: f64,
    log_f_nonmatch: f64,
) -> (f64, f64) {
    debug_assert!(prior_match > 0.0 && prior_match < 1.0);
    let log_odds = prior_match.ln() - (1.0 - prior_match).ln() + log_f_match - log_f_nonmatch;
    (sigmoid(log_odds), log_odds)
}

/// Logistic function, stable on both tails.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ── trained classifier ──────────────────────────────────────────────────

/// Headline numbers of one class's training fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n: usize,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl From<&mvt::FitReport> for FitSummary {
    fn from(r: &mvt::FitReport) -> Self {
        FitSummary {
            n: r.n,
            loglik: r.loglik,
            iterations: r.iterations,
            converged: r.converged,
            warnings: r.warnings.clone(),
        }
    }
}

/// A fitted two-class discriminant plus everything needed to apply it
/// consistently: the band set and a fingerprint of the preprocessing that
/// produced the training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub version: u32,
    /// Prior probability that an unseen pair is a match.
    pub prior_match: f64,
    pub bands: BandSet,
    /// Hash of (bands, preprocessing options, blur flag); classification of
    /// freshly preprocessed images must present the same fingerprint.
    pub fingerprint: String,
    pub f_match: MatrixTParams,
    pub f_nonmatch: MatrixTParams,
    pub match_fit: FitSummary,
    pub nonmatch_fit: FitSummary,
}

#[derive(Serialize)]
struct FingerprintPayload<'a> {
    bands: &'a BandSet,
    preprocess: &'a PreprocessOptions,
    blur: bool,
}

/// Hex SHA-256 over the canonical JSON of the feature-extraction settings.
pub fn fingerprint(bands: &BandSet, preprocess: &PreprocessOptions, blur: bool) -> String {
    let payload = FingerprintPayload { bands, preprocess, blur };
    let json = serde_json::to_string(&payload).expect("settings always serialize");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(out, "{byte:02x}").unwrap();
    }
    out
}

impl TrainedClassifier {
    /// Errors unless the given extraction settings reproduce the ones the
    /// model was trained with.
    pub fn check_fingerprint(
        &self,
        bands: &BandSet,
        preprocess: &PreprocessOptions,
        blur: bool,
    ) -> Result<()> {
        let request = fingerprint(bands, preprocess, blur);
        if request != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                model: self.fingerprint.clone(),
                request,
            });
        }
        Ok(())
    }

    /// Writes the model as one pretty-printed JSON document.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self).map_err(|e| Error::BadFile {
            path: path.into(),
            reason: e.to_string(),
        })?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Reads a model back and re-checks its internal consistency.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: TrainedClassifier = serde_json::from_str(&raw).map_err(|e| Error::BadFile {
            path: path.into(),
            reason: e.to_string(),
        })?;
        let bad = |reason: String| Error::BadFile { path: path.into(), reason };
        if model.version != MODEL_VERSION {
            return Err(bad(format!(
                "model version {} not supported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        if !(model.prior_match > 0.0 && model.prior_match < 1.0) {
            return Err(bad(format!("prior {} outside (0, 1)", model.prior_match)));
        }
        let (p, q) = (model.f_match.p(), model.f_match.q());
        if model.f_nonmatch.p() != p
            || model.f_nonmatch.q() != q
            || model.f_nonmatch.dof() != model.f_match.dof()
        {
            return Err(bad("class models disagree on shape or degrees of freedom".into()));
        }
        if model.bands.len() != p {
            return Err(bad(format!(
                "band count {} does not match the model's {p} feature rows",
                model.bands.len()
            )));
        }
        Ok(model)
    }
}

// ── training ────────────────────────────────────────────────────────────

/// Settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Prior probability of a match, strictly inside (0, 1).
    pub prior_match: f64,
    pub fit: FitOptions,
    /// The preprocessing that produced (and must later reproduce) the
    /// features; recorded in the model fingerprint.
    pub preprocess: PreprocessOptions,
    /// Whether features come from blurred spectra; likewise recorded.
    pub blur: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            prior_match: 0.5,
            fit: FitOptions::default(),
            preprocess: PreprocessOptions::default(),
            blur: false,
        }
    }
}

fn check_uniform(features: &[FeatureMatrix], bands: &BandSet, cols: usize) -> Result<()> {
    for f in features {
        if f.bands != *bands {
            return Err(Error::DimensionMismatch(format!(
                "feature {} was built with a different band set",
                f.pair_id
            )));
        }
        if f.cols() != cols {
            return Err(Error::DimensionMismatch(format!(
                "feature {} has {} windows, expected {cols}",
                f.pair_id,
                f.cols()
            )));
        }
    }
    Ok(())
}

fn check_truth(features: &[FeatureMatrix], forbidden: Truth, list: &str) -> Result<()> {
    for f in features {
        if f.truth == forbidden {
            return Err(Error::param(
                "features",
                format!("pair {} is labeled {} but appears in the {list} list", f.pair_id, f.truth),
            ));
        }
    }
    Ok(())
}

/// Fits the two-class discriminant.
///
/// The match and non-match models are fitted independently on their own
/// feature lists; both lists must share the band set and window count.
/// Ground-truth labels, where present, must agree with the list a feature
/// was passed in.
pub fn train(
    match_features: &[FeatureMatrix],
    nonmatch_features: &[FeatureMatrix],
    options: &TrainOptions,
) -> Result<TrainedClassifier> {
    if match_features.is_empty() || nonmatch_features.is_empty() {
        return Err(Error::param("features", "both classes need at least one feature matrix"));
    }
    if !(options.prior_match > 0.0 && options.prior_match < 1.0) {
        return Err(Error::param(
            "prior_match",
            format!("prior must lie strictly inside (0, 1), got {}", options.prior_match),
        ));
    }
    let bands = match_features[0].bands.clone();
    let cols = match_features[0].cols();
    check_uniform(match_features, &bands, cols)?;
    check_uniform(nonmatch_features, &bands, cols)?;
    check_truth(match_features, Truth::NonMatch, "match")?;
    check_truth(nonmatch_features, Truth::Match, "non-match")?;

    let to_mats = |fs: &[FeatureMatrix]| fs.iter().map(FeatureMatrix::to_matrix).collect::<Vec<_>>();
    let match_report = mvt::fit(&to_mats(match_features), &options.fit)
        .map_err(|e| e.with_context("fitting the match class"))?;
    let nonmatch_report = mvt::fit(&to_mats(nonmatch_features), &options.fit)
        .map_err(|e| e.with_context("fitting the non-match class"))?;

    Ok(TrainedClassifier {
        version: MODEL_VERSION,
        prior_match: options.prior_match,
        fingerprint: fingerprint(&bands, &options.preprocess, options.blur),
        bands,
        match_fit: FitSummary::from(&match_report),
        nonmatch_fit: FitSummary::from(&nonmatch_report),
        f_match: match_report.params,
        f_nonmatch: nonmatch_report.params,
    })
}

// ── classification ──────────────────────────────────────────────────────

/// The verdict on one surface pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pair_id: String,
    /// Ground truth if the caller knows it, for scoring runs.
    pub truth: Truth,
    pub log_f_match: f64,
    pub log_f_nonmatch: f64,
    /// `ln p/(1-p) + log_f_match - log_f_nonmatch`; the evidence scale that
    /// stays informative when the posterior saturates.
    pub log_odds: f64,
    pub posterior: f64,
    /// Posterior cut used for the decision.
    pub threshold: f64,
    pub decision: Decision,
    /// Mean raw band correlation across windows, one entry per band.
    pub band_mean_r: Vec<f64>,
}

/// Applies the classifier at a caller-chosen posterior threshold.
pub fn classify_with_threshold(
    c: &TrainedClassifier,
    x: &FeatureMatrix,
    threshold: f64,
) -> Result<MatchReport> {
    if !(threshold.is_finite() && (0.0..=1.0).contains(&threshold)) {
        return Err(Error::param(
            "threshold",
            format!("decision threshold must lie in [0, 1], got {threshold}"),
        ));
    }
    if x.bands != c.bands {
        return Err(Error::DimensionMismatch(format!(
            "feature {} was built with a different band set than the model",
            x.pair_id
        )));
    }
    if x.cols() != c.f_match.q() {
        return Err(Error::DimensionMismatch(format!(
            "feature {} has {} windows, model expects {}",
            x.pair_id,
            x.cols(),
            c.f_match.q()
        )));
    }
    let mat = x.to_matrix();
    let log_f_match = c.f_match.log_density(&mat)?;
    let log_f_nonmatch = c.f_nonmatch.log_density(&mat)?;
    let (posterior, log_odds) =
        posterior_from_log_densities(c.prior_match, log_f_match, log_f_nonmatch);
    let decision = if posterior > threshold { Decision::Match } else { Decision::NonMatch };
    Ok(MatchReport {
        pair_id: x.pair_id.clone(),
        truth: x.truth,
        log_f_match,
        log_f_nonmatch,
        log_odds,
        posterior,
        threshold,
        decision,
        band_mean_r: (0..x.rows()).map(|b| x.mean_raw(b)).collect(),
    })
}

/// Applies the classifier at the standard 0.5 posterior threshold.
pub fn classify(c: &TrainedClassifier, x: &FeatureMatrix) -> Result<MatchReport> {
    classify_with_threshold(c, x, DEFAULT_THRESHOLD)
}

/// One CSV line per report: the scalar summary without the per-band means.
pub fn reports_to_csv(reports: &[MatchReport]) -> String {
    let mut out = String::from("pair_id,truth,log_f_match,log_f_nonmatch,log_odds,posterior,decision\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.pair_id, r.truth, r.log_f_match, r.log_f_nonmatch, r.log_odds, r.posterior, r.decision
        ));
    }
    out
}

// ── band sweep ──────────────────────────────────────────────────────────

/// Settings for [`band_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub preprocess: PreprocessOptions,
    pub fit: FitOptions,
    /// Bootstrap resamples per group.
    pub bootstrap: usize,
    pub seed: u64,
    /// Also compute every row from blurred spectra.
    pub blur_variant: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            preprocess: PreprocessOptions::default(),
            fit: FitOptions::default(),
            bootstrap: 2000,
            seed: 0,
            blur_variant: false,
        }
    }
}

/// Mean correlation of one group in one band, with its bootstrap interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub band_lo: f64,
    pub band_hi: f64,
    /// `Match` or `NonMatch`.
    pub group: Truth,
    pub blur: bool,
    /// tanh of the fitted mean on the Fisher-Z scale.
    pub mean_r: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Independent frequency lines the band really resolves.
    pub lines: usize,
    /// Set when the band resolves fewer than 8 lines and its statistics
    /// should not be leaned on.
    pub low_resolution: bool,
}

/// Output of [`band_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub n_match: usize,
    pub n_nonmatch: usize,
    pub bootstrap: usize,
    pub seed: u64,
    /// Bootstrap draws dropped because their resample would not fit even
    /// with a stabilizing ridge.
    pub skipped_draws: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// tanh of the fitted per-band means of one group's feature matrices.
fn fitted_means(mats: &[DMatrix<f64>], options: &FitOptions) -> Result<Vec<f64>> {
    let report = mvt::fit(mats, options)?;
    Ok(report.params.mean_col().iter().map(|&z| z.tanh()).collect())
}

/// Like [`fitted_means`], retrying with a stabilizing ridge: ten-band sweeps
/// of few pairs have rank-deficient scatters by construction.
fn fitted_means_stabilized(mats: &[DMatrix<f64>], options: &FitOptions) -> Result<Vec<f64>> {
    fitted_means(mats, options).or_else(|_| {
        let ridge = FitOptions { ridge: true, ..options.clone() };
        fitted_means(mats, &ridge)
    })
}

/// Nearest-rank percentile of a sorted slice.
fn percentile(sorted: &[f64], frac: f64) -> f64 {
    let m = sorted.len();
    let rank = ((frac * m as f64).ceil() as usize).clamp(1, m);
    sorted[rank - 1]
}

/// Surveys the ten standard frequency bands.
///
/// All pairs are rebuilt as features over the ten-band set, split by ground
/// truth, and each group's 10-by-q matrix-t model is fitted whole; a band's
/// mean correlation is the tanh of the fitted mean Fisher-Z in that row.
/// 95% confidence intervals come from a percentile bootstrap that resamples
/// whole surface pairs (images within a pair are dependent, so the pair is
/// the exchangeable unit), `bootstrap` times, deterministically seeded. A
/// resample that cannot be fitted is retried with a stabilizing ridge and
/// skipped if it still fails. With `blur_variant` set every row is computed
/// twice, from plain and from blurred spectra.
pub fn band_sweep(pairs: &[SurfacePair], options: &SweepOptions) -> Result<SweepReport> {
    let n_match = pairs.iter().filter(|p| p.truth == Truth::Match).count();
    let n_nonmatch = pairs.iter().filter(|p| p.truth == Truth::NonMatch).count();
    if n_match < 2 || n_nonmatch < 2 {
        return Err(Error::TooFewSamples {
            got: n_match.min(n_nonmatch),
            min: 2,
        });
    }
    if n_match + n_nonmatch != pairs.len() {
        return Err(Error::param(
            "pairs",
            "every pair needs a ground-truth label for the sweep",
        ));
    }
    if options.bootstrap < 2 {
        return Err(Error::param("bootstrap", "need at least two bootstrap draws"));
    }

    let bands = BandSet::survey_ten();
    let blur_variants: &[bool] = if options.blur_variant { &[false, true] } else { &[false] };
    let mut rows = Vec::new();
    let mut skipped_total = 0usize;

    for (variant_idx, &blur) in blur_variants.iter().enumerate() {
        let features = build_features(pairs, &bands, &options.preprocess, blur)?;
        for (group_idx, group) in [Truth::Match, Truth::NonMatch].into_iter().enumerate() {
            let group_feats: Vec<&FeatureMatrix> =
                features.iter().filter(|f| f.truth == group).collect();
            let mats: Vec<DMatrix<f64>> =
                group_feats.iter().map(|f| f.to_matrix()).collect();
            let point = fitted_means_stabilized(&mats, &options.fit)
                .map_err(|e| e.with_context(format!("fitting the {group} group")))?;

            let stream = options
                .seed
                .wrapping_add((variant_idx as u64) << 32)
                .wrapping_add(group_idx as u64);
            let draws: Vec<Option<Vec<f64>>> = (0..options.bootstrap)
                .into_par_iter()
                .map(|j| {
                    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
                        stream.wrapping_add((j as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
                    ));
                    let resample: Vec<DMatrix<f64>> =
                        (0..mats.len()).map(|_| mats[rng.gen_range(0..mats.len())].clone()).collect();
                    fitted_means_stabilized(&resample, &options.fit).ok()
                })
                .collect();
            let kept: Vec<&Vec<f64>> = draws.iter().flatten().collect();
            skipped_total += options.bootstrap - kept.len();
            if kept.len() < 2 {
                return Err(Error::DegenerateScatter
                    .with_context(format!("bootstrap of the {group} group: almost every resample failed to fit")));
            }

            for (b, band) in bands.bands().iter().enumerate() {
                let mut values: Vec<f64> = kept.iter().map(|v| v[b]).collect();
                values.sort_by(|a, c| a.total_cmp(c));
                let lines = group_feats[0].lines[b];
                rows.push(SweepRow {
                    band_lo: band.lo,
                    band_hi: band.hi,
                    group,
                    blur,
                    mean_r: point[b],
                    ci_lo: percentile(&values, 0.025),
                    ci_hi: percentile(&values, 0.975),
                    lines,
                    low_resolution: lines < 8,
                });
            }
        }
    }

    Ok(SweepReport {
        rows,
        n_match,
        n_nonmatch,
        bootstrap: options.bootstrap,
        seed: options.seed,
        skipped_draws: skipped_total,
    })
}

/// CSV form of a sweep, one row per (band, group, blur) cell.
pub fn sweep_to_csv(report: &SweepReport) -> String {
    let mut out = String::from("band_lo,band_hi,group,blur,mean_r,ci_lo,ci_hi,lines,low_resolution\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.band_lo, r.band_hi, r.group, r.blur, r.mean_r, r.ci_lo, r.ci_hi, r.lines, r.low_resolution
        ));
    }
    out
}

// ── tests ───────────────────────────────────────────────────────────────
