//! Pairing of imaged surfaces and assembly of Fisher-Z feature matrices.
//!
//! A [`SurfacePair`] couples two [`ImageSequence`]s position by position
//! (window k against window k). [`build_feature`] runs each window through
//! the preprocessing chain (optional mirror of the right side, tilt removal,
//! spike removal, taper, FFT, optional spectral blur) and fills a
//! bands-by-windows matrix of Fisher-Z band correlations. Batch assembly
//! caches the per-sequence spectral work, because every sequence appears in
//! many pairs of the match/non-match enumeration.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heightmap::{Axis, ImageSequence, Role};
use crate::spectral::{self, annulus_bins, correlate_packed, lines_estimate, BandSet};

// ── pairs ──

/// What physically faces what in a comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    BaseTip,
    ReplicaBase,
    ReplicaTip,
}

impl PairKind {
    /// The pairing implied by the two roles, in left-right order.
    pub fn from_roles(left: Role, right: Role) -> Result<Self> {
        match (left, right) {
            (Role::Base, Role::Tip) => Ok(PairKind::BaseTip),
            (Role::Replica, Role::Base) => Ok(PairKind::ReplicaBase),
            (Role::Replica, Role::Tip) => Ok(PairKind::ReplicaTip),
            _ => Err(Error::param(
                "roles",
                format!("unsupported pairing {left} vs {right}; expected base-tip, replica-base, or replica-tip"),
            )),
        }
    }

    /// The left and right roles of this pairing.
    pub fn roles(self) -> (Role, Role) {
        match self {
            PairKind::BaseTip => (Role::Base, Role::Tip),
            PairKind::ReplicaBase => (Role::Replica, Role::Base),
            PairKind::ReplicaTip => (Role::Replica, Role::Tip),
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairKind::BaseTip => write!(f, "base-tip"),
            PairKind::ReplicaBase => write!(f, "replica-base"),
            PairKind::ReplicaTip => write!(f, "replica-tip"),
        }
    }
}

/// Ground-truth label of a pair, when known.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truth {
    Match,
    NonMatch,
    Unknown,
}

impl fmt::Display for Truth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Truth::Match => write!(f, "match"),
            Truth::NonMatch => write!(f, "non-match"),
            Truth::Unknown => write!(f, "unknown"),
        }
    }
}

/// Two image sequences compared window against window.
///
/// Sequences are shared through [`Arc`] so that the full match/non-match
/// enumeration does not copy image data.
#[derive(Clone, Debug)]
pub struct SurfacePair {
    pub left: Arc<ImageSequence>,
    pub right: Arc<ImageSequence>,
    /// Mirror the right sequence before comparing. Defaults to `true`
    /// exactly when the right side is a tip, since a detached face is
    /// imaged with opposite lateral parity (a cast flips parity back).
    pub mirror_right: bool,
    pub pair_kind: PairKind,
    pub truth: Truth,
}

impl SurfacePair {
    pub fn new(
        left: impl Into<Arc<ImageSequence>>,
        right: impl Into<Arc<ImageSequence>>,
        pair_kind: PairKind,
    ) -> Result<Self> {
        let left = left.into();
        let right = right.into();
        if left.len() != right.len() {
            return Err(Error::DimensionMismatch(format!(
                "sequence {} has {} windows, {} has {}",
                left.label,
                left.len(),
                right.label,
                right.len()
            )));
        }
        let (a, b) = (&left.images[0], &right.images[0]);
        if a.width() != b.width() || a.height() != b.height() || a.pitch_um() != b.pitch_um() {
            return Err(Error::DimensionMismatch(format!(
                "windows are {}x{} at {} um vs {}x{} at {} um",
                a.width(),
                a.height(),
                a.pitch_um(),
                b.width(),
                b.height(),
                b.pitch_um()
            )));
        }
        let mirror_right = right.role == Role::Tip;
        Ok(SurfacePair { left, right, mirror_right, pair_kind, truth: Truth::Unknown })
    }

    pub fn with_truth(mut self, truth: Truth) -> Self {
        self.truth = truth;
        self
    }

    pub fn with_mirror(mut self, mirror_right: bool) -> Self {
        self.mirror_right = mirror_right;
        self
    }

    /// Number of window positions compared.
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    /// Stable identifier, e.g. `rod03/base|rod07/tip`.
    pub fn id(&self) -> String {
        format!(
            "{}/{}|{}/{}",
            self.left.label, self.left.role, self.right.label, self.right.role
        )
    }
}

/// Preprocessing applied to every window before the FFT.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessOptions {
    pub despike: bool,
    pub spike_radius: usize,
    pub spike_k: f64,
    pub taper_fraction: f64,
    pub mirror_axis: Axis,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            despike: true,
            spike_radius: 7,
            spike_k: 1.0,
            taper_fraction: 0.1,
            mirror_axis: Axis::Horizontal,
        }
    }
}

// ── feature matrices ──

/// Fisher-Z band correlations for one surface pair: rows are frequency
/// bands, columns are window positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub pair_id: String,
    pub truth: Truth,
    pub bands: BandSet,
    /// Fisher-Z values, `values[b][k]` for band b and window k.
    pub values: Vec<Vec<f64>>,
    /// Raw correlations in [-1, 1] before the Fisher-Z transform.
    pub raw: Vec<Vec<f64>>,
    /// Independent frequency lines per band (resolution diagnostic).
    pub lines: Vec<usize>,
    /// How many band/window cells had no spectral energy on either side.
    pub zero_energy_cells: usize,
}

impl FeatureMatrix {
    /// Number of bands (rows).
    pub fn rows(&self) -> usize {
        self.values.len()
    }

    /// Number of window positions (columns).
    pub fn cols(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// The Fisher-Z matrix as a dense B×K matrix for model fitting.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.cols(), |b, k| self.values[b][k])
    }

    /// Mean raw correlation of one band row.
    pub fn mean_raw(&self, band: usize) -> f64 {
        let row = &self.raw[band];
        row.iter().sum::<f64>() / row.len() as f64
    }
}

// ── sequence preparation ──

/// A sequence after preprocessing, transforming, and band packing: for every
/// window and band, the complex coefficients on that band's bins. Feature
/// assembly against another prepared sequence is then only dot products.
#[derive(Clone, Debug)]
pub struct PreparedSequence {
    label: String,
    role: Role,
    mirrored: bool,
    bands: BandSet,
    /// `packed[k][b]` holds the band-b coefficients of window k.
    packed: Vec<Vec<Vec<Complex64>>>,
    lines: Vec<usize>,
}

impl PreparedSequence {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn mirrored(&self) -> bool {
        self.mirrored
    }

    pub fn windows(&self) -> usize {
        self.packed.len()
    }
}

/// Runs the preprocessing chain on every window of a sequence and packs the
/// band coefficients. `mirror` applies the configured mirror axis first, so
/// a prepared tip can be compared against an unmirrored base.
pub fn prepare_sequence(
    seq: &ImageSequence,
    mirror: bool,
    bands: &BandSet,
    options: &PreprocessOptions,
    blur: bool,
) -> Result<PreparedSequence> {
    let context = |k: usize| format!("{}/{} window {}", seq.label, seq.role, k);
    let mut packed = Vec::with_capacity(seq.len());
    let mut bin_sets: Vec<Vec<usize>> = Vec::new();
    let mut lines = Vec::new();
    for (k, img) in seq.images.iter().enumerate() {
        let mut map = if mirror { img.mirrored(options.mirror_axis) } else { img.clone() };
        map = map.remove_tilt();
        if options.despike {
            map = map
                .remove_spikes(options.spike_radius, options.spike_k)
                .map_err(|e| e.with_context(context(k)))?
                .0;
        }
        let tapered = spectral::taper_window(&map, options.taper_fraction)
            .map_err(|e| e.with_context(context(k)))?;
        let mut spec = spectral::fft2(&tapered).map_err(|e| e.with_context(context(k)))?;
        if blur {
            spec = spectral::blur_spectrum(&spec);
        }
        if k == 0 {
            let (fx, fy) = spec.freq_resolution();
            for band in bands.bands() {
                let bins = annulus_bins(spec.width(), spec.height(), fx, fy, band.lo, band.hi);
                if bins.is_empty() {
                    return Err(Error::EmptyBand {
                        lo: band.lo,
                        hi: band.hi,
                        width: spec.width(),
                        height: spec.height(),
                    }
                    .with_context(context(k)));
                }
                lines.push(lines_estimate(bins.len()));
                bin_sets.push(bins);
            }
        }
        packed.push(
            bin_sets
                .iter()
                .map(|bins| bins.iter().map(|&i| spec.coeffs[i]).collect())
                .collect(),
        );
    }
    Ok(PreparedSequence {
        label: seq.label.clone(),
        role: seq.role,
        mirrored: mirror,
        bands: bands.clone(),
        packed,
        lines,
    })
}

fn assemble(
    pair_id: String,
    truth: Truth,
    left: &PreparedSequence,
    right: &PreparedSequence,
) -> Result<FeatureMatrix> {
    if left.bands != right.bands {
        return Err(Error::DimensionMismatch(format!(
            "band sets differ between prepared sequences for {pair_id}"
        )));
    }
    if left.windows() != right.windows() {
        return Err(Error::DimensionMismatch(format!(
            "{pair_id}: {} windows vs {}",
            left.windows(),
            right.windows()
        )));
    }
    let (b_count, k_count) = (left.bands.len(), left.windows());
    let mut values = vec![vec![0.0; k_count]; b_count];
    let mut raw = vec![vec![0.0; k_count]; b_count];
    let mut zero_energy_cells = 0;
    for k in 0..k_count {
        for b in 0..b_count {
            let (lp, rp) = (&left.packed[k][b], &right.packed[k][b]);
            if lp.len() != rp.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{pair_id}: band {b} packs {} bins on the left, {} on the right",
                    lp.len(),
                    rp.len()
                )));
            }
            let (r, zero) = correlate_packed(lp, rp);
            if zero {
                zero_energy_cells += 1;
            }
            raw[b][k] = r;
            values[b][k] = spectral::fisher_z(r);
        }
    }
    Ok(FeatureMatrix {
        pair_id,
        truth,
        bands: left.bands.clone(),
        values,
        raw,
        lines: left.lines.clone(),
        zero_energy_cells,
    })
}

/// Builds the feature matrix for one pair. See the module docs for the
/// exact window pipeline.
pub fn build_feature(
    pair: &SurfacePair,
    bands: &BandSet,
    options: &PreprocessOptions,
    blur: bool,
) -> Result<FeatureMatrix> {
    let left = prepare_sequence(&pair.left, false, bands, options, blur)?;
    let right = prepare_sequence(&pair.right, pair.mirror_right, bands, options, blur)?;
    assemble(pair.id(), pair.truth, &left, &right)
}

/// Builds feature matrices for many pairs, preparing each distinct sequence
/// once. Results are in pair order and bit-identical to calling
/// [`build_feature`] on each pair.
pub fn build_features(
    pairs: &[SurfacePair],
    bands: &BandSet,
    options: &PreprocessOptions,
    blur: bool,
) -> Result<Vec<FeatureMatrix>> {
    let mut jobs: HashMap<(usize, bool), Arc<ImageSequence>> = HashMap::new();
    for pair in pairs {
        jobs.entry((Arc::as_ptr(&pair.left) as usize, false))
            .or_insert_with(|| pair.left.clone());
        jobs.entry((Arc::as_ptr(&pair.right) as usize, pair.mirror_right))
            .or_insert_with(|| pair.right.clone());
    }
    let prepared: HashMap<(usize, bool), PreparedSequence> = jobs
        .into_par_iter()
        .map(|((ptr, mirror), seq)| {
            prepare_sequence(&seq, mirror, bands, options, blur).map(|p| ((ptr, mirror), p))
        })
        .collect::<Result<_>>()?;
    pairs
        .par_iter()
        .map(|pair| {
            let left = &prepared[&(Arc::as_ptr(&pair.left) as usize, false)];
            let right = &prepared[&(Arc::as_ptr(&pair.right) as usize, pair.mirror_right)];
            assemble(pair.id(), pair.truth, left, right)
        })
        .collect()
}

// ── enumeration ──

/// Enumerates all match and non-match pairs between two sets of surfaces.
///
/// Both sides must carry the same rod labels (in any order) and the stated
/// roles. The result holds the N same-label pairs marked `Match` followed by
/// the N·(N−1) ordered cross pairs marked `NonMatch`.
pub fn enumerate_pairs(
    left: &[Arc<ImageSequence>],
    right: &[Arc<ImageSequence>],
    left_role: Role,
    right_role: Role,
) -> Result<Vec<SurfacePair>> {
    let kind = PairKind::from_roles(left_role, right_role)?;
    if left.len() != right.len() {
        return Err(Error::param(
            "surfaces",
            format!("{} surfaces on the left, {} on the right", left.len(), right.len()),
        ));
    }
    let n = left.len();
    if n < 2 {
        return Err(Error::param("surfaces", "need at least two surfaces per side"));
    }
    for (side, set, role) in [("left", left, left_role), ("right", right, right_role)] {
        for seq in set.iter() {
            if seq.role != role {
                return Err(Error::param(
                    "surfaces",
                    format!("{side} sequence {} has role {}, expected {role}", seq.label, seq.role),
                ));
            }
        }
    }
    let mut left_labels: Vec<&str> = left.iter().map(|s| s.label.as_str()).collect();
    let mut right_labels: Vec<&str> = right.iter().map(|s| s.label.as_str()).collect();
    left_labels.sort_unstable();
    right_labels.sort_unstable();
    if left_labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::param("surfaces", "duplicate label on the left side"));
    }
    if right_labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::param("surfaces", "duplicate label on the right side"));
    }
    if left_labels != right_labels {
        return Err(Error::param("surfaces", "label sets differ between sides"));
    }
    let by_label: HashMap<&str, &Arc<ImageSequence>> =
        right.iter().map(|s| (s.label.as_str(), s)).collect();
    let mut out = Vec::with_capacity(n * n);
    for l in left {
        let r = by_label[l.label.as_str()];
        out.push(SurfacePair::new(l.clone(), r.clone(), kind)?.with_truth(Truth::Match));
    }
    for l in left {
        for other in left {
            if other.label == l.label {
                continue;
            }
            let r = by_label[other.label.as_str()];
            out.push(SurfacePair::new(l.clone(), r.clone(), kind)?.with_truth(Truth::NonMatch));
        }
    }
    Ok(out)
}

// ── CSV export ──

/// Serializes feature matrices to CSV: `pair_id,truth`, then the B×K values
/// in column-major order (all bands of window 0, then window 1, ...). All
/// matrices must share the same shape and bands.
pub fn features_to_csv(features: &[FeatureMatrix]) -> Result<String> {
    let first = features
        .first()
        .ok_or_else(|| Error::param("features", "nothing to serialize"))?;
    let (b_count, k_count) = (first.rows(), first.cols());
    let mut out = String::from("pair_id,truth");
    for k in 0..k_count {
        for b in 0..b_count {
            out.push_str(&format!(",z_b{b}_k{k}"));
        }
    }
    out.push('\n');
    for f in features {
        if f.rows() != b_count || f.cols() != k_count || f.bands != first.bands {
            return Err(Error::DimensionMismatch(format!(
                "feature {} is {}x{}, expected {}x{}",
                f.pair_id,
                f.rows(),
                f.cols(),
                b_count,
                k_count
            )));
        }
        out.push_str(&f.pair_id);
        out.push(',');
        out.push_str(&f.truth.to_string());
        for k in 0..k_count {
            for b in 0..b_count {
                out.push_str(&format!(",{}", f.values[b][k]));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

// ── tests ──
