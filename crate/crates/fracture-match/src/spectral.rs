//! Frequency-domain machinery: tapering, 2D FFTs, banded spectral
//! correlations, the Fisher-Z transform, spectral blurring, and the
//! height-height saturation statistic.
//!
//! Comparisons live on annular bands of radial spatial frequency, expressed
//! in cycles per millimeter (mm^-1). For a `w`-pixel window at pitch `p` um
//! the frequency grid has `1000 / (w * p)` mm^-1 per line along x, and the
//! same formula with the height along y, so anisotropic grids get exact
//! per-axis resolutions. A band `[lo, hi)` selects every non-DC bin whose
//! radial frequency falls inside it, over the full double-sided spectrum.
//!
//! The banded correlation of two spectra `A`, `B` is
//! `Re(sum A_k * conj(B_k)) / (||A|| * ||B||)` over the selected bins, which
//! equals the Pearson correlation of the two band-pass filtered real-space
//! images (Parseval); the test suite holds both routes to 1e-6.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heightmap::HeightMap;

/// Correlations are clamped to `1 - FISHER_CLAMP` in magnitude before the
/// Fisher-Z transform so that perfect correlations stay finite.
pub const FISHER_CLAMP: f64 = 1e-7;

/// Smallest image side the spectral operations accept.
pub const MIN_SPECTRAL_SIDE: usize = 8;

// ── windows and transforms ──────────────────────────────────────────────

/// Applies a separable tapered-cosine (Tukey) window.
///
/// Along each axis the weight is 1 in the interior and rolls off to exactly
/// 0 at the border with a raised-cosine shape over the outer `edge_fraction`
/// of the axis. `edge_fraction = 0.5` leaves no flat interior: the window
/// becomes a full Hann window.
pub fn taper_window(m: &HeightMap, edge_fraction: f64) -> Result<HeightMap> {
    if !(edge_fraction > 0.0 && edge_fraction <= 0.5) {
        return Err(Error::param(
            "edge_fraction",
            format!("taper fraction must be in (0, 0.5], got {edge_fraction}"),
        ));
    }
    check_spectral_size(m)?;
    let wx = taper_weights(m.width(), edge_fraction);
    let wy = taper_weights(m.height(), edge_fraction);
    let mut out = m.clone();
    let w = m.width();
    let data = out.heights_mut();
    for y in 0..m.height() {
        for x in 0..w {
            data[y * w + x] *= wx[x] * wy[y];
        }
    }
    Ok(out)
}

/// 1D tapered-cosine weights on `n` samples with per-side taper `edge`.
fn taper_weights(n: usize, edge: f64) -> Vec<f64> {
    let last = (n - 1) as f64;
    let t = edge * last;
    (0..n)
        .map(|i| {
            let x = i as f64;
            if x < t {
                0.5 * (1.0 - (PI * x / t).cos())
            } else if x > last - t {
                0.5 * (1.0 - (PI * (last - x) / t).cos())
            } else {
                1.0
            }
        })
        .collect()
}

fn check_spectral_size(m: &HeightMap) -> Result<()> {
    if m.width() < MIN_SPECTRAL_SIDE || m.height() < MIN_SPECTRAL_SIDE {
        return Err(Error::ImageTooSmall {
            width: m.width(),
            height: m.height(),
            min: MIN_SPECTRAL_SIDE,
        });
    }
    Ok(())
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place unnormalized 2D transform, rows then columns.
pub(crate) fn fft2_complex(data: &mut [Complex64], w: usize, h: usize, inverse: bool) {
    debug_assert_eq!(data.len(), w * h);
    let row_fft = plan(w, inverse);
    let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(w) {
        row_fft.process_with_scratch(row, &mut scratch);
    }
    let col_fft = plan(h, inverse);
    scratch.resize(col_fft.get_inplace_scratch_len().max(1), Complex64::default());
    let mut col = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        col_fft.process_with_scratch(&mut col, &mut scratch);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
}

/// The unnormalized 2D discrete Fourier transform of a height map.
///
/// Coefficients are stored row-major in standard FFT order: bin `(0, 0)` is
/// the DC term and holds the plain sum of all heights.
#[derive(Debug, Clone)]
pub struct Spectrum {
    width: usize,
    height: usize,
    pitch_um: f64,
    label: String,
    pub coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pitch_um(&self) -> f64 {
        self.pitch_um
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Frequency grid resolution in mm^-1 per line, (x, y).
    pub fn freq_resolution(&self) -> (f64, f64) {
        (
            1000.0 / (self.width as f64 * self.pitch_um),
            1000.0 / (self.height as f64 * self.pitch_um),
        )
    }

    /// Radial frequency (mm^-1) of the bin at `(ix, iy)`.
    pub fn bin_frequency(&self, ix: usize, iy: usize) -> f64 {
        let (fx, fy) = self.freq_resolution();
        let kx = signed_index(ix, self.width) as f64 * fx;
        let ky = signed_index(iy, self.height) as f64 * fy;
        kx.hypot(ky)
    }
}

#[inline]
pub(crate) fn signed_index(i: usize, n: usize) -> isize {
    if i <= n / 2 {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// Forward transform of a height map. Unnormalized; see [`Spectrum`].
pub fn fft2(m: &HeightMap) -> Result<Spectrum> {
    check_spectral_size(m)?;
    let mut coeffs: Vec<Complex64> =
        m.heights().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_complex(&mut coeffs, m.width(), m.height(), false);
    Ok(Spectrum {
        width: m.width(),
        height: m.height(),
        pitch_um: m.pitch_um(),
        label: m.label().to_string(),
        coeffs,
    })
}

/// Inverse transform back to a height map, with the usual `1/(w*h)`
/// normalization. Imaginary residue is dropped.
pub fn ifft2(spec: &Spectrum) -> Result<HeightMap> {
    let mut data = spec.coeffs.clone();
    fft2_complex(&mut data, spec.width, spec.height, true);
    let n = (spec.width * spec.height) as f64;
    let heights: Vec<f64> = data.iter().map(|c| c.re / n).collect();
    HeightMap::from_vec(spec.label.clone(), spec.width, spec.height, spec.pitch_um, heights)
}

// ── frequency bands ─────────────────────────────────────────────────────

/// One annular band of radial frequency, `[lo, hi)` in mm^-1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

/// An ordered list of contiguous annular bands built from thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    bands: Vec<Band>,
}

impl BandSet {
    /// Bands between consecutive thresholds: `[t0, t1), [t1, t2), ...`.
    ///
    /// Thresholds must be finite, positive and strictly increasing, and at
    /// least two are needed.
    pub fn from_thresholds(thresholds: &[f64]) -> Result<Self> {
        if thresholds.len() < 2 {
            return Err(Error::param("thresholds", "need at least two thresholds to form a band"));
        }
        for pair in thresholds.windows(2) {
            if !(pair[0].is_finite() && pair[0] > 0.0 && pair[1].is_finite()) {
                return Err(Error::param(
                    "thresholds",
                    format!("thresholds must be finite and positive, got {pair:?}"),
                ));
            }
            if pair[1] <= pair[0] {
                return Err(Error::param(
                    "thresholds",
                    format!("thresholds must be strictly increasing, got {} then {}", pair[0], pair[1]),
                ));
            }
        }
        let bands = thresholds.windows(2).map(|p| Band { lo: p[0], hi: p[1] }).collect();
        Ok(BandSet { bands })
    }

    /// The two discrimination bands used for classification, 5-10 and
    /// 10-20 mm^-1.
    pub fn classification() -> Self {
        BandSet::from_thresholds(&[5.0, 10.0, 20.0]).unwrap()
    }

    /// The ten survey bands spanning 3 to 200 mm^-1.
    pub fn survey_ten() -> Self {
        BandSet::from_thresholds(&[3.0, 5.0, 10.0, 20.0, 25.0, 33.0, 50.0, 67.0, 100.0, 133.0, 200.0])
            .unwrap()
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// The threshold list this set was built from.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.bands.iter().map(|b| b.lo).collect();
        if let Some(last) = self.bands.last() {
            t.push(last.hi);
        }
        t
    }
}

/// Indices of all non-DC bins whose radial frequency lies in `[lo, hi)`.
pub(crate) fn annulus_bins(
    w: usize,
    h: usize,
    fx_res: f64,
    fy_res: f64,
    lo: f64,
    hi: f64,
) -> Vec<usize> {
    let mut bins = Vec::new();
    for iy in 0..h {
        let ky = signed_index(iy, h) as f64 * fy_res;
        for ix in 0..w {
            if ix == 0 && iy == 0 {
                continue;
            }
            let kx = signed_index(ix, w) as f64 * fx_res;
            let f = kx.hypot(ky);
            if f >= lo && f < hi {
                bins.push(iy * w + ix);
            }
        }
    }
    bins
}

/// Normalized correlation over a packed list of complex bins.
///
/// Returns `(r, zero_energy)`; when either side has no energy in the band
/// the correlation is defined as 0 and flagged.
pub(crate) fn correlate_packed(a: &[Complex64], b: &[Complex64]) -> (f64, bool) {
    debug_assert_eq!(a.len(), b.len());
    let mut num = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += x.re * y.re + x.im * y.im; // Re(x * conj(y))
        na += x.norm_sqr();
        nb += y.norm_sqr();
    }
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): one rounding instead
    // of two, and self-correlation comes out as exactly 1.
    ((num / (na * nb).sqrt()).clamp(-1.0, 1.0), false)
}

/// A banded spectral correlation with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCorrelation {
    /// Normalized correlation in `[-1, 1]`.
    pub r: f64,
    /// Number of spectral bins the band selected.
    pub bins: usize,
    /// Independent frequency lines, estimated as a quarter of the selected
    /// bins (the double-sided annulus counts each line four times over).
    pub lines: usize,
    /// Set when the band offers fewer than 4 frequency lines.
    pub sparse: bool,
    /// Set when either spectrum carried no energy in the band; `r` is 0.
    pub zero_energy: bool,
}

/// Correlates two spectra over the annular band `[lo, hi)` mm^-1.
///
/// Both spectra must share dimensions and pitch. The correlation is
/// invariant to multiplying either height map by a positive constant.
pub fn band_correlation(a: &Spectrum, b: &Spectrum, lo: f64, hi: f64) -> Result<BandCorrelation> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "spectra are {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.pitch_um != b.pitch_um {
        return Err(Error::DimensionMismatch(format!(
            "pixel pitches differ: {} um vs {} um",
            a.pitch_um, b.pitch_um
        )));
    }
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo) {
        return Err(Error::param("band", format!("invalid band [{lo}, {hi})")));
    }
    let (fx, fy) = a.freq_resolution();
    let bins = annulus_bins(a.width, a.height, fx, fy, lo, hi);
    if bins.is_empty() {
        return Err(Error::EmptyBand { lo, hi, width: a.width, height: a.height });
    }
    let av: Vec<Complex64> = bins.iter().map(|&k| a.coeffs[k]).collect();
    let bv: Vec<Complex64> = bins.iter().map(|&k| b.coeffs[k]).collect();
    let (r, zero_energy) = correlate_packed(&av, &bv);
    let lines = lines_estimate(bins.len());
    Ok(BandCorrelation { r, bins: bins.len(), lines, sparse: lines < 4, zero_energy })
}

/// Quarter-plane estimate of independent frequency lines in a band.
pub(crate) fn lines_estimate(bins: usize) -> usize {
    ((bins as f64) / 4.0).round() as usize
}

/// Band-pass filters a height map: all bins outside `[lo, hi)` are zeroed
/// and the map is transformed back. The result has zero mean since DC is
/// never inside a band.
pub fn band_filter(m: &HeightMap, lo: f64, hi: f64) -> Result<HeightMap> {
    let spec = fft2(m)?;
    let (fx, fy) = spec.freq_resolution();
    let keep = annulus_bins(spec.width, spec.height, fx, fy, lo, hi);
    if keep.is_empty() {
        return Err(Error::EmptyBand { lo, hi, width: spec.width, height: spec.height });
    }
    let mut filtered = Spectrum {
        coeffs: vec![Complex64::default(); spec.coeffs.len()],
        ..spec.clone()
    };
    for k in keep {
        filtered.coeffs[k] = spec.coeffs[k];
    }
    ifft2(&filtered)
}

// ── Fisher-Z ────────────────────────────────────────────────────────────

/// The Fisher-Z transform `atanh(r)`, clamped so `|r| = 1` maps to the
/// finite value `atanh(1 - 1e-7)` (about 8.4056) instead of infinity.
pub fn fisher_z(r: f64) -> f64 {
    r.clamp(-(1.0 - FISHER_CLAMP), 1.0 - FISHER_CLAMP).atanh()
}

/// Inverse of [`fisher_z`] away from the clamp.
pub fn fisher_z_inv(z: f64) -> f64 {
    z.tanh()
}

// ── spectral blur ───────────────────────────────────────────────────────

/// Convolves the complex spectrum with a 3x3 uniform kernel (weight 1/9),
/// wrapping periodically at the grid edges. The coefficient sum is
/// preserved.
pub fn blur_spectrum(spec: &Spectrum) -> Spectrum {
    let w = spec.width;
    let h = spec.height;
    let mut out = spec.clone();
    for iy in 0..h {
        let ym = if iy == 0 { h - 1 } else { iy - 1 };
        let yp = if iy + 1 == h { 0 } else { iy + 1 };
        for ix in 0..w {
            let xm = if ix == 0 { w - 1 } else { ix - 1 };
            let xp = if ix + 1 == w { 0 } else { ix + 1 };
            let mut acc = Complex64::default();
            for yy in [ym, iy, yp] {
                acc += spec.coeffs[yy * w + xm];
                acc += spec.coeffs[yy * w + ix];
                acc += spec.coeffs[yy * w + xp];
            }
            out.coeffs[iy * w + ix] = acc / 9.0;
        }
    }
    out
}

// ── height-height saturation ────────────────────────────────────────────

/// The height-difference statistic and the saturation scale read off it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationCurve {
    /// `(window size um, normalized height difference)`, normalized by the
    /// value at the largest window.
    pub points: Vec<(f64, f64)>,
    /// Smallest window size where the local log-log slope drops below 0.1.
    /// `None` when the curve never flattens inside the probed range.
    pub saturation_scale_um: Option<f64>,
    /// Set when the statistic vanishes (e.g. a flat surface) and no scale
    /// can be defined.
    pub degenerate: bool,
}

/// Computes `sqrt(mean (h(x+L) - h(x))^2)` over all in-bounds horizontal
/// pairs for each window size `L`, normalized at the largest window.
///
/// The saturation scale is the smallest probed window where the local
/// log-log slope of the curve falls below 0.1; self-affine surfaces rise
/// with slope near their Hurst exponent until the correlation length, then
/// flatten.
pub fn height_height_saturation(m: &HeightMap, window_sizes_um: &[f64]) -> Result<SaturationCurve> {
    if window_sizes_um.len() < 2 {
        return Err(Error::param("window_sizes_um", "need at least two window sizes"));
    }
    for pair in window_sizes_um.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::param("window_sizes_um", "window sizes must be strictly increasing"));
        }
    }
    let w = m.width();
    let mut lags = Vec::with_capacity(window_sizes_um.len());
    for &size in window_sizes_um {
        if !(size.is_finite() && size > 0.0) {
            return Err(Error::param("window_sizes_um", format!("invalid window size {size}")));
        }
        let lag = (size / m.pitch_um()).round() as usize;
        if lag < 4 {
            return Err(Error::param(
                "window_sizes_um",
                format!("window {size} um is under 4 pixels at {} um pitch", m.pitch_um()),
            ));
        }
        if lag >= w {
            return Err(Error::param(
                "window_sizes_um",
                format!("window {size} um exceeds the {w}-pixel image width"),
            ));
        }
        lags.push(lag);
    }

    let mut deltas = Vec::with_capacity(lags.len());
    for &lag in &lags {
        let mut acc = 0.0;
        let mut n = 0usize;
        for y in 0..m.height() {
            for x in 0..w - lag {
                let d = m.at(x + lag, y) - m.at(x, y);
                acc += d * d;
                n += 1;
            }
        }
        deltas.push((acc / n as f64).sqrt());
    }

    let last = *deltas.last().unwrap();
    if last == 0.0 || deltas.iter().any(|&d| d == 0.0) {
        let points = window_sizes_um.iter().map(|&s| (s, 0.0)).collect();
        return Ok(SaturationCurve { points, saturation_scale_um: None, degenerate: true });
    }
    let points: Vec<(f64, f64)> =
        window_sizes_um.iter().zip(&deltas).map(|(&s, &d)| (s, d / last)).collect();

    let mut saturation = None;
    for i in 0..deltas.len() - 1 {
        let slope = (deltas[i + 1].ln() - deltas[i].ln())
            / (window_sizes_um[i + 1].ln() - window_sizes_um[i].ln());
        if slope < 0.1 {
            saturation = Some(window_sizes_um[i]);
            break;
        }
    }
    Ok(SaturationCurve { points, saturation_scale_um: saturation, degenerate: false })
}
