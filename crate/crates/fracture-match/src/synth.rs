//! Synthetic fracture surfaces with known ground truth.
//!
//! Real fractured rods come in matched base/tip pairs whose faces share
//! topography up to the resolution limit of the fracture mechanics, while
//! unrelated faces share nothing. This module reproduces that structure on
//! demand: self-affine random surfaces built in the frequency domain, where a
//! base and its tip share all Fourier content below a chosen split frequency
//! and carry independent content above it. Tips are emitted mirrored, the way
//! a tip faces the microscope after the rod is turned around. A simulated
//! cast ("replica") of a tip can be derived by low-pass filtering, optionally
//! with air-bubble defects subtracted, and whole corpora of rods can be
//! generated, written to disk and read back.
//!
//! Heights are in micrometers throughout, frequencies in mm^-1.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heightmap::{Axis, HeightMap, ImageSequence, Role};
use crate::spectral::{self, fft2, ifft2};

// ── configuration ───────────────────────────────────────────────────────

/// Air-bubble defects pressed into a simulated replica.
///
/// Each bubble is a smooth radially symmetric depression subtracted from the
/// surface. Diameters are drawn uniformly from `[min_diameter_um,
/// max_diameter_um]`, which must stay inside the 70-200 um range where such
/// casting defects actually occur.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleConfig {
    /// Number of bubbles per replica.
    pub count: usize,
    /// Smallest bubble diameter, um. At least 70.
    pub min_diameter_um: f64,
    /// Largest bubble diameter, um. At most 200.
    pub max_diameter_um: f64,
    /// Depth of the depression at the bubble center, um.
    pub depth_um: f64,
}

/// Allowed bubble diameter range, um.
pub const BUBBLE_DIAMETER_RANGE_UM: (f64, f64) = (70.0, 200.0);

/// Parameters of the synthetic surface generator.
///
/// The defaults describe a desk-scale steel rod fracture imaged at high
/// magnification: a 3584 x 1024 px strip at 0.625 um pitch yields six
/// 1024 px windows at 50% overlap spanning about 2.2 mm of surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Strip width in pixels.
    pub strip_width: usize,
    /// Strip height in pixels; corpus windows are squares of this side.
    pub strip_height: usize,
    /// Pixel pitch, um.
    pub pitch_um: f64,
    /// Self-affinity (roughness) exponent, strictly between 0 and 1.
    pub hurst: f64,
    /// Radial frequency below which base and tip share identical content,
    /// mm^-1. The transition from shared to independent content is a smooth
    /// one-octave cross-fade ending at this frequency.
    pub split_frequency: f64,
    /// Target root-mean-square height of each generated strip, um.
    pub rms_height: f64,
    /// Shortest wavelength a simulated cast reproduces, um. Wavelengths are
    /// fully transmitted above twice this value and fully suppressed below
    /// it. Must be at least twice the pitch; exactly twice the pitch makes
    /// the cast a perfect copy.
    pub replica_cutoff_wavelength: f64,
    /// Bubble defects to press into replicas; `None` for defect-free casts.
    pub bubbles: Option<BubbleConfig>,
    /// Wavelength above which surface amplitude stops growing, um. `None`
    /// for a pure power law across the whole strip.
    pub rolloff_wavelength: Option<f64>,
    /// RMS of white acquisition noise added to every corpus image, um.
    /// Models the independent per-acquisition error of the profilometer.
    pub noise_rms: f64,
    /// Seed for all randomness derived from this configuration.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            strip_width: 3584,
            strip_height: 1024,
            pitch_um: 0.625,
            hurst: 0.8,
            split_frequency: 50.0,
            rms_height: 10.0,
            replica_cutoff_wavelength: 20.0,
            bubbles: None,
            rolloff_wavelength: None,
            noise_rms: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Nyquist frequency of the pixel grid, mm^-1.
    pub fn nyquist(&self) -> f64 {
        1000.0 / (2.0 * self.pitch_um)
    }

    /// Checks every field for consistency.
    pub fn validate(&self) -> Result<()> {
        if self.strip_width < spectral::MIN_SPECTRAL_SIDE
            || self.strip_height < spectral::MIN_SPECTRAL_SIDE
        {
            return Err(Error::ImageTooSmall {
                width: self.strip_width,
                height: self.strip_height,
                min: spectral::MIN_SPECTRAL_SIDE,
            });
        }
        if !(self.pitch_um.is_finite() && self.pitch_um > 0.0) {
            return Err(Error::NonPositivePitch(self.pitch_um));
        }
        if !(self.hurst.is_finite() && self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::param(
                "hurst",
                format!("roughness exponent must lie strictly in (0, 1), got {}", self.hurst),
            ));
        }
        if !(self.split_frequency.is_finite() && self.split_frequency > 0.0) {
            return Err(Error::param(
                "split_frequency",
                format!("split frequency must be positive, got {}", self.split_frequency),
            ));
        }
        if self.split_frequency >= self.nyquist() {
            return Err(Error::param(
                "split_frequency",
                format!(
                    "split frequency {} mm^-1 is at or above the Nyquist limit {} mm^-1 of a {} um pitch",
                    self.split_frequency,
                    self.nyquist(),
                    self.pitch_um
                ),
            ));
        }
        if !(self.rms_height.is_finite() && self.rms_height > 0.0) {
            return Err(Error::param(
                "rms_height",
                format!("target RMS height must be positive, got {}", self.rms_height),
            ));
        }
        if !(self.replica_cutoff_wavelength.is_finite()
            && self.replica_cutoff_wavelength >= 2.0 * self.pitch_um)
        {
            return Err(Error::param(
                "replica_cutoff_wavelength",
                format!(
                    "cutoff wavelength {} um is below twice the pitch ({} um); the cast would need frequencies above Nyquist",
                    self.replica_cutoff_wavelength,
                    2.0 * self.pitch_um
                ),
            ));
        }
        if let Some(l) = self.rolloff_wavelength {
            if !(l.is_finite() && l > 2.0 * self.pitch_um) {
                return Err(Error::param(
                    "rolloff_wavelength",
                    format!("roll-off wavelength must exceed twice the pitch, got {l}"),
                ));
            }
        }
        if !(self.noise_rms.is_finite() && self.noise_rms >= 0.0) {
            return Err(Error::param(
                "noise_rms",
                format!("noise RMS must be non-negative, got {}", self.noise_rms),
            ));
        }
        if let Some(b) = &self.bubbles {
            let (lo, hi) = BUBBLE_DIAMETER_RANGE_UM;
            if b.count == 0 {
                return Err(Error::param("bubbles", "bubble count must be at least one"));
            }
            if !(b.min_diameter_um >= lo
                && b.min_diameter_um <= b.max_diameter_um
                && b.max_diameter_um <= hi)
            {
                return Err(Error::param(
                    "bubbles",
                    format!(
                        "bubble diameters must satisfy {lo} <= min <= max <= {hi} um, got [{}, {}]",
                        b.min_diameter_um, b.max_diameter_um
                    ),
                ));
            }
            if !(b.depth_um.is_finite() && b.depth_um > 0.0) {
                return Err(Error::param(
                    "bubbles",
                    format!("bubble depth must be positive, got {}", b.depth_um),
                ));
            }
        }
        Ok(())
    }
}

// ── spectral synthesis ──────────────────────────────────────────────────

/// Amplitude envelope of a self-affine surface at radial frequency `f`.
///
/// Proportional to `f^-(1+H)`, which gives height differences growing as
/// `L^H` with the lag. When a roll-off frequency is set the envelope stays
/// flat below it, so amplitude stops accumulating at longer wavelengths.
fn spectral_amplitude(f: f64, hurst: f64, f_roll: Option<f64>) -> f64 {
    if f <= 0.0 {
        return 0.0; // no DC component
    }
    let f_eff = match f_roll {
        Some(fr) if f < fr => fr,
        _ => f,
    };
    f_eff.powf(-(1.0 + hurst))
}

/// Cross-fade between shared and independent content around the split.
///
/// Returns `(shared, independent)` weights with `shared^2 + independent^2 =
/// 1`: content is fully shared up to half the split frequency, fully
/// independent from the split frequency upward, blended over the one octave
/// in between.
fn split_weights(f: f64, f_split: f64) -> (f64, f64) {
    let lo_edge = 0.5 * f_split;
    if f <= lo_edge {
        (1.0, 0.0)
    } else if f >= f_split {
        (0.0, 1.0)
    } else {
        let x = (f / lo_edge).log2(); // 0..1 across the octave
        let phase = 0.5 * PI * x;
        (phase.cos(), phase.sin())
    }
}

fn white_field(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect()
}

/// Builds one matched pair of strips, both in the base's orientation.
///
/// Three independent white fields are transformed to the frequency domain,
/// shaped by the self-affine envelope and combined: base and tip take the
/// same shared field below the split and their own private field above it.
/// Shaping multiplies FFTs of real fields by real radial factors, so
/// conjugate symmetry survives and the inverse transforms are real.
fn synthesize(cfg: &SynthConfig, seed: u64) -> Result<(HeightMap, HeightMap)> {
    let (w, h) = (cfg.strip_width, cfg.strip_height);
    let n = w * h;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shared = white_field(n, &mut rng);
    let mut base_own = white_field(n, &mut rng);
    let mut tip_own = white_field(n, &mut rng);
    spectral::fft2_complex(&mut shared, w, h, false);
    spectral::fft2_complex(&mut base_own, w, h, false);
    spectral::fft2_complex(&mut tip_own, w, h, false);

    let fx = 1000.0 / (w as f64 * cfg.pitch_um);
    let fy = 1000.0 / (h as f64 * cfg.pitch_um);
    let f_roll = cfg.rolloff_wavelength.map(|l| 1000.0 / l);
    let mut base = vec![Complex64::new(0.0, 0.0); n];
    let mut tip = vec![Complex64::new(0.0, 0.0); n];
    for iy in 0..h {
        let ky = spectral::signed_index(iy, h) as f64 * fy;
        for ix in 0..w {
            let kx = spectral::signed_index(ix, w) as f64 * fx;
            let f = kx.hypot(ky);
            let a = spectral_amplitude(f, cfg.hurst, f_roll);
            if a == 0.0 {
                continue;
            }
            let (lo, hi) = split_weights(f, cfg.split_frequency);
            let idx = iy * w + ix;
            let common = shared[idx] * lo;
            base[idx] = (common + base_own[idx] * hi) * a;
            tip[idx] = (common + tip_own[idx] * hi) * a;
        }
    }

    spectral::fft2_complex(&mut base, w, h, true);
    spectral::fft2_complex(&mut tip, w, h, true);
    let inv_n = 1.0 / n as f64;
    let finish = |data: Vec<Complex64>, label: &str| -> Result<HeightMap> {
        let mut heights: Vec<f64> = data.into_iter().map(|c| c.re * inv_n).collect();
        let rms = (heights.iter().map(|v| v * v).sum::<f64>() * inv_n).sqrt();
        if !(rms > 0.0) {
            return Err(Error::param("rms_height", "generated field has zero variance"));
        }
        let scale = cfg.rms_height / rms;
        for v in &mut heights {
            *v *= scale;
        }
        HeightMap::from_vec(label, w, h, cfg.pitch_um, heights)
    };
    Ok((finish(base, "base")?, finish(tip, "tip")?))
}

/// Generates one matched base/tip strip pair.
///
/// The two strips share all Fourier content below the configured split
/// frequency (with a one-octave cross-fade) and are independent above it.
/// Both are normalized to the configured RMS height. The tip is returned
/// mirrored along the horizontal axis, the orientation in which a real tip
/// faces the instrument, so downstream comparison must mirror it back (the
/// feature pipeline does this automatically for [`Role::Tip`] sequences).
pub fn generate_pair(cfg: &SynthConfig) -> Result<(HeightMap, HeightMap)> {
    cfg.validate()?;
    let (base, tip_content) = synthesize(cfg, cfg.seed)?;
    let mut tip = tip_content.mirrored(Axis::Horizontal);
    tip.set_label("tip");
    Ok((base, tip))
}

// ── replicas ────────────────────────────────────────────────────────────

/// Transmission of the cast material at radial frequency `f`.
///
/// Unity up to the cutoff, zero beyond twice the cutoff, raised-cosine in
/// log-frequency across the octave in between.
fn replica_gain(f: f64, f_cut: f64) -> f64 {
    if f <= f_cut {
        1.0
    } else if f >= 2.0 * f_cut {
        0.0
    } else {
        0.5 * (1.0 + (PI * (f / f_cut).log2()).cos())
    }
}

/// FNV-1a of a label, used to give each replica its own bubble stream.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn subtract_bubbles(m: &mut HeightMap, bubbles: &BubbleConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let (w, h) = (m.width(), m.height());
    let pitch = m.pitch_um();
    for _ in 0..bubbles.count {
        let d_um = if bubbles.min_diameter_um == bubbles.max_diameter_um {
            bubbles.min_diameter_um
        } else {
            rng.gen_range(bubbles.min_diameter_um..=bubbles.max_diameter_um)
        };
        let r_px = d_um / (2.0 * pitch);
        if 2.0 * r_px >= w.min(h) as f64 {
            return Err(Error::param(
                "bubbles",
                format!(
                    "a {d_um} um bubble spans {:.0} px and does not fit a {w}x{h} px replica",
                    2.0 * r_px
                ),
            ));
        }
        let cx = rng.gen_range(r_px..w as f64 - r_px);
        let cy = rng.gen_range(r_px..h as f64 - r_px);
        let heights = m.heights_mut();
        let y0 = (cy - r_px).floor().max(0.0) as usize;
        let y1 = ((cy + r_px).ceil() as usize).min(h - 1);
        let x0 = (cx - r_px).floor().max(0.0) as usize;
        let x1 = ((cx + r_px).ceil() as usize).min(w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let r = (x as f64 - cx).hypot(y as f64 - cy);
                if r < r_px {
                    // smooth bowl: full depth at the center, zero slope at the rim
                    heights[y * w + x] -= bubbles.depth_um * 0.5 * (1.0 + (PI * r / r_px).cos());
                }
            }
        }
    }
    Ok(())
}

/// Simulates casting a surface in replica material.
///
/// The cast transmits wavelengths above `replica_cutoff_wavelength`
/// unchanged and loses shorter ones, with a one-octave raised-cosine
/// transition; a cutoff of exactly twice the pitch reproduces the input
/// bit for bit. Configured bubbles are subtracted afterwards, seeded from
/// the config seed and the input's label. The operation never flips the
/// surface: orientation is the caller's business (a physical cast faces
/// the instrument mirrored relative to the surface it was pulled from).
pub fn make_replica(tip: &HeightMap, cfg: &SynthConfig) -> Result<HeightMap> {
    cfg.validate()?;
    let pitch = tip.pitch_um();
    if cfg.replica_cutoff_wavelength < 2.0 * pitch {
        return Err(Error::param(
            "replica_cutoff_wavelength",
            format!(
                "cutoff wavelength {} um is below twice the {} um pitch of {}",
                cfg.replica_cutoff_wavelength,
                pitch,
                tip.label()
            ),
        ));
    }
    let f_cut = 1000.0 / cfg.replica_cutoff_wavelength;
    let nyquist = 1000.0 / (2.0 * pitch);
    let mut out = if f_cut >= nyquist {
        // every representable frequency passes untouched
        tip.clone()
    } else {
        let mut spec = fft2(tip)?;
        let (w, h) = (spec.width(), spec.height());
        let (fx, fy) = spec.freq_resolution();
        for iy in 0..h {
            let ky = spectral::signed_index(iy, h) as f64 * fy;
            for ix in 0..w {
                let kx = spectral::signed_index(ix, w) as f64 * fx;
                spec.coeffs[iy * w + ix] *= replica_gain(kx.hypot(ky), f_cut);
            }
        }
        ifft2(&spec)?
    };
    if let Some(bubbles) = &cfg.bubbles {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ label_hash(tip.label()));
        subtract_bubbles(&mut out, bubbles, &mut rng)?;
    }
    Ok(out)
}

// ── corpus generation ───────────────────────────────────────────────────

/// Everything needed to rebuild a corpus from its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    /// Generator settings the corpus was built from.
    pub config: SynthConfig,
    /// Number of fractured rods.
    pub n_rods: usize,
    /// Images per surface.
    pub k_images: usize,
    /// Window side, px.
    pub window: usize,
    /// Overlap fraction between neighboring windows.
    pub overlap: f64,
    /// Rod labels, in order.
    pub rods: Vec<String>,
}

/// A generated collection of rods: per rod one base, one tip and one
/// replica-of-tip image sequence, all positionally aligned.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub bases: Vec<Arc<ImageSequence>>,
    pub tips: Vec<Arc<ImageSequence>>,
    pub replicas: Vec<Arc<ImageSequence>>,
}

const NOISE_STREAM_BASE: u64 = 0x9e37_79b9_7f4a_7c15;
const NOISE_STREAM_TIP: u64 = 0xbf58_476d_1ce4_e5b9;
const NOISE_STREAM_REPLICA: u64 = 0x94d0_49bb_1331_11eb;

fn add_noise(images: &mut [HeightMap], rms: f64, seed: u64) {
    if rms <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for img in images {
        for v in img.heights_mut() {
            *v += rms * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn label_images(images: &mut [HeightMap], rod: &str, role: Role) {
    for (k, img) in images.iter_mut().enumerate() {
        img.set_label(format!("{rod}/{role}/img{k}"));
    }
}

fn build_rod(
    cfg: &SynthConfig,
    rod: &str,
    seed: u64,
    window: usize,
    k_images: usize,
    overlap: f64,
) -> Result<(Arc<ImageSequence>, Arc<ImageSequence>, Arc<ImageSequence>)> {
    let (mut base_strip, mut tip_content) = synthesize(cfg, seed)
        .map_err(|e| e.with_context(format!("generating {rod}")))?;
    base_strip.set_label(format!("{rod}/base"));
    tip_content.set_label(format!("{rod}/tip"));

    // The cast is pulled from the tip before the rod is turned around, so it
    // keeps the base's orientation; only the tip itself is emitted mirrored.
    let replica_strip = make_replica(&tip_content, cfg)?;
    let tip_strip = tip_content.mirrored(Axis::Horizontal);

    let mut base_windows = base_strip.extract_windows(window, k_images, overlap)?;
    let mut tip_windows = tip_strip.extract_windows(window, k_images, overlap)?;
    let mut replica_windows = replica_strip.extract_windows(window, k_images, overlap)?;
    // Window k of the mirrored tip strip shows the far end of the rod.
    // Reversing the list lines tip window k up with base window k, so
    // positional pairing compares the same physical patch of the fracture.
    tip_windows.reverse();

    label_images(&mut base_windows, rod, Role::Base);
    label_images(&mut tip_windows, rod, Role::Tip);
    label_images(&mut replica_windows, rod, Role::Replica);
    add_noise(&mut base_windows, cfg.noise_rms, seed ^ NOISE_STREAM_BASE);
    add_noise(&mut tip_windows, cfg.noise_rms, seed ^ NOISE_STREAM_TIP);
    add_noise(&mut replica_windows, cfg.noise_rms, seed ^ NOISE_STREAM_REPLICA);

    Ok((
        Arc::new(ImageSequence::from_images(rod, Role::Base, base_windows, overlap)?),
        Arc::new(ImageSequence::from_images(rod, Role::Tip, tip_windows, overlap)?),
        Arc::new(ImageSequence::from_images(rod, Role::Replica, replica_windows, overlap)?),
    ))
}

/// Generates a corpus of `n_rods` fractured rods with `k_images` overlapping
/// windows per surface.
///
/// Windows are squares of side `strip_height` at 50% overlap, and the strip
/// width must tile exactly (`window + (k_images - 1) * window / 2`): exact
/// tiling is what makes window `k` of every role cover the same physical
/// patch. Each rod gets its own seed derived from the config seed, so rods
/// are independent and any corpus is reproducible bit for bit. Acquisition
/// noise, when configured, is drawn independently per image, so overlapping
/// windows agree on the surface but not on the noise.
pub fn generate_corpus(cfg: &SynthConfig, n_rods: usize, k_images: usize) -> Result<Corpus> {
    cfg.validate()?;
    if n_rods == 0 {
        return Err(Error::param("n_rods", "need at least one rod"));
    }
    if k_images == 0 {
        return Err(Error::param("k_images", "need at least one image per surface"));
    }
    let window = cfg.strip_height;
    let overlap = ImageSequence::DEFAULT_OVERLAP;
    let stride = (window as f64 * (1.0 - overlap)).round() as usize;
    let needed = window + (k_images - 1) * stride;
    if cfg.strip_width != needed {
        return Err(Error::param(
            "strip_width",
            format!(
                "strip width must be exactly {needed} px for {k_images} windows of {window} px at 50% overlap, got {}",
                cfg.strip_width
            ),
        ));
    }

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rod_seeds: Vec<u64> = (0..n_rods).map(|_| master.gen()).collect();
    let rods: Vec<String> = (0..n_rods).map(|i| format!("rod{i:02}")).collect();
    let built: Result<Vec<_>> = rods
        .par_iter()
        .zip(rod_seeds.par_iter())
        .map(|(rod, &seed)| build_rod(cfg, rod, seed, window, k_images, overlap))
        .collect();

    let mut bases = Vec::with_capacity(n_rods);
    let mut tips = Vec::with_capacity(n_rods);
    let mut replicas = Vec::with_capacity(n_rods);
    for (b, t, r) in built? {
        bases.push(b);
        tips.push(t);
        replicas.push(r);
    }
    Ok(Corpus {
        manifest: CorpusManifest {
            config: cfg.clone(),
            n_rods,
            k_images,
            window,
            overlap,
            rods,
        },
        bases,
        tips,
        replicas,
    })
}

// ── corpus on disk ──────────────────────────────────────────────────────

const MANIFEST_NAME: &str = "manifest.json";

fn role_dir(role: Role) -> &'static str {
    match role {
        Role::Base => "base",
        Role::Tip => "tip",
        Role::Replica => "replica",
    }
}

fn write_sequence(seq: &ImageSequence, rod_dir: &Path) -> Result<()> {
    let dir = rod_dir.join(role_dir(seq.role));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (k, img) in seq.images.iter().enumerate() {
        img.save_binary(dir.join(format!("img{k}.hmap")))?;
    }
    Ok(())
}

/// Writes a corpus as a directory tree: `manifest.json` plus one
/// `rodNN/{base,tip,replica}/imgK.hmap` file per image.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, rod) in corpus.manifest.rods.iter().enumerate() {
        let rod_dir = dir.join(rod);
        write_sequence(&corpus.bases[i], &rod_dir)?;
        write_sequence(&corpus.tips[i], &rod_dir)?;
        write_sequence(&corpus.replicas[i], &rod_dir)?;
    }
    let manifest_path = dir.join(MANIFEST_NAME);
    let mut json = serde_json::to_string_pretty(&corpus.manifest).map_err(|e| Error::BadFile {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    json.push('\n');
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
}

fn read_sequence(
    rod: &str,
    role: Role,
    rod_dir: &Path,
    k_images: usize,
    overlap: f64,
) -> Result<Arc<ImageSequence>> {
    let dir = rod_dir.join(role_dir(role));
    let mut images = Vec::with_capacity(k_images);
    for k in 0..k_images {
        let mut img = HeightMap::load_binary(dir.join(format!("img{k}.hmap")))?;
        img.set_label(format!("{rod}/{role}/img{k}"));
        images.push(img);
    }
    Ok(Arc::new(ImageSequence::from_images(rod, role, images, overlap)?))
}

/// Reads back a corpus written by [`write_corpus`].
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_NAME);
    let raw = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CorpusManifest = serde_json::from_str(&raw).map_err(|e| Error::BadFile {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.rods.len() != manifest.n_rods {
        return Err(Error::BadFile {
            path: manifest_path,
            reason: format!(
                "manifest lists {} rods but declares n_rods = {}",
                manifest.rods.len(),
                manifest.n_rods
            ),
        });
    }
    let mut bases = Vec::with_capacity(manifest.n_rods);
    let mut tips = Vec::with_capacity(manifest.n_rods);
    let mut replicas = Vec::with_capacity(manifest.n_rods);
    for rod in &manifest.rods {
        let rod_dir = dir.join(rod);
        bases.push(read_sequence(rod, Role::Base, &rod_dir, manifest.k_images, manifest.overlap)?);
        tips.push(read_sequence(rod, Role::Tip, &rod_dir, manifest.k_images, manifest.overlap)?);
        replicas.push(read_sequence(
            rod,
            Role::Replica,
            &rod_dir,
            manifest.k_images,
            manifest.overlap,
        )?);
    }
    Ok(Corpus { manifest, bases, tips, replicas })
}

// ── tests ───────────────────────────────────────────────────────────────
