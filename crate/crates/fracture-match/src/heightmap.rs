//! Height maps: regular grids of surface heights plus the operations that
//! condition them for spectral comparison.
//!
//! Heights are in micrometers on a square pixel grid with a physical pitch,
//! also in micrometers. Two file formats are supported: a compact binary
//! format (`.hmap`, described at [`HeightMap::save_binary`]) and plain CSV
//! grids. Preprocessing consists of out-of-plane tilt removal, spike noise
//! removal against a disc neighborhood, and optional mirroring so that an
//! opposing fracture face lines up with its counterpart. A surface is imaged
//! as an [`ImageSequence`]: several square windows cut from one long strip
//! with a fixed overlap.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HMAP";
const FORMAT_VERSION: u32 = 1;

/// Mirror axis for [`HeightMap::mirrored`].
///
/// `Horizontal` flips left-right (each row reversed), `Vertical` flips
/// top-bottom (row order reversed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Which physical artifact a surface sequence was imaged from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// The face that stayed on the held piece.
    Base,
    /// The face on the detached piece; imaged laterally mirrored.
    Tip,
    /// A cast of the tip face; carries the base's parity.
    Replica,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Base => write!(f, "base"),
            Role::Tip => write!(f, "tip"),
            Role::Replica => write!(f, "replica"),
        }
    }
}

/// A rectangular grid of surface heights (um) at a fixed pixel pitch (um).
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    width: usize,
    height: usize,
    pitch_um: f64,
    heights: Vec<f64>,
    label: String,
}

impl HeightMap {
    /// Builds a map from row-major height samples.
    ///
    /// Rejects empty grids, non-finite heights and non-positive pitch.
    pub fn from_vec(
        label: impl Into<String>,
        width: usize,
        height: usize,
        pitch_um: f64,
        heights: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || heights.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if heights.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} height values cannot fill a {}x{} grid",
                heights.len(),
                width,
                height
            )));
        }
        if !(pitch_um.is_finite() && pitch_um > 0.0) {
            return Err(Error::NonPositivePitch(pitch_um));
        }
        if let Some(i) = heights.iter().position(|h| !h.is_finite()) {
            return Err(Error::NonFinite { x: i % width, y: i / width });
        }
        Ok(HeightMap { width, height, pitch_um, heights, label: label.into() })
    }

    /// Constant-zero map, mostly useful in tests and as a fill template.
    pub fn zeros(label: impl Into<String>, width: usize, height: usize, pitch_um: f64) -> Result<Self> {
        HeightMap::from_vec(label, width, height, pitch_um, vec![0.0; width * height])
    }

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

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
    }

    /// Physical field of view in millimeters, (x, y).
    pub fn fov_mm(&self) -> (f64, f64) {
        (
            self.width as f64 * self.pitch_um / 1000.0,
            self.height as f64 * self.pitch_um / 1000.0,
        )
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub(crate) fn heights_mut(&mut self) -> &mut [f64] {
        &mut self.heights
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.heights[y * self.width + x]
    }

    // ── File formats ────────────────────────────────────────────────────

    /// Writes the binary `.hmap` format:
    ///
    /// ```text
    /// bytes 0..4   magic "HMAP"
    /// bytes 4..8   u32 LE format version (currently 1)
    /// bytes 8..12  u32 LE width in pixels
    /// bytes 12..16 u32 LE height in pixels
    /// bytes 16..24 f64 LE pixel pitch in um
    /// then width*height f32 LE heights, row-major
    /// ```
    ///
    /// Heights are stored in single precision; values that are not exactly
    /// representable as `f32` are rounded on write.
    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut header = Vec::with_capacity(24);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&(self.width as u32).to_le_bytes());
        header.extend_from_slice(&(self.height as u32).to_le_bytes());
        header.extend_from_slice(&self.pitch_um.to_le_bytes());
        w.write_all(&header).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::with_capacity(self.heights.len() * 4);
        for &h in &self.heights {
            buf.extend_from_slice(&(h as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads the binary format written by [`HeightMap::save_binary`].
    ///
    /// The file's base name becomes the map label.
    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);

        let bad = |reason: &str| Error::MalformedHeader { path: path.into(), reason: reason.into() };

        let mut header = [0u8; 24];
        r.read_exact(&mut header)
            .map_err(|_| bad("file shorter than the 24-byte header"))?;
        if &header[0..4] != MAGIC {
            return Err(bad("magic bytes are not \"HMAP\""));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
        }
        let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let pitch_um = f64::from_le_bytes(header[16..24].try_into().unwrap());
        if width == 0 || height == 0 {
            return Err(bad("zero width or height"));
        }
        if !(pitch_um.is_finite() && pitch_um > 0.0) {
            return Err(Error::NonPositivePitch(pitch_um));
        }

        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad("grid dimensions overflow"))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
        if payload.len() != expected {
            return Err(bad(&format!(
                "payload is {} bytes, expected {} for a {}x{} grid",
                payload.len(),
                expected,
                width,
                height
            )));
        }
        let mut heights = Vec::with_capacity(width * height);
        for chunk in payload.chunks_exact(4) {
            heights.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        HeightMap::from_vec(label, width, height, pitch_um, heights)
    }

    /// Reads a CSV grid of heights (um). The pitch is not stored in CSV, so
    /// it must be supplied by the caller.
    pub fn load_csv(path: impl AsRef<Path>, pitch_um: f64) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut width = 0usize;
        let mut heights = Vec::new();
        let mut rows = 0usize;
        for (row, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = 0usize;
            for (col, token) in line.split(',').enumerate() {
                let token = token.trim();
                let v: f64 = token.parse().map_err(|_| Error::MalformedValue {
                    row,
                    col,
                    token: token.to_string(),
                })?;
                heights.push(v);
                cols += 1;
            }
            if rows == 0 {
                width = cols;
            } else if cols != width {
                return Err(Error::NonRectangular { row, got: cols, expected: width });
            }
            rows += 1;
        }
        if rows == 0 || width == 0 {
            return Err(Error::EmptyGrid);
        }
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        HeightMap::from_vec(label, width, rows, pitch_um, heights)
    }

    // ── Preprocessing ───────────────────────────────────────────────────

    /// Removes the best-fit plane (ordinary least squares over all pixels).
    ///
    /// The returned map has zero mean and zero first moments along both
    /// axes; applying the operation twice gives the same result as once.
    pub fn remove_tilt(&self) -> HeightMap {
        // On a full rectangular grid the centered coordinates are orthogonal
        // regressors, so the three OLS coefficients decouple.
        let w = self.width;
        let h = self.height;
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;

        let mut sum = 0.0;
        let mut sxh = 0.0;
        let mut syh = 0.0;
        for y in 0..h {
            let dy = y as f64 - cy;
            let row = &self.heights[y * w..(y + 1) * w];
            let mut row_sum = 0.0;
            let mut row_sxh = 0.0;
            for (x, &v) in row.iter().enumerate() {
                row_sum += v;
                row_sxh += (x as f64 - cx) * v;
            }
            sum += row_sum;
            sxh += row_sxh;
            syh += dy * row_sum;
        }
        let n = (w * h) as f64;
        // Sum over the grid of (x-cx)^2: h rows, each contributing the same
        // column moment; likewise for rows.
        let sxx: f64 = (0..w).map(|x| (x as f64 - cx).powi(2)).sum::<f64>() * h as f64;
        let syy: f64 = (0..h).map(|y| (y as f64 - cy).powi(2)).sum::<f64>() * w as f64;
        let mean = sum / n;
        let a = if sxx > 0.0 { sxh / sxx } else { 0.0 };
        let b = if syy > 0.0 { syh / syy } else { 0.0 };

        let mut out = self.clone();
        for y in 0..h {
            let dy = y as f64 - cy;
            for x in 0..w {
                let dx = x as f64 - cx;
                let v = self.heights[y * w + x] - (mean + a * dx + b * dy);
                out.heights[y * w + x] = v;
            }
        }
        out
    }

    /// Replaces spike pixels with the mean of a surrounding disc.
    ///
    /// For every pixel, the mean and sample standard deviation of the
    /// original heights over a Euclidean disc of `radius` pixels (clipped at
    /// the borders, center included) are computed; pixels further than
    /// `k` standard deviations from the disc mean are replaced by that mean.
    /// All statistics come from the input map, so the filter is a single
    /// pass and its output does not depend on scan order. Returns the
    /// filtered map and the number of replaced pixels.
    pub fn remove_spikes(&self, radius: usize, k: f64) -> Result<(HeightMap, usize)> {
        if radius == 0 {
            return Err(Error::param("radius", "spike disc radius must be at least 1"));
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::param("k", format!("threshold multiplier must be positive, got {k}")));
        }
        let w = self.width;
        let h = self.height;
        let r = radius as isize;

        // Per-row prefix sums of values and squares turn every disc row into
        // two O(1) range lookups.
        let mut pre = vec![0.0f64; (w + 1) * h];
        let mut pre_sq = vec![0.0f64; (w + 1) * h];
        for y in 0..h {
            let base = y * (w + 1);
            for x in 0..w {
                let v = self.heights[y * w + x];
                pre[base + x + 1] = pre[base + x] + v;
                pre_sq[base + x + 1] = pre_sq[base + x] + v * v;
            }
        }

        // Horizontal half-width of the disc at each vertical offset.
        let half: Vec<isize> = (-r..=r)
            .map(|dy| (((radius * radius) as f64 - (dy * dy) as f64).sqrt().floor()) as isize)
            .collect();

        let mut out = self.clone();
        let mut replaced = 0usize;
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                let mut s2 = 0.0;
                let mut n = 0usize;
                for dy in -r..=r {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let hw = half[(dy + r) as usize];
                    let x0 = (x as isize - hw).max(0) as usize;
                    let x1 = ((x as isize + hw).min(w as isize - 1)) as usize;
                    let base = yy as usize * (w + 1);
                    s += pre[base + x1 + 1] - pre[base + x0];
                    s2 += pre_sq[base + x1 + 1] - pre_sq[base + x0];
                    n += x1 - x0 + 1;
                }
                let nf = n as f64;
                let mean = s / nf;
                // Sample variance; at smooth extrema the center's deviation
                // converges to exactly one population std, so the n-1
                // convention decides those marginal pixels as "keep".
                let var = ((s2 - s * s / nf) / (nf - 1.0)).max(0.0);
                let std = var.sqrt();
                let v = self.heights[y * w + x];
                // The additive guard absorbs prefix-sum rounding noise so
                // that exactly constant neighborhoods (std = 0) never flag.
                if (v - mean).abs() > k * std + mean.abs() * 1e-12 {
                    out.heights[y * w + x] = mean;
                    replaced += 1;
                }
            }
        }
        Ok((out, replaced))
    }

    /// Returns the map flipped along the given axis.
    ///
    /// Mirroring twice restores the original map.
    pub fn mirrored(&self, axis: Axis) -> HeightMap {
        let mut out = self.clone();
        match axis {
            Axis::Horizontal => {
                for y in 0..self.height {
                    out.heights[y * self.width..(y + 1) * self.width].reverse();
                }
            }
            Axis::Vertical => {
                for y in 0..self.height {
                    let src = (self.height - 1 - y) * self.width;
                    out.heights[y * self.width..(y + 1) * self.width]
                        .copy_from_slice(&self.heights[src..src + self.width]);
                }
            }
        }
        out
    }

    /// Cuts `count` square windows of side `window` from a wide strip,
    /// left to right, with the given overlap fraction between neighbors.
    ///
    /// The stride is `window * (1 - overlap)` and must come out to a whole
    /// number of pixels. Windows are taken from the vertically centered band
    /// of the strip. Adjacent windows share their overlapping columns
    /// bit-identically since they alias the same strip pixels.
    pub fn extract_windows(&self, window: usize, count: usize, overlap: f64) -> Result<Vec<HeightMap>> {
        if window < 8 {
            return Err(Error::ImageTooSmall { width: window, height: window, min: 8 });
        }
        if count == 0 {
            return Err(Error::param("count", "need at least one window"));
        }
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::param("overlap", format!("overlap fraction must be in [0, 1), got {overlap}")));
        }
        let stride_f = window as f64 * (1.0 - overlap);
        let stride = stride_f.round() as usize;
        if stride == 0 || (stride_f - stride as f64).abs() > 1e-9 {
            return Err(Error::param(
                "overlap",
                format!("window {window} with overlap {overlap} gives a non-integral stride {stride_f}"),
            ));
        }
        let needed = window + (count - 1) * stride;
        if needed > self.width {
            return Err(Error::StripTooNarrow {
                have: self.width,
                needed,
                window,
                count,
                stride,
            });
        }
        if window > self.height {
            return Err(Error::ImageTooSmall { width: self.width, height: self.height, min: window });
        }
        let y0 = (self.height - window) / 2;
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let x0 = k * stride;
            let mut heights = Vec::with_capacity(window * window);
            for y in y0..y0 + window {
                let row = &self.heights[y * self.width + x0..y * self.width + x0 + window];
                heights.extend_from_slice(row);
            }
            out.push(HeightMap::from_vec(
                format!("{}/img{}", self.label, k),
                window,
                window,
                self.pitch_um,
                heights,
            )?);
        }
        Ok(out)
    }
}

/// An ordered run of overlapping square images cut from one surface.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    pub label: String,
    pub role: Role,
    pub images: Vec<HeightMap>,
    pub overlap: f64,
}

impl ImageSequence {
    /// Standard number of windows per surface.
    pub const DEFAULT_COUNT: usize = 6;
    /// Standard overlap fraction between neighboring windows.
    pub const DEFAULT_OVERLAP: f64 = 0.5;

    /// Builds a sequence by windowing a strip; see [`HeightMap::extract_windows`].
    pub fn from_strip(
        label: impl Into<String>,
        role: Role,
        strip: &HeightMap,
        window: usize,
        count: usize,
        overlap: f64,
    ) -> Result<Self> {
        let label = label.into();
        let mut images = strip.extract_windows(window, count, overlap)?;
        for (k, img) in images.iter_mut().enumerate() {
            img.set_label(format!("{label}/img{k}"));
        }
        Ok(ImageSequence { label, role, images, overlap })
    }

    /// Wraps pre-cut images. All images must share dimensions and pitch.
    pub fn from_images(
        label: impl Into<String>,
        role: Role,
        images: Vec<HeightMap>,
        overlap: f64,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::param("images", "sequence needs at least one image"));
        }
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::param("overlap", format!("overlap fraction must be in [0, 1), got {overlap}")));
        }
        let (w, h, p) = (images[0].width(), images[0].height(), images[0].pitch_um());
        for img in &images[1..] {
            if img.width() != w || img.height() != h || img.pitch_um() != p {
                return Err(Error::DimensionMismatch(format!(
                    "image {} is {}x{} at {} um, sequence started {}x{} at {} um",
                    img.label(),
                    img.width(),
                    img.height(),
                    img.pitch_um(),
                    w,
                    h,
                    p
                )));
            }
        }
        Ok(ImageSequence { label: label.into(), role, images, overlap })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pitch_um(&self) -> f64 {
        self.images[0].pitch_um()
    }
}
