//! Decide whether two fractured surfaces were once a single piece.
//!
//! The crate works on 3D topography maps (height fields on a regular pixel
//! grid) of the two faces left behind by a fracture, or of silicone casts of
//! those faces. Matching is done in the frequency domain: each surface is
//! imaged as a sequence of overlapping square windows, every window is
//! detrended, despiked, tapered and Fourier transformed, and pairs of windows
//! are compared through normalized spectral correlations restricted to annular
//! frequency bands. Band correlations are moved to the Fisher-Z scale and
//! collected into a bands-by-windows feature matrix per surface pair. A
//! two-class quadratic discriminant built from constrained matrix-variate t
//! distributions (one fitted to known matches, one to known non-matches) turns
//! a feature matrix into a posterior probability of match.
//!
//! A self-affine surface generator is included so the whole pipeline can be
//! exercised end to end, with known ground truth, on synthetic fracture pairs
//! and simulated casts.
//!
//! # Quick start
//!
//! ```
//! use fracture_match::synth::{self, SynthConfig};
//! use fracture_match::features::{build_feature, PreprocessOptions, SurfacePair, PairKind};
//! use fracture_match::spectral::BandSet;
//!
//! // A small matched pair: base strip and (mirrored) tip strip.
//! let mut cfg = SynthConfig::default();
//! cfg.strip_width = 224;
//! cfg.strip_height = 64;
//! cfg.pitch_um = 10.0;
//! cfg.split_frequency = 25.0; // keep the shared/independent split below Nyquist
//! cfg.seed = 7;
//! let (base, tip) = synth::generate_pair(&cfg).unwrap();
//!
//! let base_seq = fracture_match::heightmap::ImageSequence::from_strip(
//!     "rod00/base", fracture_match::heightmap::Role::Base, &base, 64, 6, 0.5).unwrap();
//! let tip_seq = fracture_match::heightmap::ImageSequence::from_strip(
//!     "rod00/tip", fracture_match::heightmap::Role::Tip, &tip, 64, 6, 0.5).unwrap();
//!
//! let pair = SurfacePair::new(base_seq, tip_seq, PairKind::BaseTip).unwrap();
//! let bands = BandSet::from_thresholds(&[5.0, 10.0, 20.0]).unwrap();
//! let feature = build_feature(&pair, &bands, &PreprocessOptions::default(), false).unwrap();
//! assert_eq!(feature.values.len(), 2); // two bands
//! assert_eq!(feature.values[0].len(), 6); // six windows
//! ```

pub mod classifier;
pub mod error;
pub mod features;
pub mod heightmap;
pub mod mvt;
pub mod spectral;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};
pub use heightmap::HeightMap;
pub use spectral::{BandSet, Spectrum};
