//! Resolved run configuration.
//!
//! Every subcommand resolves its settings in three layers: built-in defaults,
//! then an optional `--config` JSON file, then explicit command-line flags.
//! The resolved [`RunConfig`] is what executes, what gets embedded in the
//! `run.json` sidecar next to data outputs, and what the feature-extraction
//! fingerprint is derived from, so a run can always be reproduced from its
//! own outputs.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fracture_match::classifier;
use fracture_match::error::{Error, Result};
use fracture_match::features::{PairKind, PreprocessOptions};
use fracture_match::heightmap::Axis;
use fracture_match::spectral::BandSet;
use fracture_match::synth::SynthConfig;

/// Lateral mirror handling for tip-role surfaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MirrorSetting {
    /// Mirror tips left-right (detached faces have opposite lateral parity).
    H,
    /// Mirror tips top-bottom.
    V,
    /// Compare as imaged, without any mirroring.
    Off,
}

impl fmt::Display for MirrorSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MirrorSetting::H => write!(f, "h"),
            MirrorSetting::V => write!(f, "v"),
            MirrorSetting::Off => write!(f, "off"),
        }
    }
}

/// Which corpus pairings a command operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PairSelection {
    BaseTip,
    ReplicaBase,
    ReplicaTip,
    All,
}

impl PairSelection {
    /// The concrete pair kinds this selection expands to.
    pub fn kinds(self) -> Vec<PairKind> {
        match self {
            PairSelection::BaseTip => vec![PairKind::BaseTip],
            PairSelection::ReplicaBase => vec![PairKind::ReplicaBase],
            PairSelection::ReplicaTip => vec![PairKind::ReplicaTip],
            PairSelection::All => {
                vec![PairKind::BaseTip, PairKind::ReplicaBase, PairKind::ReplicaTip]
            }
        }
    }
}

impl fmt::Display for PairSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairSelection::BaseTip => write!(f, "base-tip"),
            PairSelection::ReplicaBase => write!(f, "replica-base"),
            PairSelection::ReplicaTip => write!(f, "replica-tip"),
            PairSelection::All => write!(f, "all"),
        }
    }
}

/// Every knob a command can use, fully resolved. Commands read the fields
/// relevant to them; unrelated fields keep their defaults and are harmless.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Band thresholds in mm^-1; n+1 thresholds define n annuli.
    pub bands: Vec<f64>,
    pub mirror: MirrorSetting,
    /// Correlate 3x3-blurred spectra instead of plain ones.
    pub blur: bool,
    /// Prior probability of a match, used by `train`.
    pub prior: f64,
    /// Posterior cut for the match decision, used by `classify`.
    pub threshold: f64,
    /// Bootstrap / generator seed, depending on the command.
    pub seed: u64,
    /// Bootstrap resamples per group in `sweep`.
    pub bootstrap: usize,
    /// Overlap fraction between neighboring windows of a loaded sequence.
    pub overlap: f64,
    /// Pixel pitch for csv-grid inputs, which carry no pitch themselves.
    pub pitch_um: Option<f64>,
    pub despike: bool,
    pub spike_radius: usize,
    pub spike_k: f64,
    pub taper_fraction: f64,
    /// Which pairings `train` and `classify` consider.
    pub kind: PairSelection,
    /// Rod count for `synth`.
    pub rods: usize,
    /// Images per surface for `synth`.
    pub images: usize,
    /// Surface generator settings for `synth`.
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            bands: vec![5.0, 10.0, 20.0],
            mirror: MirrorSetting::H,
            blur: false,
            prior: 0.5,
            threshold: 0.5,
            seed: 0,
            bootstrap: 2000,
            overlap: 0.5,
            pitch_um: None,
            despike: true,
            spike_radius: 7,
            spike_k: 1.0,
            taper_fraction: 0.1,
            kind: PairSelection::BaseTip,
            rods: 10,
            images: 6,
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Starts from defaults or, when given, from a JSON config file.
    pub fn load(config_path: Option<&Path>) -> Result<Self> {
        match config_path {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&raw).map_err(|e| Error::BadFile {
                    path: path.into(),
                    reason: e.to_string(),
                })
            }
        }
    }

    /// The band set the run compares on.
    pub fn band_set(&self) -> Result<BandSet> {
        BandSet::from_thresholds(&self.bands)
    }

    /// The preprocessing applied to every window before the FFT. With the
    /// mirror off the axis field is still recorded (as horizontal) but no
    /// pair requests mirroring.
    pub fn preprocess(&self) -> PreprocessOptions {
        PreprocessOptions {
            despike: self.despike,
            spike_radius: self.spike_radius,
            spike_k: self.spike_k,
            taper_fraction: self.taper_fraction,
            mirror_axis: match self.mirror {
                MirrorSetting::V => Axis::Vertical,
                MirrorSetting::H | MirrorSetting::Off => Axis::Horizontal,
            },
        }
    }

    /// Whether tip-role surfaces get mirrored at all.
    pub fn mirror_enabled(&self) -> bool {
        self.mirror != MirrorSetting::Off
    }

    /// Hash of the feature-extraction settings; must match between training
    /// and classification.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(classifier::fingerprint(&self.band_set()?, &self.preprocess(), self.blur))
    }
}

/// Sidecar metadata written next to every data output: the command, the
/// resolved configuration and its feature fingerprint. Contains no
/// timestamps or machine state, so reruns are byte-identical.
#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'static str,
    fingerprint: String,
    config: &'a RunConfig,
}

/// Writes `run.json` into `dir`.
pub fn write_run_record(dir: &Path, command: &'static str, config: &RunConfig) -> Result<()> {
    let record = RunRecord { command, fingerprint: config.fingerprint()?, config };
    let path = dir.join("run.json");
    let mut json = serde_json::to_string_pretty(&record).map_err(|e| Error::BadFile {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}
