//! Command-line front end for fractured-surface topography matching.
//!
//! Subcommands cover the full workflow: `synth` builds labeled ground-truth
//! corpora, `preprocess` cleans single height maps, `compare` correlates two
//! image sequences band by band, `train` fits the two-class feature model,
//! `classify` scores pairs against a trained model, and `sweep` surveys
//! per-band correlation against replica fidelity.
//!
//! Exit codes: 0 success, 2 usage error, 3 malformed input data,
//! 4 numerical failure, 1 plain I/O failure.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fracture_match::error::{Error, ErrorCategory, Result};
use fracture_match::heightmap::Role;

use config::{MirrorSetting, PairSelection, RunConfig};

/// Role of a sequence on one side of a comparison.
#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum RoleArg {
    /// The face that stays with the bulk part.
    Base,
    /// The detached face; mirrored before comparison unless --mirror off.
    Tip,
    /// A cast replica of the tip.
    Replica,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Role {
        match r {
            RoleArg::Base => Role::Base,
            RoleArg::Tip => Role::Tip,
            RoleArg::Replica => Role::Replica,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "fracture-match",
    version,
    about = "Decide whether two fractured-surface image sequences share a fracture event"
)]
struct Cli {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags accepted by every subcommand. Settings resolve in three layers:
/// built-in defaults, then the --config file, then these flags.
#[derive(Args)]
struct SharedArgs {
    /// JSON configuration file; explicit flags override its fields
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output file or directory (meaning depends on the subcommand)
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Seed for surface synthesis and bootstrap resampling
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated band thresholds in 1/mm; n+1 thresholds give n bands
    #[arg(long, global = true, value_delimiter = ',', num_args = 1.., value_name = "MM^-1")]
    bands: Option<Vec<f64>>,

    /// How tip-role surfaces are mirrored before comparison
    #[arg(long, global = true, value_enum)]
    mirror: Option<MirrorSetting>,

    /// Prior probability that a pair is a match
    #[arg(long, global = true)]
    prior: Option<f64>,

    /// Posterior threshold above which a pair is called a match
    #[arg(long, global = true)]
    threshold: Option<f64>,

    /// Correlate 3x3-pooled spectra instead of plain ones
    #[arg(long, global = true, overrides_with = "no_blur")]
    blur: bool,

    /// Correlate plain spectra, overriding a config file's blur setting
    #[arg(long, global = true, overrides_with = "blur")]
    no_blur: bool,

    /// Pixel pitch in micrometers for bare .csv grid inputs
    #[arg(long, global = true, value_name = "UM")]
    pitch_um: Option<f64>,
}

impl SharedArgs {
    /// Defaults, then the config file, then explicit flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.synth.seed = seed;
        }
        if let Some(bands) = &self.bands {
            cfg.bands = bands.clone();
        }
        if let Some(mirror) = self.mirror {
            cfg.mirror = mirror;
        }
        if let Some(prior) = self.prior {
            cfg.prior = prior;
        }
        if let Some(threshold) = self.threshold {
            cfg.threshold = threshold;
        }
        if self.blur {
            cfg.blur = true;
        } else if self.no_blur {
            cfg.blur = false;
        }
        if let Some(pitch) = self.pitch_um {
            cfg.pitch_um = Some(pitch);
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus of matched base/tip/replica image sequences
    Synth {
        /// Number of rods to synthesize
        #[arg(long)]
        rods: Option<usize>,
        /// Overlapping windows imaged per surface
        #[arg(long)]
        images: Option<usize>,
    },
    /// Level, despike, and (with an explicit --mirror) flip one height map
    Preprocess {
        /// Input height map (.hmap or .csv)
        input: PathBuf,
    },
    /// Band-by-band spectral correlation of two image sequences
    Compare {
        /// Directory holding the left sequence's windows
        left: PathBuf,
        /// Directory holding the right sequence's windows
        right: PathBuf,
        /// Role of the left sequence
        #[arg(long, value_enum, default_value = "base")]
        left_role: RoleArg,
        /// Role of the right sequence
        #[arg(long, value_enum, default_value = "tip")]
        right_role: RoleArg,
    },
    /// Fit the two-class feature model on a labeled corpus
    Train {
        /// Corpus directory, as written by synth
        corpus: PathBuf,
        /// Pairings to train on
        #[arg(long, value_enum)]
        kind: Option<PairSelection>,
    },
    /// Score corpus pairs against a trained model
    Classify {
        /// Trained model file
        model: PathBuf,
        /// Corpus directory to score
        corpus: PathBuf,
        /// Pairings to score
        #[arg(long, value_enum)]
        kind: Option<PairSelection>,
    },
    /// Survey per-band correlation of replica-tip pairs with bootstrap CIs
    Sweep {
        /// Corpus directory, as written by synth
        corpus: PathBuf,
        /// Bootstrap resamples per band and group
        #[arg(long)]
        bootstrap: Option<usize>,
    },
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref()
        .ok_or_else(|| Error::param("--out", "this command writes files; pass an output path"))
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = cli.shared.resolve()?;
    match &cli.command {
        Command::Synth { rods, images } => {
            if let Some(r) = *rods {
                cfg.rods = r;
            }
            if let Some(i) = *images {
                cfg.images = i;
            }
            commands::cmd_synth(require_out(&cli.shared.out)?, &cfg)
        }
        Command::Preprocess { input } => commands::cmd_preprocess(
            input,
            require_out(&cli.shared.out)?,
            cli.shared.mirror,
            &cfg,
        ),
        Command::Compare { left, right, left_role, right_role } => commands::cmd_compare(
            left,
            right,
            (*left_role).into(),
            (*right_role).into(),
            require_out(&cli.shared.out)?,
            &cfg,
        ),
        Command::Train { corpus, kind } => {
            if let Some(k) = *kind {
                cfg.kind = k;
            }
            commands::cmd_train(corpus, require_out(&cli.shared.out)?, &cfg)
        }
        Command::Classify { model, corpus, kind } => {
            if let Some(k) = *kind {
                cfg.kind = k;
            }
            commands::cmd_classify(
                model,
                corpus,
                require_out(&cli.shared.out)?,
                cli.shared.bands.clone(),
                &cfg,
            )
        }
        Command::Sweep { corpus, bootstrap } => {
            if let Some(b) = *bootstrap {
                cfg.bootstrap = b;
            }
            commands::cmd_sweep(corpus, require_out(&cli.shared.out)?, &cfg)
        }
    }
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Usage => 2,
        ErrorCategory::DataFormat => 3,
        ErrorCategory::Numerical => 4,
        ErrorCategory::Io => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
