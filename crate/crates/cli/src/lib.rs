//! `shadowheight` command line front-end.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shadowheight_core::grids::Split;
use shadowheight_core::net::Preset;
use shadowheight_core::probe::MaskTarget;

pub use config::AppConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] shadowheight_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(shadowheight_core::Error::TrainingDiverged(_)) => EXIT_DIVERGED,
            CliError::Core(_) => EXIT_DATA,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "shadowheight", version, about = "Shadow-aware monocular heightmap estimation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Network preset.
    #[arg(long, global = true, value_enum)]
    pub preset: Option<PresetArg>,
    /// Dataset mode.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Feed RGB only, without the shadow channel.
    #[arg(long, global = true)]
    pub no_shadow_channel: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Manchester,
    Dfc,
    Reduced,
    Micro,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Manchester => Preset::Manchester,
            PresetArg::Dfc => Preset::Dfc,
            PresetArg::Reduced => Preset::Reduced,
            PresetArg::Micro => Preset::Micro,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Manchester,
    Dfc,
    Synthetic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    RgbZero,
    ShadowOne,
    ShadowZero,
    RgbBrighten,
}

impl From<TargetArg> for MaskTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::RgbZero => MaskTarget::RgbZero,
            TargetArg::ShadowOne => MaskTarget::ShadowOne,
            TargetArg::ShadowZero => MaskTarget::ShadowZero,
            TargetArg::RgbBrighten => MaskTarget::RgbBrighten,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract a binary shadow map from an RGB image.
    Shadowmap {
        /// Input RGB image.
        #[arg(long = "in", value_name = "IMAGE")]
        input: PathBuf,
        /// Output 1-bit PNG (white marks shadow).
        #[arg(long, value_name = "PNG")]
        out: PathBuf,
    },
    /// Cut co-registered RGB, DSM and DTM rasters into a split patch catalog.
    Prepare {
        /// RGB image; repeat once per source.
        #[arg(long, required = true, value_name = "IMAGE")]
        rgb: Vec<PathBuf>,
        /// Surface model raster, one per `--rgb`.
        #[arg(long, required = true, value_name = "RASTER")]
        dsm: Vec<PathBuf>,
        /// Terrain model raster, one per `--rgb`.
        #[arg(long, required = true, value_name = "RASTER")]
        dtm: Vec<PathBuf>,
        /// Patch stride in RGB pixels (default: the patch size).
        #[arg(long, value_name = "PX")]
        stride: Option<usize>,
        /// Catalog directory to create.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic scene catalog.
    Synth {
        /// Number of scenes.
        #[arg(long, default_value_t = 1, value_name = "N")]
        scenes: usize,
        /// Catalog directory to create.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train a network on a catalog, writing checkpoints and the epoch history.
    Train {
        /// Catalog directory.
        #[arg(long, value_name = "DIR")]
        catalog: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Override the maximum number of epochs.
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// Continue from `last.ckpt` in the checkpoint directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on one split of a catalog.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Catalog directory.
        #[arg(long, value_name = "DIR")]
        catalog: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Report JSON path.
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
    },
    /// Predict a heightmap for a whole image.
    Predict {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Input RGB image.
        #[arg(long = "in", value_name = "IMAGE")]
        input: PathBuf,
        /// Output raster (.tif or .png).
        #[arg(long, value_name = "RASTER")]
        out: PathBuf,
        /// Optional color heat-map PNG of the prediction.
        #[arg(long, value_name = "PNG")]
        heatmap: Option<PathBuf>,
        /// Input ground-sample distance in meters (default: the mode's).
        #[arg(long, value_name = "M")]
        gsd: Option<f64>,
    },
    /// Slide a mask over one patch and record how predictions change.
    Probe {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Patch image sized to the network input.
        #[arg(long = "in", value_name = "IMAGE")]
        input: PathBuf,
        /// Output directory for delta maps and the summary.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_name = "PX")]
        mask_size: Option<usize>,
        #[arg(long, value_name = "PX")]
        stride: Option<usize>,
        #[arg(long, value_enum)]
        target: Option<TargetArg>,
        /// Also write one delta raster per mask position.
        #[arg(long)]
        all_deltas: bool,
    },
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprint!("error[usage]: {}", text.strip_prefix("error: ").unwrap_or(&text));
            return EXIT_USAGE;
        }
    };
    match commands::execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use shadowheight_core::Error;

    #[test]
    fn exit_code_table() {
        let cases = [
            (CliError::Usage("x".into()), EXIT_USAGE, "usage"),
            (Error::EmptyInput("x".into()).into(), EXIT_DATA, "empty-input"),
            (Error::Checkpoint("x".into()).into(), EXIT_DATA, "checkpoint-error"),
            (Error::TrainingDiverged("x".into()).into(), EXIT_DIVERGED, "training-diverged"),
        ];
        for (e, code, kind) in cases {
            assert_eq!((e.exit_code(), e.kind()), (code, kind));
        }
    }
}
