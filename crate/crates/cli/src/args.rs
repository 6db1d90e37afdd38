use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "aawm", version, about = "Anti-aliased watermarking for image-to-image networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Args)]
pub struct Common {
    /// Master seed; replaces every seed stream of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pin all seed streams to the config (or --seed) values.
    #[arg(long)]
    pub deterministic: bool,
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or split a paired corpus into host/train/val/test/surrogate.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Directory with `input/` and `target/` PNGs; synthetic corpus when absent.
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// Fit the host network on the host split.
    TrainHost {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train embedder, extractor and discriminator.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Host archive from `train-host`; identity host when absent.
        #[arg(long)]
        host: Option<PathBuf>,
    },
    /// Fine-tune the extractor against surrogate attacks.
    FinetuneAdv {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train an attacker surrogate on marked outputs.
    TrainSurrogate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<SurrogateArg>,
        /// Comma-separated subset of l1,l2,perceptual,adversarial.
        #[arg(long, value_delimiter = ',', value_enum)]
        losses: Option<Vec<LossArg>>,
    },
    /// Mark an image (or every PNG of a directory).
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output file or directory; defaults to `<out-dir>/marked`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recover the watermark and score it.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Report label; defaults to the attack recorded next to the input.
        #[arg(long)]
        label: Option<String>,
    },
    /// Apply one deterministic attack.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: AttackKindArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 90)]
        quality: u8,
        #[arg(long, default_value_t = 512)]
        side: usize,
        #[arg(long, value_enum, default_value = "horizontal")]
        axis: AxisArg,
    },
    /// Score a checkpoint over the configured attack grid.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// DCT heat map and high-frequency energy of a directory of images.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 0.75)]
        cutoff: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Prepare { .. } => "prepare",
            Command::TrainHost { .. } => "train-host",
            Command::Train { .. } => "train",
            Command::FinetuneAdv { .. } => "finetune-adv",
            Command::TrainSurrogate { .. } => "train-surrogate",
            Command::Embed { .. } => "embed",
            Command::Extract { .. } => "extract",
            Command::Attack { .. } => "attack",
            Command::Evaluate { .. } => "evaluate",
            Command::Spectrum { .. } => "spectrum",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Prepare { common, .. }
            | Command::TrainHost { common, .. }
            | Command::Train { common, .. }
            | Command::FinetuneAdv { common, .. }
            | Command::TrainSurrogate { common, .. }
            | Command::Embed { common, .. }
            | Command::Extract { common, .. }
            | Command::Attack { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Spectrum { common, .. } => common,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SurrogateArg {
    Conv,
    Res,
    Unet,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
pub enum LossArg {
    L1,
    L2,
    Perceptual,
    Adversarial,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AttackKindArg {
    Identity,
    Noise,
    Resize,
    Jpeg,
    Flip,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AxisArg {
    Horizontal,
    Vertical,
}
