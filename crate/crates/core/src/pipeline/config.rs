//! Run configuration: a single JSON document with a `version` key.
//! Unknown keys are rejected; missing keys are reported by name.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{mild_grid, full_grid, AttackRanges, AttackSpec};
use crate::error::{ensure, Error, Result};
use crate::losses::LossWeights;
use crate::metrics::{Thresholds, WatermarkKind};
use crate::models::{NetworkConfig, Sampling, SurrogateKind};
use crate::nn::AdamConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    PaintTransfer,
    StyleTransfer,
    Synthetic,
}

/// Sizes of the five disjoint subsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub host: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub surrogate: usize,
}

impl SplitSizes {
    /// Fixed layouts of the two real tasks; `None` for synthetic data.
    pub fn for_task(task: Task) -> Option<Self> {
        match task {
            Task::PaintTransfer => Some(SplitSizes {
                host: 8000,
                train: 3000,
                val: 500,
                test: 500,
                surrogate: 3000,
            }),
            Task::StyleTransfer => Some(SplitSizes {
                host: 15000,
                train: 6000,
                val: 1500,
                test: 1500,
                surrogate: 6000,
            }),
            Task::Synthetic => None,
        }
    }

    pub fn total(&self) -> usize {
        self.host + self.train + self.val + self.test + self.surrogate
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("host", self.host),
            ("train", self.train),
            ("val", self.val),
            ("test", self.test),
            ("surrogate", self.surrogate),
        ] {
            ensure(n > 0, || Error::Config(format!("split {name} must be non-empty")))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Networks {
    pub host: NetworkConfig,
    pub embedder: NetworkConfig,
    pub extractor: NetworkConfig,
    pub discriminator: NetworkConfig,
    pub surrogate: NetworkConfig,
}

impl Networks {
    fn all(&self) -> [(&'static str, &NetworkConfig); 5] {
        [
            ("host", &self.host),
            ("embedder", &self.embedder),
            ("extractor", &self.extractor),
            ("discriminator", &self.discriminator),
            ("surrogate", &self.surrogate),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub epochs_host: usize,
    pub epochs_initial: usize,
    pub epochs_adversarial: usize,
    pub epochs_surrogate: usize,
    pub batch_host: usize,
    pub batch_initial: usize,
    pub batch_adversarial: usize,
    pub batch_surrogate: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackLayerConfig {
    pub enabled: bool,
    /// Epochs trained without attacks before the layer switches on.
    pub warmup_epochs: usize,
    pub ranges: AttackRanges,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VggConfig {
    /// Width divisor of the random fallback network.
    pub width_divisor: usize,
    /// Safetensors file with pretrained weights; the environment variable
    /// takes precedence.
    pub weights: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateLoss {
    L1,
    L2,
    Perceptual,
    Adversarial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub kind: SurrogateKind,
    pub losses: Vec<SurrogateLoss>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkConfig {
    pub kind: WatermarkKind,
    /// PNG to use as `w`; generated from `seeds.watermark` when absent.
    pub image: Option<PathBuf>,
}

/// Attack grid used by `evaluate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalGrid {
    Identity,
    Mild,
    Full,
    Custom(Vec<AttackSpec>),
}

impl EvalGrid {
    pub fn specs(&self, seed: u64) -> Vec<AttackSpec> {
        match self {
            EvalGrid::Identity => vec![AttackSpec::Identity],
            EvalGrid::Mild => {
                let mut g = vec![AttackSpec::Identity];
                g.extend(mild_grid(seed));
                g
            }
            EvalGrid::Full => full_grid(seed),
            EvalGrid::Custom(specs) => specs.clone(),
        }
    }
}

/// One seed per random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub init: u64,
    pub train: u64,
    pub attack: u64,
    pub watermark: u64,
    pub noise_target: u64,
    pub surrogate: u64,
}

impl Seeds {
    /// Derives every stream from one master seed.
    pub fn from_master(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Seeds {
            data: rng.random(),
            split: rng.random(),
            init: rng.random(),
            train: rng.random(),
            attack: rng.random(),
            watermark: rng.random(),
            noise_target: rng.random(),
            surrogate: rng.random(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub task: Task,
    pub image_side: usize,
    pub splits: SplitSizes,
    pub networks: Networks,
    pub schedule: Schedule,
    pub optimizer: AdamConfig,
    pub weights: LossWeights,
    pub attack_layer: AttackLayerConfig,
    pub vgg: VggConfig,
    pub surrogate: SurrogateConfig,
    pub watermark: WatermarkConfig,
    pub thresholds: Thresholds,
    pub eval_grid: EvalGrid,
    pub seeds: Seeds,
}

impl RunConfig {
    /// Full-scale settings for a real task.
    pub fn full(task: Task) -> Self {
        let side = 256;
        let net = NetworkConfig::default();
        RunConfig {
            version: CONFIG_VERSION,
            task,
            image_side: side,
            splits: SplitSizes::for_task(task).unwrap_or(SplitSizes {
                host: 800,
                train: 300,
                val: 50,
                test: 50,
                surrogate: 300,
            }),
            networks: Networks {
                host: net.clone().with_sampling(Sampling::Strided),
                embedder: net.clone(),
                extractor: net.clone(),
                discriminator: net.clone(),
                surrogate: net,
            },
            schedule: Schedule {
                epochs_host: 200,
                epochs_initial: 100,
                epochs_adversarial: 50,
                epochs_surrogate: 200,
                batch_host: 1,
                batch_initial: 1,
                batch_adversarial: 1,
                batch_surrogate: 8,
            },
            optimizer: AdamConfig::default(),
            weights: LossWeights::default(),
            attack_layer: AttackLayerConfig {
                enabled: true,
                warmup_epochs: 0,
                ranges: AttackRanges::default(),
            },
            vgg: VggConfig {
                width_divisor: 1,
                weights: None,
            },
            surrogate: SurrogateConfig {
                kind: SurrogateKind::Unet,
                losses: vec![SurrogateLoss::L1],
            },
            watermark: WatermarkConfig {
                kind: WatermarkKind::Color,
                image: None,
            },
            thresholds: Thresholds::default(),
            eval_grid: EvalGrid::Full,
            seeds: Seeds::from_master(0),
        }
    }

    /// Desk-scale synthetic run: 64x64 images, 200 training pairs.
    pub fn toy(seed: u64) -> Self {
        let side = 64;
        let net = NetworkConfig::toy(8);
        RunConfig {
            version: CONFIG_VERSION,
            task: Task::Synthetic,
            image_side: side,
            splits: SplitSizes {
                host: 200,
                train: 200,
                val: 16,
                test: 32,
                surrogate: 200,
            },
            networks: Networks {
                host: net.clone().with_sampling(Sampling::Strided),
                embedder: net.clone(),
                extractor: net.clone(),
                discriminator: NetworkConfig::toy(4),
                surrogate: net,
            },
            schedule: Schedule {
                epochs_host: 10,
                epochs_initial: 50,
                epochs_adversarial: 10,
                epochs_surrogate: 20,
                batch_host: 8,
                batch_initial: 4,
                batch_adversarial: 4,
                batch_surrogate: 8,
            },
            optimizer: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            weights: LossWeights::default(),
            attack_layer: AttackLayerConfig {
                enabled: true,
                warmup_epochs: 0,
                ranges: AttackRanges::for_side(side),
            },
            vgg: VggConfig {
                width_divisor: 8,
                weights: None,
            },
            surrogate: SurrogateConfig {
                kind: SurrogateKind::Unet,
                losses: vec![SurrogateLoss::L1],
            },
            watermark: WatermarkConfig {
                kind: WatermarkKind::Color,
                image: None,
            },
            thresholds: Thresholds::default(),
            eval_grid: EvalGrid::Mild,
            seeds: Seeds::from_master(seed),
        }
    }

    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CONFIG_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Version {
                    found: v.min(u32::MAX as u64) as u32,
                    expected: CONFIG_VERSION,
                })
            }
            None => return Err(Error::Config("missing field `version`".into())),
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn digest(&self) -> String {
        let compact = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&compact))
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.version == CONFIG_VERSION, || Error::Version {
            found: self.version,
            expected: CONFIG_VERSION,
        })?;
        self.splits.validate()?;
        if let Some(fixed) = SplitSizes::for_task(self.task) {
            ensure(self.splits == fixed, || {
                Error::Config(format!("{:?} uses fixed split sizes {fixed:?}", self.task))
            })?;
        }
        for (name, net) in self.networks.all() {
            net.validate().map_err(|e| Error::Config(format!("networks.{name}: {e}")))?;
            ensure(net.image_side == self.image_side, || {
                Error::Config(format!(
                    "networks.{name}.image_side {} differs from image_side {}",
                    net.image_side, self.image_side
                ))
            })?;
        }
        let s = &self.schedule;
        for (name, b) in [
            ("batch_host", s.batch_host),
            ("batch_initial", s.batch_initial),
            ("batch_adversarial", s.batch_adversarial),
            ("batch_surrogate", s.batch_surrogate),
        ] {
            ensure(b > 0, || Error::Config(format!("schedule.{name} must be positive")))?;
        }
        let o = &self.optimizer;
        ensure(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0, || {
            Error::Config(format!("invalid optimizer settings {o:?}"))
        })?;
        self.weights.validate()?;
        self.attack_layer.ranges.validate()?;
        ensure(self.vgg.width_divisor >= 1, || Error::Config("vgg.width_divisor must be positive".into()))?;
        ensure(!self.surrogate.losses.is_empty(), || Error::Config("surrogate.losses is empty".into()))?;
        if let EvalGrid::Custom(specs) = &self.eval_grid {
            ensure(!specs.is_empty(), || Error::Config("eval_grid.custom is empty".into()))?;
            for spec in specs {
                spec.validate()?;
            }
        }
        ensure(self.thresholds.psnr_min.is_finite() && self.thresholds.ber_max >= 0.0, || {
            Error::Config("invalid thresholds".into())
        })
    }
}
