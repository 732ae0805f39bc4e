//! Declarative run configuration: one TOML file with a versioned schema,
//! strict about unknown keys, defaults matching the reference experiments
//! (learning rate 0.001, batch 64, 20 epochs, threshold 0.5, d1 6, d2 20,
//! d 8). Command-line flags override seed and output directory.

use anyhow::{bail, Context};
use serde::Deserialize;
use snn_core::attention::{AttentionConfig, AttentionKind};
use snn_core::model::{NetworkFamily, NetworkSpec};
use snn_core::train::{Schedule, TrainConfig};
use std::path::{Path, PathBuf};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub version: u32,
    pub network: NetworkSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub family: NetworkFamily,
    pub channels: usize,
    pub timepieces: usize,
    pub steps: usize,
    #[serde(default = "default_tau")]
    pub tau: f32,
    #[serde(default = "default_v_th")]
    pub v_th: f32,
    #[serde(default)]
    pub attention: AttentionSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionSection {
    #[serde(default = "default_kind")]
    pub kind: AttentionKind,
    #[serde(default = "default_d1")]
    pub d1: usize,
    #[serde(default = "default_d2")]
    pub d2: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default)]
    pub alpha_init: f32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f32,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default)]
    pub pretrain_epochs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

fn default_tau() -> f32 {
    2.0
}
fn default_v_th() -> f32 {
    0.5
}
fn default_kind() -> AttentionKind {
    AttentionKind::None
}
fn default_d1() -> usize {
    6
}
fn default_d2() -> usize {
    20
}
fn default_d() -> usize {
    8
}
fn default_lr() -> f32 {
    0.001
}
fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    64
}
fn default_schedule() -> Schedule {
    Schedule::Direct
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            schedule: default_schedule(),
            pretrain_epochs: None,
        }
    }
}

impl Default for AttentionSection {
    fn default() -> Self {
        AttentionSection {
            kind: default_kind(),
            d1: default_d1(),
            d2: default_d2(),
            d: default_d(),
            alpha_init: 0.0,
        }
    }
}

/// Fully validated view over the run configuration.
pub struct RunConfig {
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let file: FileConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if file.version != CONFIG_VERSION {
            bail!(
                "config version {} unsupported (want {CONFIG_VERSION})",
                file.version
            );
        }
        let spec = NetworkSpec {
            family: file.network.family,
            channels: file.network.channels,
            timepieces: file.network.timepieces,
            steps: file.network.steps,
            attention: AttentionConfig {
                kind: file.network.attention.kind,
                d1: file.network.attention.d1,
                d2: file.network.attention.d2,
                d: file.network.attention.d,
                alpha_init: file.network.attention.alpha_init,
            },
            tau: file.network.tau,
            v_th: file.network.v_th,
        };
        spec.validate()?;
        let train = TrainConfig {
            lr: file.train.lr,
            epochs: file.train.epochs,
            batch_size: file.train.batch_size,
            seed: file.train.seed,
            schedule: file.train.schedule,
            pretrain_epochs: file.train.pretrain_epochs,
            ..TrainConfig::default()
        };
        train.validate()?;
        // resolve relative paths against the config's directory
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        Ok(RunConfig {
            spec,
            train,
            dataset: file.data.dataset.map(resolve),
            out_dir: file.output.dir.map(resolve),
        })
    }
}
