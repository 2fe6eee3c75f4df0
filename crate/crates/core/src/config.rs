//! Experiment configuration.
//!
//! A config file is TOML. It names a preset (`desk` or `paper-basic`); the
//! preset supplies every value and the file overrides any subset of keys.
//! Unknown keys anywhere are an error.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::contrastive::ContrastiveConfig;
use crate::encoder::{Activation, EncoderSpec};
use crate::error::{Error, Result};
use crate::synthdata::{FilterMode, WorldConfig};
use crate::train::{OptimConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodersConfig {
    /// Shared embedding width of all encoders.
    pub embed_dim: usize,
    pub activation: Activation,
    pub text_hidden: Vec<usize>,
    pub image_hidden: Vec<usize>,
    pub audio_hidden: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    /// Drop the lowest-similarity `fraction` of training pairs.
    Fraction,
    /// Drop training pairs with similarity below `threshold`.
    Threshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub mode: FilterKind,
    pub fraction: f64,
    pub threshold: f64,
}

impl FilterConfig {
    pub fn mode(&self) -> FilterMode {
        match self.mode {
            FilterKind::Fraction => FilterMode::DropFraction(self.fraction),
            FilterKind::Threshold => FilterMode::MinSimilarity(self.threshold),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub output_dir: PathBuf,
    pub world: WorldConfig,
    pub encoders: EncodersConfig,
    /// Stage 0: anchor pair pretraining.
    pub pretrain: OptimConfig,
    /// Stage 1: new-modality training.
    pub optim: OptimConfig,
    pub augment: AugmentConfig,
    pub contrastive: ContrastiveConfig,
    pub filter: FilterConfig,
}

pub const PRESETS: [&str; 2] = ["desk", "paper-basic"];

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let world = WorldConfig::default();
        let desk = Self {
            preset: "desk".into(),
            output_dir: PathBuf::from("runs/desk"),
            encoders: EncodersConfig {
                embed_dim: 16,
                activation: Activation::Tanh,
                text_hidden: vec![64],
                image_hidden: vec![64],
                audio_hidden: vec![64],
            },
            pretrain: OptimConfig {
                epochs: 100,
                ..OptimConfig::desk()
            },
            optim: OptimConfig {
                epochs: 100,
                ..OptimConfig::desk()
            },
            augment: AugmentConfig::scaled(world.audio_channels, world.audio_frames),
            contrastive: ContrastiveConfig::default(),
            filter: FilterConfig {
                mode: FilterKind::Fraction,
                fraction: 0.0,
                threshold: 0.0,
            },
            world,
        };
        match name {
            "desk" => Ok(desk),
            "paper-basic" => Ok(Self {
                preset: "paper-basic".into(),
                output_dir: PathBuf::from("runs/paper-basic"),
                pretrain: OptimConfig::paper_basic(),
                optim: OptimConfig::paper_basic(),
                ..desk
            }),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected one of {PRESETS:?})"
            ))),
        }
    }

    /// Parses a TOML document layered over its preset.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = match user.get("preset") {
            None => "desk",
            Some(toml::Value::String(s)) => s.as_str(),
            Some(_) => return Err(Error::Config("`preset` must be a string".into())),
        };
        let mut merged = toml::Table::try_from(Self::preset(preset)?).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Parameter(m) => Error::Config(m),
            other => other,
        };
        self.world.validate().map_err(wrap)?;
        self.pretrain.validate().map_err(wrap)?;
        self.optim.validate().map_err(wrap)?;
        self.augment.validate(self.world.audio_channels).map_err(wrap)?;
        self.contrastive.temperature().map_err(wrap)?;
        self.text_spec().validate().map_err(wrap)?;
        self.image_spec().validate().map_err(wrap)?;
        self.audio_spec().validate().map_err(wrap)?;
        if let FilterKind::Fraction = self.filter.mode {
            if !(0.0..1.0).contains(&self.filter.fraction) {
                return Err(Error::Config("filter.fraction must be in [0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn text_spec(&self) -> EncoderSpec {
        let e = &self.encoders;
        EncoderSpec::new(self.world.text_dim, &e.text_hidden, e.embed_dim, e.activation)
    }

    pub fn image_spec(&self) -> EncoderSpec {
        let e = &self.encoders;
        EncoderSpec::new(self.world.image_dim, &e.image_hidden, e.embed_dim, e.activation)
    }

    pub fn audio_spec(&self) -> EncoderSpec {
        let e = &self.encoders;
        EncoderSpec::new(
            self.augment.target_len * self.world.audio_channels,
            &e.audio_hidden,
            e.embed_dim,
            e.activation,
        )
    }

    pub fn stage1(&self) -> TrainConfig {
        TrainConfig {
            optim: self.optim.clone(),
            contrastive: self.contrastive.clone(),
            augment: self.augment.clone(),
        }
    }

    /// Applies a command-line seed to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.world.seed = seed;
        self.pretrain.seed = seed;
        self.optim.seed = seed;
        self
    }

    pub fn language_names(&self) -> Vec<String> {
        self.world.languages.iter().map(|l| l.name.clone()).collect()
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
