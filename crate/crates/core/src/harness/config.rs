//! Run configuration: typed struct, key=value file parsing, CLI
//! overrides, and the resolved-config sidecar.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::augment::DataLayout;
use crate::error::{Error, Result};
use crate::selection::PolicyKind;
use crate::stream::RunLengthMode;

/// Where the run's dataset comes from.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic {
        classes: u32,
        dim: usize,
        per_class: usize,
        separation: f64,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    // Model
    pub encoder_hidden: Vec<usize>,
    pub repr_dim: usize,
    pub proj_hidden: Vec<usize>,
    pub proj_dim: usize,

    // Training
    pub lr: f64,
    pub tau: f64,
    pub weight_decay: f64,
    /// Buffer capacity N; the buffer doubles as the training mini-batch.
    pub buffer_capacity: usize,
    /// Incoming segment size, at most N.
    pub segment_size: usize,
    pub total_emissions: u64,

    // Policy
    #[serde(serialize_with = "serialize_policy")]
    pub policy: PolicyKind,
    /// 0 disables lazy scoring; a positive value is the refresh interval.
    pub lazy_interval: u32,

    // Stream
    pub data: DataSource,
    pub stc: u32,
    #[serde(serialize_with = "serialize_run_lengths")]
    pub run_lengths: RunLengthMode,

    // Augmentation
    #[serde(serialize_with = "serialize_layout")]
    pub layout: LayoutChoice,
    /// Absent means 0.1 x the feature standard deviation of the
    /// streaming split, resolved at run start.
    pub noise_sigma: Option<f64>,
    pub mask_fraction: f64,
    pub crop_min: f64,
    pub crop_max: f64,

    // Evaluation
    pub label_fraction: f64,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch: usize,
    pub train_fraction: f64,
    /// Number of evenly spaced checkpoints over the run.
    pub checkpoints: u32,
    pub probe_at_checkpoints: bool,

    // Seeds
    pub seed: u64,
    pub seed_model: Option<u64>,
    pub seed_stream: Option<u64>,
    pub seed_augment: Option<u64>,
    pub seed_policy: Option<u64>,
    pub seed_probe: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutChoice {
    Vector,
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

fn serialize_policy<S: serde::Serializer>(
    p: &PolicyKind,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(p.name())
}

fn serialize_run_lengths<S: serde::Serializer>(
    r: &RunLengthMode,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match r {
        RunLengthMode::Fixed => "fixed",
        RunLengthMode::Geometric => "geometric",
    })
}

fn serialize_layout<S: serde::Serializer>(
    l: &LayoutChoice,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match l {
        LayoutChoice::Vector => s.serialize_str("vector"),
        LayoutChoice::Image {
            channels,
            height,
            width,
        } => s.serialize_str(&format!("image:{channels},{height},{width}")),
    }
}

/// Per-domain seeds, derived from the master seed unless overridden.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Seeds {
    pub model: u64,
    pub stream: u64,
    pub augment: u64,
    pub policy: u64,
    pub probe: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder_hidden: vec![256, 128],
            repr_dim: 64,
            proj_hidden: vec![64],
            proj_dim: 32,
            lr: 1e-4,
            tau: 0.5,
            weight_decay: 1e-4,
            buffer_capacity: 64,
            segment_size: 64,
            total_emissions: 20_000,
            policy: PolicyKind::Contrast,
            lazy_interval: 0,
            data: DataSource::Synthetic {
                classes: 10,
                dim: 32,
                per_class: 500,
                separation: 3.0,
                seed: 1234,
            },
            stc: 100,
            run_lengths: RunLengthMode::Fixed,
            layout: LayoutChoice::Vector,
            noise_sigma: None,
            mask_fraction: 0.1,
            crop_min: 1.0,
            crop_max: 1.0,
            label_fraction: 1.0,
            probe_epochs: 100,
            probe_lr: 3e-4,
            probe_batch: 256,
            train_fraction: 0.8,
            checkpoints: 10,
            probe_at_checkpoints: true,
            seed: 1,
            seed_model: None,
            seed_stream: None,
            seed_augment: None,
            seed_policy: None,
            seed_probe: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_capacity < 2 {
            return Err(Error::Config(format!(
                "buffer capacity must be at least 2, got {}",
                self.buffer_capacity
            )));
        }
        if self.segment_size < 2 || self.segment_size > self.buffer_capacity {
            return Err(Error::Config(format!(
                "segment size must be in [2, buffer capacity], got {}",
                self.segment_size
            )));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label fraction must be in (0, 1], got {}",
                self.label_fraction
            )));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        if self.stc == 0 {
            return Err(Error::Config("stc must be at least 1".into()));
        }
        if self.checkpoints == 0 {
            return Err(Error::Config("checkpoint count must be at least 1".into()));
        }
        if self.probe_epochs == 0 || self.probe_batch == 0 {
            return Err(Error::Config(
                "probe epochs and batch size must be positive".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if let LayoutChoice::Image {
            channels,
            height,
            width,
        } = self.layout
        {
            if channels * height * width == 0 {
                return Err(Error::Config("image layout dims must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        let derive = |tag: u64| crate::seeding::mix(self.seed, &[tag]);
        Seeds {
            model: self.seed_model.unwrap_or_else(|| derive(1)),
            stream: self.seed_stream.unwrap_or_else(|| derive(2)),
            augment: self.seed_augment.unwrap_or_else(|| derive(3)),
            policy: self.seed_policy.unwrap_or_else(|| derive(4)),
            probe: self.seed_probe.unwrap_or_else(|| derive(5)),
        }
    }

    pub fn lazy(&self) -> crate::scoring::LazyConfig {
        if self.lazy_interval == 0 {
            crate::scoring::LazyConfig::disabled()
        } else {
            crate::scoring::LazyConfig {
                enabled: true,
                interval: self.lazy_interval,
            }
        }
    }

    pub fn data_layout(&self, feature_dim: usize) -> Result<DataLayout> {
        match self.layout {
            LayoutChoice::Vector => Ok(DataLayout::Vector { len: feature_dim }),
            LayoutChoice::Image {
                channels,
                height,
                width,
            } => {
                if channels * height * width != feature_dim {
                    return Err(Error::Config(format!(
                        "image layout {channels}x{height}x{width} does not match feature dim {feature_dim}"
                    )));
                }
                Ok(DataLayout::Image {
                    channels,
                    height,
                    width,
                })
            }
        }
    }

    /// Parse a flat key=value file ('#' starts a comment) and apply it
    /// over the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::default();
        cfg.apply_pairs(parse_pairs(&text)?)?;
        Ok(cfg)
    }

    pub fn from_str_pairs(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_pairs(parse_pairs(text)?)?;
        Ok(cfg)
    }

    /// Apply overrides; later values win.
    pub fn apply_pairs(&mut self, pairs: Vec<(String, String)>) -> Result<()> {
        for (key, value) in pairs {
            self.apply_one(&key, &value)?;
        }
        Ok(())
    }

    fn apply_one(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value {value:?} for {what}"));
        match key {
            "model.encoder_hidden" => self.encoder_hidden = parse_usize_list(value)?,
            "model.repr_dim" => self.repr_dim = value.parse().map_err(|_| bad(key))?,
            "model.proj_hidden" => self.proj_hidden = parse_usize_list(value)?,
            "model.proj_dim" => self.proj_dim = value.parse().map_err(|_| bad(key))?,
            "train.lr" => self.lr = value.parse().map_err(|_| bad(key))?,
            "train.tau" => self.tau = value.parse().map_err(|_| bad(key))?,
            "train.weight_decay" => self.weight_decay = value.parse().map_err(|_| bad(key))?,
            "train.buffer_capacity" => {
                self.buffer_capacity = value.parse().map_err(|_| bad(key))?;
            }
            "train.segment_size" => self.segment_size = value.parse().map_err(|_| bad(key))?,
            "train.total_emissions" => {
                self.total_emissions = value.parse().map_err(|_| bad(key))?;
            }
            "policy.kind" => self.policy = value.parse()?,
            "policy.lazy_interval" => self.lazy_interval = value.parse().map_err(|_| bad(key))?,
            "stream.stc" => self.stc = value.parse().map_err(|_| bad(key))?,
            "stream.run_lengths" => {
                self.run_lengths = match value {
                    "fixed" => RunLengthMode::Fixed,
                    "geometric" => RunLengthMode::Geometric,
                    _ => return Err(bad(key)),
                };
            }
            "data.source" => match value {
                "synthetic" => {
                    if !matches!(self.data, DataSource::Synthetic { .. }) {
                        self.data = DataSource::Synthetic {
                            classes: 10,
                            dim: 32,
                            per_class: 500,
                            separation: 3.0,
                            seed: 1234,
                        };
                    }
                }
                "file" => {
                    if !matches!(self.data, DataSource::File { .. }) {
                        self.data = DataSource::File {
                            path: PathBuf::new(),
                        };
                    }
                }
                _ => return Err(bad(key)),
            },
            "data.path" => {
                self.data = DataSource::File {
                    path: PathBuf::from(value),
                };
            }
            "data.classes" | "data.dim" | "data.per_class" | "data.separation" | "data.seed" => {
                let DataSource::Synthetic {
                    classes,
                    dim,
                    per_class,
                    separation,
                    seed,
                } = &mut self.data
                else {
                    return Err(Error::Config(format!(
                        "{key} only applies to the synthetic data source"
                    )));
                };
                match key {
                    "data.classes" => *classes = value.parse().map_err(|_| bad(key))?,
                    "data.dim" => *dim = value.parse().map_err(|_| bad(key))?,
                    "data.per_class" => *per_class = value.parse().map_err(|_| bad(key))?,
                    "data.separation" => *separation = value.parse().map_err(|_| bad(key))?,
                    _ => *seed = value.parse().map_err(|_| bad(key))?,
                }
            }
            "augment.layout" => {
                self.layout = if value == "vector" {
                    LayoutChoice::Vector
                } else if let Some(dims) = value.strip_prefix("image:") {
                    let d = parse_usize_list(dims)?;
                    if d.len() != 3 {
                        return Err(bad(key));
                    }
                    LayoutChoice::Image {
                        channels: d[0],
                        height: d[1],
                        width: d[2],
                    }
                } else {
                    return Err(bad(key));
                };
            }
            "augment.noise_sigma" => {
                self.noise_sigma = if value == "auto" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(key))?)
                };
            }
            "augment.mask_fraction" => {
                self.mask_fraction = value.parse().map_err(|_| bad(key))?;
            }
            "augment.crop_min" => self.crop_min = value.parse().map_err(|_| bad(key))?,
            "augment.crop_max" => self.crop_max = value.parse().map_err(|_| bad(key))?,
            "eval.label_fraction" => {
                self.label_fraction = value.parse().map_err(|_| bad(key))?;
            }
            "eval.probe_epochs" => self.probe_epochs = value.parse().map_err(|_| bad(key))?,
            "eval.probe_lr" => self.probe_lr = value.parse().map_err(|_| bad(key))?,
            "eval.probe_batch" => self.probe_batch = value.parse().map_err(|_| bad(key))?,
            "eval.train_fraction" => {
                self.train_fraction = value.parse().map_err(|_| bad(key))?;
            }
            "eval.checkpoints" => self.checkpoints = value.parse().map_err(|_| bad(key))?,
            "eval.probe_at_checkpoints" => {
                self.probe_at_checkpoints = value.parse().map_err(|_| bad(key))?;
            }
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "seed.model" => self.seed_model = Some(value.parse().map_err(|_| bad(key))?),
            "seed.stream" => self.seed_stream = Some(value.parse().map_err(|_| bad(key))?),
            "seed.augment" => self.seed_augment = Some(value.parse().map_err(|_| bad(key))?),
            "seed.policy" => self.seed_policy = Some(value.parse().map_err(|_| bad(key))?),
            "seed.probe" => self.seed_probe = Some(value.parse().map_err(|_| bad(key))?),
            other => {
                return Err(Error::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }
}

fn parse_usize_list(value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad list entry {p:?}")))
        })
        .collect()
}

/// Split `key = value` lines; '#' starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Everything a finished run resolved from its configuration, written as
/// a JSON sidecar for provenance.
#[derive(Debug, Serialize)]
pub struct ResolvedConfig<'a> {
    pub config: &'a RunConfig,
    pub seeds: Seeds,
    pub noise_sigma: f64,
    pub format_version: u32,
}

impl ResolvedConfig<'_> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_keys_and_overrides() {
        let text = "
            policy.kind = fifo     # comment
            train.buffer_capacity = 8
            train.segment_size = 8
            stream.stc = 10
            seed = 42
        ";
        let cfg = RunConfig::from_str_pairs(text).unwrap();
        assert_eq!(cfg.policy, PolicyKind::Fifo);
        assert_eq!(cfg.buffer_capacity, 8);
        assert_eq!(cfg.stc, 10);
        assert_eq!(cfg.seed, 42);

        let mut cfg = cfg;
        cfg.apply_pairs(vec![("policy.kind".into(), "contrast".into())])
            .unwrap();
        assert_eq!(cfg.policy, PolicyKind::Contrast);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let r = RunConfig::from_str_pairs("bogus.key = 1");
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "eval.label_fraction = 0.0",
            "eval.label_fraction = 1.5",
            "train.buffer_capacity = 1",
            "train.tau = -0.5",
        ] {
            let cfg = RunConfig::from_str_pairs(text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
    }

    #[test]
    fn segment_cannot_exceed_buffer() {
        let cfg =
            RunConfig::from_str_pairs("train.buffer_capacity = 4\ntrain.segment_size = 8").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seeds_derive_from_master_and_respect_overrides() {
        let a = RunConfig {
            seed: 7,
            ..RunConfig::default()
        };
        let b = RunConfig {
            seed: 8,
            ..RunConfig::default()
        };
        assert_ne!(a.seeds().stream, b.seeds().stream);
        let c = RunConfig {
            seed: 7,
            seed_stream: Some(123),
            ..RunConfig::default()
        };
        assert_eq!(c.seeds().stream, 123);
        assert_eq!(c.seeds().model, a.seeds().model);
    }

    #[test]
    fn file_source_overrides_synthetic() {
        let cfg = RunConfig::from_str_pairs("data.path = /tmp/x.ssds").unwrap();
        assert!(matches!(cfg.data, DataSource::File { .. }));
    }

    #[test]
    fn image_layout_parses() {
        let cfg = RunConfig::from_str_pairs("augment.layout = image:3,8,8").unwrap();
        assert_eq!(
            cfg.layout,
            LayoutChoice::Image {
                channels: 3,
                height: 8,
                width: 8
            }
        );
        assert!(cfg.data_layout(192).is_ok());
        assert!(cfg.data_layout(100).is_err());
    }
}
