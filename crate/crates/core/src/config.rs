//! Run configuration: a TOML file with sections, plus `key=value` overrides.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::schedule::ScheduleKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Lookback length L.
    pub lookback: usize,
    /// Horizon H.
    pub horizon: usize,
    /// Channel count N; 0 means "take it from the data".
    pub channels: usize,
    /// Memory / latent width d.
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub denoiser_hidden: Vec<usize>,
    pub step_emb_dim: usize,
    pub log_var_init: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            lookback: 96,
            horizon: 24,
            channels: 0,
            latent_dim: 64,
            encoder_hidden: vec![128],
            denoiser_hidden: vec![256, 256, 256],
            step_emb_dim: 16,
            log_var_init: -4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    /// N1.
    pub semantic_blocks: usize,
    /// N2.
    pub episodic_capacity: usize,
    /// N3.
    pub queue_capacity: usize,
    pub recall_top_k: usize,
    /// Margin of the contrastive term.
    pub margin: f64,
    pub use_semantic: bool,
    pub use_episodic: bool,
    pub shared_memory: bool,
}

impl Default for MemorySection {
    fn default() -> Self {
        Self {
            semantic_blocks: 64,
            episodic_capacity: 70,
            queue_capacity: 35,
            recall_top_k: 5,
            margin: 1.0,
            use_semantic: true,
            use_episodic: true,
            shared_memory: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    /// `linear-scaled` or `linear`.
    pub kind: String,
    pub beta_min: f64,
    /// Only used by `linear`.
    pub beta_max: f64,
    /// Only used by `linear-scaled`.
    pub terminal_alpha_bar: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { steps: 10, kind: "linear-scaled".into(), beta_min: 1e-4, beta_max: 0.5, terminal_alpha_bar: 0.02 }
    }
}

impl ScheduleSection {
    pub fn kind(&self) -> Result<ScheduleKind> {
        match self.kind.as_str() {
            "linear-scaled" => Ok(ScheduleKind::LinearScaled {
                beta_min: self.beta_min,
                terminal_alpha_bar: self.terminal_alpha_bar,
            }),
            "linear" => Ok(ScheduleKind::Linear { beta_min: self.beta_min, beta_max: self.beta_max }),
            other => Err(Error::Config(format!("unknown schedule kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Weight of the consistency term.
    pub alpha1: f64,
    /// Weight of the margin term.
    pub alpha2: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 disables the cap.
    pub max_steps: usize,
    pub grad_clip: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 only at the end.
    pub checkpoint_every: usize,
    /// Stop when validation MAE has not improved for this many epochs; 0 disables.
    pub patience: usize,
    /// Consecutive aborted steps tolerated before training fails.
    pub max_aborted_steps: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            alpha1: 0.1,
            alpha2: 0.1,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 10,
            max_steps: 0,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_every: 0,
            patience: 0,
            max_aborted_steps: 10,
        }
    }
}

impl TrainSection {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV path; empty means "generate from the [synth] section".
    pub path: String,
    /// Chronological train:val:test ratio, e.g. `7:1:2`.
    pub split: String,
    pub train_stride: usize,
    /// 0 means "use the horizon".
    pub eval_stride: usize,
    /// `strict` or `ffill`.
    pub missing: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { path: String::new(), split: "7:1:2".into(), train_stride: 1, eval_stride: 0, missing: "strict".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub substeps: usize,
    /// `ddim` or `ancestral`.
    pub sampler: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { substeps: 1, sampler: "ddim".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub channels: usize,
    pub length: usize,
    pub periods: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Phase offset between consecutive channels, radians.
    pub phase_step: f64,
    pub motifs: usize,
    pub motif_len: usize,
    pub motif_amplitude: f64,
    pub events: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            channels: 4,
            length: 20_000,
            periods: vec![24.0, 168.0],
            amplitudes: vec![1.0, 0.5],
            phase_step: 0.7,
            motifs: 6,
            motif_len: 32,
            motif_amplitude: 2.0,
            events: 400,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub memory: MemorySection,
    pub schedule: ScheduleSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub eval: EvalSection,
    pub synth: SynthSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text` then applies `key=value` overrides. Keys are either
    /// `section.field` or a bare field name that occurs in exactly one section.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        let defaults = toml::Table::try_from(Config::default()).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
            let (section, field) = resolve_key(&defaults, key.trim())?;
            let value = parse_value(raw.trim());
            let entry = table
                .entry(section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => {
                    t.insert(field, value);
                }
                _ => return Err(Error::Config(format!("{section} is not a section"))),
            }
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("config error: {e}")))?;
        Ok(cfg)
    }

    /// Every field with defaults materialised.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    /// SHA-256 of the resolved TOML, hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.resolved_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let mem = &self.memory;
        let positive = [
            ("model.lookback", m.lookback),
            ("model.horizon", m.horizon),
            ("model.channels", m.channels),
            ("model.latent_dim", m.latent_dim),
            ("model.step_emb_dim", m.step_emb_dim),
            ("memory.semantic_blocks", mem.semantic_blocks),
            ("memory.episodic_capacity", mem.episodic_capacity),
            ("memory.queue_capacity", mem.queue_capacity),
            ("memory.recall_top_k", mem.recall_top_k),
            ("schedule.steps", self.schedule.steps),
            ("train.batch_size", self.train.batch_size),
            ("train.train_stride", self.data.train_stride),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if m.encoder_hidden.contains(&0) || m.denoiser_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !m.step_emb_dim.is_multiple_of(2) {
            return Err(Error::Config("model.step_emb_dim must be even".into()));
        }
        if mem.queue_capacity > mem.episodic_capacity {
            return Err(Error::Config("memory.queue_capacity must not exceed memory.episodic_capacity".into()));
        }
        let per_update = if mem.shared_memory { m.channels } else { 1 };
        if mem.use_episodic && per_update > mem.queue_capacity {
            return Err(Error::Config(format!(
                "{per_update} patterns per update exceed memory.queue_capacity {}",
                mem.queue_capacity
            )));
        }
        let t = &self.train;
        if !(t.alpha1 >= 0.0 && t.alpha2 >= 0.0) {
            return Err(Error::Config("train.alpha1 and train.alpha2 must be non-negative".into()));
        }
        if !(t.lr > 0.0) || !(t.grad_clip > 0.0) {
            return Err(Error::Config("train.lr and train.grad_clip must be positive".into()));
        }
        if !(self.memory.margin >= 0.0) {
            return Err(Error::Config("memory.margin must be non-negative".into()));
        }
        if self.eval.substeps == 0 || self.eval.substeps > self.schedule.steps {
            return Err(Error::Config(format!("eval.substeps must lie in 1..={}", self.schedule.steps)));
        }
        if !matches!(self.eval.sampler.as_str(), "ddim" | "ancestral") {
            return Err(Error::Config(format!("unknown sampler {:?}", self.eval.sampler)));
        }
        if !matches!(self.data.missing.as_str(), "strict" | "ffill") {
            return Err(Error::Config(format!("unknown missing-value policy {:?}", self.data.missing)));
        }
        self.schedule.kind()?;
        Ok(())
    }

    pub fn eval_stride(&self) -> usize {
        if self.data.eval_stride == 0 {
            self.model.horizon
        } else {
            self.data.eval_stride
        }
    }
}

fn resolve_key(defaults: &toml::Table, key: &str) -> Result<(String, String)> {
    if let Some((section, field)) = key.split_once('.') {
        let known = defaults.get(section).and_then(|s| s.as_table()).is_some_and(|t| t.contains_key(field));
        if !known {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        return Ok((section.to_string(), field.to_string()));
    }
    let hits: Vec<&String> = defaults
        .iter()
        .filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key)))
        .map(|(k, _)| k)
        .collect();
    match hits.as_slice() {
        [one] => Ok(((*one).clone(), key.to_string())),
        [] => Err(Error::Config(format!("unknown config key {key:?}"))),
        _ => Err(Error::Config(format!("ambiguous config key {key:?}; use section.{key}"))),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_resolved_text() {
        let cfg = Config::default();
        let back = Config::from_toml(&cfg.resolved_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn overrides_win_over_file() {
        let text = "[train]\nlr = 0.5\n[memory]\nmargin = 2.0\n";
        let cfg = Config::from_toml_with_overrides(
            text,
            &["train.lr=0.01".into(), "semantic_blocks=8".into(), "use_episodic=false".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.memory.semantic_blocks, 8);
        assert!(!cfg.memory.use_episodic);
        assert_eq!(cfg.memory.margin, 2.0);
    }

    #[test]
    fn string_override_without_quotes() {
        let cfg = Config::from_toml_with_overrides("", &["data.path=/tmp/x.csv".into()]).unwrap();
        assert_eq!(cfg.data.path, "/tmp/x.csv");
    }

    #[test]
    fn unknown_and_ambiguous_keys_rejected() {
        assert!(Config::from_toml("[train]\nbogus = 1\n").is_err());
        assert!(Config::from_toml_with_overrides("", &["nope=1".into()]).is_err());
        assert!(Config::from_toml_with_overrides("", &["channels=3".into()]).is_err());
        assert!(Config::from_toml_with_overrides("", &["seed=3".into()]).is_err());
        assert!(Config::from_toml_with_overrides("", &["lr".into()]).is_err());
    }

    #[test]
    fn validation_catches_queue_larger_than_memory() {
        let mut cfg = Config::default();
        cfg.model.channels = 4;
        cfg.validate().unwrap();
        cfg.memory.queue_capacity = 80;
        assert!(cfg.validate().is_err());
        let mut cfg = Config::default();
        cfg.model.channels = 40;
        assert!(cfg.validate().is_err());
        cfg.memory.shared_memory = false;
        cfg.validate().unwrap();
    }
}
