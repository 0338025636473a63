//! Pipeline configuration: a `key = value` file plus `--set` overrides.
//!
//! Every key and its default is listed in [`PipelineConfig::to_document`];
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::featurize::{FeatureConfig, FeatureMode, PruneConfig, SelectionConfig, SelectionMode};
use crate::harness::{logspace, DataVariant, Grid, TrainConfig};
use crate::kv::Document;
use crate::metrics::MetricMode;
use crate::rng::substream_seed;
use crate::sync::AlignConfig;
use crate::synth::{ChannelTerm, QuestionSignal, SynthConfig};
use crate::types::N_QUESTIONS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Toggle {
    Off,
    On,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeChoice {
    Median,
    Catalog,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthPreset {
    Planted,
    Persistence,
}

/// Generator knobs exposed through the config; see [`SynthConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub enabled: bool,
    pub preset: SynthPreset,
    pub n_patients: usize,
    pub visits_min: usize,
    pub visits_max: usize,
    pub visit_gap_mean: f64,
    pub visit_gap_jitter: f64,
    pub channels: usize,
    /// `None` means the preset's own noise level.
    pub noise_std: Option<f64>,
    pub signal_coef: f64,
    pub signal_threshold: f64,
    pub self_fraction: f64,
    pub disagreement: f64,
    pub sensor_missing_frac: f64,
    pub static_missing_frac: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSettings {
            enabled: false,
            preset: SynthPreset::Planted,
            n_patients: d.n_patients,
            visits_min: d.visits_min,
            visits_max: d.visits_max,
            visit_gap_mean: d.visit_gap_mean,
            visit_gap_jitter: d.visit_gap_jitter,
            channels: d.n_channels,
            noise_std: None,
            signal_coef: -1.0,
            signal_threshold: 5.0,
            self_fraction: d.self_fraction,
            disagreement: d.disagreement_fraction,
            sensor_missing_frac: d.sensor_missing_frac,
            static_missing_frac: d.static_missing_frac,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub tail_max_gap_days: i64,
    pub horizon_min_days: i64,
    pub augmentation: Toggle,
    pub augment_alpha: f64,
    pub feature_mode: ModeChoice,
    pub selection_mode: SelectionMode,
    pub fdr_level: f64,
    pub top_k: usize,
    pub prune_max_missing_frac: f64,
    pub prune_min_variance: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
    pub alphas: Vec<f64>,
    pub outer_k: usize,
    pub inner_k: usize,
    pub holdout_frac: f64,
    pub metric_mode: MetricMode,
    pub tol: f64,
    pub max_iter: usize,
    pub synth: SynthSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input_dir: "data".into(),
            output_dir: "out".into(),
            seed: 0,
            tail_max_gap_days: 60,
            horizon_min_days: 90,
            augmentation: Toggle::Off,
            augment_alpha: 0.05,
            feature_mode: ModeChoice::Median,
            selection_mode: SelectionMode::KeepAll,
            fdr_level: 0.05,
            top_k: 10,
            prune_max_missing_frac: 0.3,
            prune_min_variance: 1e-12,
            lambda_min: 1e-4,
            lambda_max: 10.0,
            lambda_count: 20,
            alphas: (1..=10).map(|i| i as f64 / 10.0).collect(),
            outer_k: 10,
            inner_k: 5,
            holdout_frac: 0.2,
            metric_mode: MetricMode::Rounded,
            tol: 1e-6,
            max_iter: 10_000,
            synth: SynthSettings::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value {v:?} for {key} (on|off)"))),
    }
}

fn toggle_str(t: Toggle) -> &'static str {
    match t {
        Toggle::Off => "off",
        Toggle::On => "on",
        Toggle::Both => "both",
    }
}

fn mode_str(m: ModeChoice) -> &'static str {
    match m {
        ModeChoice::Median => "median",
        ModeChoice::Catalog => "catalog",
        ModeChoice::Both => "both",
    }
}

impl PipelineConfig {
    /// Sets one key; unknown keys and malformed values are config errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "input_dir" => self.input_dir = v.into(),
            "output_dir" => self.output_dir = v.into(),
            "seed" => self.seed = parse(key, v)?,
            "tail_max_gap_days" => self.tail_max_gap_days = parse(key, v)?,
            "horizon_min_days" => self.horizon_min_days = parse(key, v)?,
            "augmentation" => {
                self.augmentation = match v {
                    "off" => Toggle::Off,
                    "on" => Toggle::On,
                    "both" => Toggle::Both,
                    _ => return Err(Error::Config(format!("bad value {v:?} for {key} (off|on|both)"))),
                }
            }
            "augment_alpha" => self.augment_alpha = parse(key, v)?,
            "feature_mode" => {
                self.feature_mode = match v {
                    "median" => ModeChoice::Median,
                    "catalog" => ModeChoice::Catalog,
                    "both" => ModeChoice::Both,
                    _ => {
                        return Err(Error::Config(format!(
                            "bad value {v:?} for {key} (median|catalog|both)"
                        )))
                    }
                }
            }
            "selection_mode" => self.selection_mode = v.parse()?,
            "fdr_level" => self.fdr_level = parse(key, v)?,
            "top_k" => self.top_k = parse(key, v)?,
            "prune_max_missing_frac" => self.prune_max_missing_frac = parse(key, v)?,
            "prune_min_variance" => self.prune_min_variance = parse(key, v)?,
            "lambda_min" => self.lambda_min = parse(key, v)?,
            "lambda_max" => self.lambda_max = parse(key, v)?,
            "lambda_count" => self.lambda_count = parse(key, v)?,
            "alphas" => {
                self.alphas = v
                    .split(',')
                    .map(|a| parse(key, a.trim()))
                    .collect::<Result<_>>()?
            }
            "outer_k" => self.outer_k = parse(key, v)?,
            "inner_k" => self.inner_k = parse(key, v)?,
            "holdout_frac" => self.holdout_frac = parse(key, v)?,
            "metric_mode" => self.metric_mode = v.parse()?,
            "tol" => self.tol = parse(key, v)?,
            "max_iter" => self.max_iter = parse(key, v)?,
            "synth.enabled" => s.enabled = parse_bool(key, v)?,
            "synth.preset" => {
                s.preset = match v {
                    "planted" => SynthPreset::Planted,
                    "persistence" => SynthPreset::Persistence,
                    _ => {
                        return Err(Error::Config(format!(
                            "bad value {v:?} for {key} (planted|persistence)"
                        )))
                    }
                }
            }
            "synth.n_patients" => s.n_patients = parse(key, v)?,
            "synth.visits_min" => s.visits_min = parse(key, v)?,
            "synth.visits_max" => s.visits_max = parse(key, v)?,
            "synth.visit_gap_mean" => s.visit_gap_mean = parse(key, v)?,
            "synth.visit_gap_jitter" => s.visit_gap_jitter = parse(key, v)?,
            "synth.channels" => s.channels = parse(key, v)?,
            "synth.noise_std" => {
                s.noise_std = if v == "preset" { None } else { Some(parse(key, v)?) }
            }
            "synth.signal_coef" => s.signal_coef = parse(key, v)?,
            "synth.signal_threshold" => s.signal_threshold = parse(key, v)?,
            "synth.self_fraction" => s.self_fraction = parse(key, v)?,
            "synth.disagreement" => s.disagreement = parse(key, v)?,
            "synth.sensor_missing_frac" => s.sensor_missing_frac = parse(key, v)?,
            "synth.static_missing_frac" => s.static_missing_frac = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (k, v) in doc.entries() {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_document(&Document::parse(&text)?)
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_document(&self) -> Document {
        let s = &self.synth;
        let mut d = Document::new();
        d.push("input_dir", self.input_dir.display());
        d.push("output_dir", self.output_dir.display());
        d.push("seed", self.seed);
        d.push("tail_max_gap_days", self.tail_max_gap_days);
        d.push("horizon_min_days", self.horizon_min_days);
        d.push("augmentation", toggle_str(self.augmentation));
        d.push("augment_alpha", self.augment_alpha);
        d.push("feature_mode", mode_str(self.feature_mode));
        d.push("selection_mode", self.selection_mode.as_str());
        d.push("fdr_level", self.fdr_level);
        d.push("top_k", self.top_k);
        d.push("prune_max_missing_frac", self.prune_max_missing_frac);
        d.push("prune_min_variance", self.prune_min_variance);
        d.push("lambda_min", self.lambda_min);
        d.push("lambda_max", self.lambda_max);
        d.push("lambda_count", self.lambda_count);
        let alphas: Vec<String> = self.alphas.iter().map(|a| a.to_string()).collect();
        d.push("alphas", alphas.join(","));
        d.push("outer_k", self.outer_k);
        d.push("inner_k", self.inner_k);
        d.push("holdout_frac", self.holdout_frac);
        d.push("metric_mode", self.metric_mode.as_str());
        d.push("tol", self.tol);
        d.push("max_iter", self.max_iter);
        d.push("synth.enabled", if s.enabled { "on" } else { "off" });
        d.push(
            "synth.preset",
            match s.preset {
                SynthPreset::Planted => "planted",
                SynthPreset::Persistence => "persistence",
            },
        );
        d.push("synth.n_patients", s.n_patients);
        d.push("synth.visits_min", s.visits_min);
        d.push("synth.visits_max", s.visits_max);
        d.push("synth.visit_gap_mean", s.visit_gap_mean);
        d.push("synth.visit_gap_jitter", s.visit_gap_jitter);
        d.push("synth.channels", s.channels);
        d.push(
            "synth.noise_std",
            s.noise_std.map(|v| v.to_string()).unwrap_or_else(|| "preset".into()),
        );
        d.push("synth.signal_coef", s.signal_coef);
        d.push("synth.signal_threshold", s.signal_threshold);
        d.push("synth.self_fraction", s.self_fraction);
        d.push("synth.disagreement", s.disagreement);
        d.push("synth.sensor_missing_frac", s.sensor_missing_frac);
        d.push("synth.static_missing_frac", s.static_missing_frac);
        d
    }

    /// SHA-256 of the canonical document, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_document().to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.tail_max_gap_days < 0 || self.horizon_min_days < 0 {
            return bad("day thresholds must be >= 0");
        }
        if !(self.augment_alpha > 0.0 && self.augment_alpha < 1.0) {
            return bad("augment_alpha must lie in (0, 1)");
        }
        if !(self.fdr_level > 0.0 && self.fdr_level <= 1.0) {
            return bad("fdr_level must lie in (0, 1]");
        }
        if self.top_k == 0 {
            return bad("top_k must be positive");
        }
        if !(0.0..=1.0).contains(&self.prune_max_missing_frac) || self.prune_min_variance < 0.0 {
            return bad("prune thresholds out of range");
        }
        if !(self.lambda_min > 0.0 && self.lambda_max >= self.lambda_min) || self.lambda_count == 0 {
            return bad("need 0 < lambda_min <= lambda_max and lambda_count >= 1");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("alphas must be a non-empty list in [0, 1]");
        }
        if self.outer_k < 2 || self.inner_k < 2 {
            return bad("outer_k and inner_k must be >= 2");
        }
        if !(self.holdout_frac > 0.0 && self.holdout_frac < 1.0) {
            return bad("holdout_frac must lie in (0, 1)");
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return bad("tol must be > 0 and max_iter >= 1");
        }
        self.synth_config()?.validate()
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            tail_max_gap_days: self.tail_max_gap_days,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            alpha: self.augment_alpha,
            horizon_min_days: self.horizon_min_days,
        }
    }

    pub fn feature_modes(&self) -> Vec<FeatureMode> {
        match self.feature_mode {
            ModeChoice::Median => vec![FeatureMode::Median],
            ModeChoice::Catalog => vec![FeatureMode::Catalog],
            ModeChoice::Both => vec![FeatureMode::Median, FeatureMode::Catalog],
        }
    }

    /// Training-data variants considered by model selection.
    pub fn data_variants(&self) -> Vec<DataVariant> {
        match self.augmentation {
            Toggle::Off => vec![DataVariant::Clinical],
            Toggle::On => vec![DataVariant::Augmented],
            Toggle::Both => vec![DataVariant::Clinical, DataVariant::Augmented],
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            prune: PruneConfig {
                max_missing_frac: self.prune_max_missing_frac,
                min_variance: self.prune_min_variance,
            },
            selection: SelectionConfig {
                mode: self.selection_mode,
                fdr_level: self.fdr_level,
                k: self.top_k,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            outer_k: self.outer_k,
            inner_k: self.inner_k,
            seed: substream_seed(self.seed, "folds"),
            grid: Grid {
                lambdas: logspace(self.lambda_min, self.lambda_max, self.lambda_count),
                elasticnet_alphas: self.alphas.clone(),
            },
            features: self.feature_config(),
            metric_mode: self.metric_mode,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn holdout_seed(&self) -> u64 {
        substream_seed(self.seed, "holdout")
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let s = &self.synth;
        let signal = match s.preset {
            SynthPreset::Persistence => QuestionSignal::persistence(),
            SynthPreset::Planted => QuestionSignal {
                intercept: 0.0,
                previous_weight: 1.0,
                channel_terms: vec![ChannelTerm::Indicator {
                    channel: 0,
                    threshold: s.signal_threshold,
                    coef: s.signal_coef,
                }],
                static_terms: vec![],
            },
        };
        let preset_noise = match s.preset {
            SynthPreset::Persistence => 0.0,
            SynthPreset::Planted => SynthConfig::default().noise_std,
        };
        let cfg = SynthConfig {
            seed: substream_seed(self.seed, "synth"),
            n_patients: s.n_patients,
            visits_min: s.visits_min,
            visits_max: s.visits_max,
            visit_gap_mean: s.visit_gap_mean,
            visit_gap_jitter: s.visit_gap_jitter,
            n_channels: s.channels,
            signals: vec![signal; N_QUESTIONS],
            noise_std: s.noise_std.unwrap_or(preset_noise),
            self_fraction: s.self_fraction,
            disagreement_fraction: s.disagreement,
            sensor_missing_frac: s.sensor_missing_frac,
            static_missing_frac: s.static_missing_frac,
            ..SynthConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.set_pair("feature_mode=both").unwrap();
        cfg.set_pair("alphas = 0.5, 1").unwrap();
        cfg.set_pair("synth.noise_std=0").unwrap();
        let back = PipelineConfig::from_document(&cfg.to_document()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(PipelineConfig::default().hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        let mut cfg = PipelineConfig::default();
        assert!(matches!(cfg.set("lamda_min", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("outer_k", "ten"), Err(Error::Config(_))));
        let doc = Document::parse("holdout_frac = 1.5").unwrap();
        assert!(PipelineConfig::from_document(&doc).is_err());
    }

    #[test]
    fn default_grid() {
        let t = PipelineConfig::default().train_config();
        assert_eq!(t.grid, Grid::default());
    }
}
