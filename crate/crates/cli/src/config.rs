//! Flat `section.key = value` configuration with layered resolution:
//! built-in defaults, then an optional preset, then a file, then
//! command-line overrides, then the `BTTS_SEED` environment variable.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use btts_core::corpus::toy::toy_signal_config;
use btts_core::model::ModelConfig;
use btts_core::signal::SignalConfig;
use btts_core::training::TrainConfig;

use crate::CliError;

pub const SEED_ENV: &str = "BTTS_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Full-size defaults.
    Default,
    /// Small settings matched to the bundled toy corpus.
    Toy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub signal: SignalConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Resolved {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Default => Self {
                signal: SignalConfig::default(),
                model: ModelConfig::default(),
                train: TrainConfig::default(),
            },
            Preset::Toy => Self {
                signal: toy_signal_config(),
                model: ModelConfig::toy(ModelConfig::default().vocab_size),
                train: TrainConfig::toy(),
            },
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let s = &mut self.signal;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "signal.fft_size" => s.fft_size = parse(key, value)?,
            "signal.win_length" => s.win_length = parse(key, value)?,
            "signal.hop_length" => s.hop_length = parse(key, value)?,
            "signal.mel_bands" => s.mel_bands = parse(key, value)?,
            "signal.preemphasis_coeff" => s.preemphasis_coeff = parse(key, value)?,
            "signal.sample_rate" => s.sample_rate = parse(key, value)?,
            "signal.griffin_lim_iters" => s.griffin_lim_iters = parse(key, value)?,
            "signal.ref_level_db" => s.ref_level_db = parse(key, value)?,
            "signal.min_level_db" => s.min_level_db = parse(key, value)?,
            "model.vocab_size" => m.vocab_size = parse(key, value)?,
            "model.embed_dim" => m.embed_dim = parse(key, value)?,
            "model.prenet_dims" => {
                m.prenet_dims = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_, _>>()?
            }
            "model.prenet_dropout" => m.prenet_dropout = parse(key, value)?,
            "model.encoder_bank_k" => m.encoder_bank_k = parse(key, value)?,
            "model.conv_channels" => m.conv_channels = parse(key, value)?,
            "model.highway_layers" => m.highway_layers = parse(key, value)?,
            "model.gru_dim" => m.gru_dim = parse(key, value)?,
            "model.attention_dim" => m.attention_dim = parse(key, value)?,
            "model.decoder_layers" => m.decoder_layers = parse(key, value)?,
            "model.mel_bands" => m.mel_bands = parse(key, value)?,
            "model.linear_bins" => m.linear_bins = parse(key, value)?,
            "model.reduction_r" => m.reduction_r = parse(key, value)?,
            "model.max_decoder_steps" => m.max_decoder_steps = parse(key, value)?,
            "model.stop_threshold_db" => m.stop_threshold_db = parse(key, value)?,
            "model.stop_patience" => m.stop_patience = parse(key, value)?,
            "model.seed" => m.seed = parse(key, value)?,
            "train.learning_rate" => t.learning_rate = parse(key, value)?,
            "train.lr_decay_steps" => t.lr_decay_steps = parse(key, value)?,
            "train.lr_decay_rate" => t.lr_decay_rate = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.max_steps" => t.max_steps = parse(key, value)?,
            "train.checkpoint_interval" => t.checkpoint_interval = parse(key, value)?,
            "train.grad_clip_norm" => t.grad_clip_norm = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.signal;
        let m = &self.model;
        let t = &self.train;
        let dims: Vec<String> = m.prenet_dims.iter().map(|d| d.to_string()).collect();
        vec![
            ("signal.fft_size", s.fft_size.to_string()),
            ("signal.win_length", s.win_length.to_string()),
            ("signal.hop_length", s.hop_length.to_string()),
            ("signal.mel_bands", s.mel_bands.to_string()),
            ("signal.preemphasis_coeff", s.preemphasis_coeff.to_string()),
            ("signal.sample_rate", s.sample_rate.to_string()),
            ("signal.griffin_lim_iters", s.griffin_lim_iters.to_string()),
            ("signal.ref_level_db", s.ref_level_db.to_string()),
            ("signal.min_level_db", s.min_level_db.to_string()),
            ("model.vocab_size", m.vocab_size.to_string()),
            ("model.embed_dim", m.embed_dim.to_string()),
            ("model.prenet_dims", dims.join(",")),
            ("model.prenet_dropout", m.prenet_dropout.to_string()),
            ("model.encoder_bank_k", m.encoder_bank_k.to_string()),
            ("model.conv_channels", m.conv_channels.to_string()),
            ("model.highway_layers", m.highway_layers.to_string()),
            ("model.gru_dim", m.gru_dim.to_string()),
            ("model.attention_dim", m.attention_dim.to_string()),
            ("model.decoder_layers", m.decoder_layers.to_string()),
            ("model.mel_bands", m.mel_bands.to_string()),
            ("model.linear_bins", m.linear_bins.to_string()),
            ("model.reduction_r", m.reduction_r.to_string()),
            ("model.max_decoder_steps", m.max_decoder_steps.to_string()),
            ("model.stop_threshold_db", m.stop_threshold_db.to_string()),
            ("model.stop_patience", m.stop_patience.to_string()),
            ("model.seed", m.seed.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.lr_decay_steps", t.lr_decay_steps.to_string()),
            ("train.lr_decay_rate", t.lr_decay_rate.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.max_steps", t.max_steps.to_string()),
            ("train.checkpoint_interval", t.checkpoint_interval.to_string()),
            ("train.grad_clip_norm", t.grad_clip_norm.to_string()),
            ("train.seed", t.seed.to_string()),
        ]
    }

    /// Config file text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{source} line {}: expected `section.key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("{source} line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Checks every section and their agreement; errors name the field.
    pub fn validate(&self) -> Result<(), CliError> {
        self.signal
            .validate()
            .map_err(|e| CliError::Usage(format!("signal: {e}")))?;
        self.model
            .validate()
            .map_err(|e| CliError::Usage(format!("model: {e}")))?;
        self.model
            .check_signal(&self.signal)
            .map_err(|e| CliError::Usage(format!("model: {e}")))?;
        self.train
            .validate()
            .map_err(|e| CliError::Usage(format!("train: {e}")))?;
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("{key}: cannot parse {value:?}: {e}")))
}

/// Layers a file, `key=value` overrides and the seed environment
/// variable over `base`, then validates.
pub fn load_config(
    base: Resolved,
    path: Option<&Path>,
    overrides: &[String],
    env_seed: Option<&str>,
) -> Result<Resolved, CliError> {
    let mut cfg = base;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        cfg.apply_text(&text, &p.display().to_string())?;
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {o:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = env_seed {
        let seed: u64 = parse(SEED_ENV, seed.trim())?;
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}
