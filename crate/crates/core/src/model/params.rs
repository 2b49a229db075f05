use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};

/// How a tensor is initialized and whether the optimizer touches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Glorot uniform over `(rows, cols)`.
    Weight,
    Bias,
    /// Highway transform-gate bias, starts at -1 so layers begin near identity.
    GateBias,
    BnScale,
    BnOffset,
    /// Batch-norm running statistics, updated outside the optimizer.
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub role: ParamRole,
    /// Shape in terms of config fields, e.g. `(K*in, conv_channels)`.
    pub formula: String,
}

struct Schema {
    specs: Vec<ParamSpec>,
}

impl Schema {
    fn push(&mut self, name: String, rows: usize, cols: usize, role: ParamRole, formula: String) {
        self.specs.push(ParamSpec {
            name,
            rows,
            cols,
            role,
            formula,
        });
    }

    fn affine(&mut self, prefix: &str, input: (usize, &str), output: (usize, &str), bias: bool) {
        self.push(
            format!("{prefix}.w"),
            input.0,
            output.0,
            ParamRole::Weight,
            format!("({}, {})", input.1, output.1),
        );
        if bias {
            self.push(
                format!("{prefix}.b"),
                1,
                output.0,
                ParamRole::Bias,
                format!("(1, {})", output.1),
            );
        }
    }

    fn batch_norm(&mut self, prefix: &str, ch: (usize, &str)) {
        let f = format!("(1, {})", ch.1);
        self.push(format!("{prefix}.gamma"), 1, ch.0, ParamRole::BnScale, f.clone());
        self.push(format!("{prefix}.beta"), 1, ch.0, ParamRole::BnOffset, f.clone());
        self.push(
            format!("{prefix}.running_mean"),
            1,
            ch.0,
            ParamRole::RunningMean,
            f.clone(),
        );
        self.push(format!("{prefix}.running_var"), 1, ch.0, ParamRole::RunningVar, f);
    }

    fn prenet(&mut self, prefix: &str, cfg: &ModelConfig, input: (usize, &str)) {
        let mut prev = (input.0, input.1.to_string());
        for (i, &d) in cfg.prenet_dims.iter().enumerate() {
            let out = format!("prenet_dims[{i}]");
            self.affine(&format!("{prefix}.{i}"), (prev.0, &prev.1), (d, &out), true);
            prev = (d, out);
        }
    }

    fn gru(&mut self, prefix: &str, input: (usize, &str), hidden: (usize, &str)) {
        let h = hidden.1;
        self.push(
            format!("{prefix}.w_x"),
            input.0,
            3 * hidden.0,
            ParamRole::Weight,
            format!("({}, 3*{h})", input.1),
        );
        self.push(
            format!("{prefix}.u_zr"),
            hidden.0,
            2 * hidden.0,
            ParamRole::Weight,
            format!("({h}, 2*{h})"),
        );
        self.push(
            format!("{prefix}.u_h"),
            hidden.0,
            hidden.0,
            ParamRole::Weight,
            format!("({h}, {h})"),
        );
        self.push(
            format!("{prefix}.b"),
            1,
            3 * hidden.0,
            ParamRole::Bias,
            format!("(1, 3*{h})"),
        );
    }

    fn cbhg(&mut self, prefix: &str, cfg: &ModelConfig, input: (usize, &str)) {
        let c = (cfg.conv_channels, "conv_channels");
        let (d, df) = input;
        for k in 1..=cfg.encoder_bank_k {
            let p = format!("{prefix}.bank.{k}");
            self.affine(&p, (k * d, &format!("{k}*{df}")), c, true);
            self.batch_norm(&format!("{p}.bn"), c);
        }
        let kc = cfg.encoder_bank_k * cfg.conv_channels;
        self.affine(
            &format!("{prefix}.proj1"),
            (3 * kc, "3*encoder_bank_k*conv_channels"),
            c,
            true,
        );
        self.batch_norm(&format!("{prefix}.proj1.bn"), c);
        self.affine(
            &format!("{prefix}.proj2"),
            (3 * cfg.conv_channels, "3*conv_channels"),
            input,
            false,
        );
        self.batch_norm(&format!("{prefix}.proj2.bn"), input);
        for l in 0..cfg.highway_layers {
            let p = format!("{prefix}.highway.{l}");
            self.affine(&format!("{p}.h"), input, input, true);
            self.push(format!("{p}.t.w"), d, d, ParamRole::Weight, format!("({df}, {df})"));
            self.push(format!("{p}.t.b"), 1, d, ParamRole::GateBias, format!("(1, {df})"));
        }
        self.gru(&format!("{prefix}.gru_fw"), input, (cfg.gru_dim, "gru_dim"));
        self.gru(&format!("{prefix}.gru_bw"), input, (cfg.gru_dim, "gru_dim"));
    }
}

/// The full parameter list for `cfg`, in a fixed order.
pub fn param_schema(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Schema { specs: Vec::new() };
    let enc = (cfg.encoder_dim(), "2*gru_dim");
    let att = (cfg.attention_dim, "attention_dim");
    let prenet_out = cfg.prenet_out(cfg.embed_dim);
    let prenet_out_f = if cfg.prenet_dims.is_empty() {
        "embed_dim".to_string()
    } else {
        format!("prenet_dims[{}]", cfg.prenet_dims.len() - 1)
    };
    s.push(
        "encoder.embedding".into(),
        cfg.vocab_size,
        cfg.embed_dim,
        ParamRole::Weight,
        "(vocab_size, embed_dim)".into(),
    );
    s.prenet("encoder.prenet", cfg, (cfg.embed_dim, "embed_dim"));
    s.cbhg("encoder.cbhg", cfg, (prenet_out, &prenet_out_f));

    let dec_prenet_out = cfg.prenet_out(cfg.mel_bands);
    let dec_prenet_f = if cfg.prenet_dims.is_empty() {
        "mel_bands".to_string()
    } else {
        prenet_out_f.clone()
    };
    s.prenet("decoder.prenet", cfg, (cfg.mel_bands, "mel_bands"));
    s.gru(
        "decoder.attn_rnn",
        (dec_prenet_out + enc.0, &format!("{dec_prenet_f}+2*gru_dim")),
        att,
    );
    s.push(
        "decoder.attention.w_q".into(),
        att.0,
        att.0,
        ParamRole::Weight,
        "(attention_dim, attention_dim)".into(),
    );
    s.push(
        "decoder.attention.w_m".into(),
        enc.0,
        att.0,
        ParamRole::Weight,
        "(2*gru_dim, attention_dim)".into(),
    );
    s.push(
        "decoder.attention.v".into(),
        att.0,
        1,
        ParamRole::Weight,
        "(attention_dim, 1)".into(),
    );
    s.affine("decoder.proj_in", (att.0 + enc.0, "attention_dim+2*gru_dim"), enc, true);
    for l in 0..cfg.decoder_layers {
        s.gru(&format!("decoder.rnn.{l}"), enc, enc);
    }
    s.affine(
        "decoder.mel_out",
        enc,
        (cfg.reduction_r * cfg.mel_bands, "reduction_r*mel_bands"),
        true,
    );

    s.cbhg("postnet.cbhg", cfg, (cfg.mel_bands, "mel_bands"));
    s.affine("postnet.linear_out", enc, (cfg.linear_bins, "linear_bins"), true);
    s.specs
}

/// Named tensor table. Sendable and shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Array2<f64>>,
}

impl ModelParams {
    /// Builds a table and checks it against the schema of `cfg`.
    pub fn from_tensors(cfg: &ModelConfig, tensors: BTreeMap<String, Array2<f64>>) -> Result<Self, ModelError> {
        let schema = param_schema(cfg);
        if schema.len() != tensors.len() {
            return Err(ModelError::Schema(format!(
                "expected {} tensors, found {}",
                schema.len(),
                tensors.len()
            )));
        }
        for spec in &schema {
            let t = tensors
                .get(&spec.name)
                .ok_or_else(|| ModelError::Schema(format!("missing tensor {}", spec.name)))?;
            if t.dim() != (spec.rows, spec.cols) {
                return Err(ModelError::Schema(format!(
                    "{} has shape {:?}, expected ({}, {})",
                    spec.name,
                    t.dim(),
                    spec.rows,
                    spec.cols
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(spec.name.clone()));
            }
        }
        Ok(Self { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.get(name)
    }

    pub(crate) fn tensor(&self, name: &str) -> &Array2<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from a validated table"))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.tensors.get_mut(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Array2<f64>> {
        &self.tensors
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Array2::len).sum()
    }
}

/// Deterministic initialization from `cfg.seed`.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tensors = param_schema(cfg)
        .into_iter()
        .map(|spec| {
            let shape = (spec.rows, spec.cols);
            let t = match spec.role {
                ParamRole::Weight => {
                    let limit = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
                    Array2::from_shape_fn(shape, |_| rng.gen_range(-limit..=limit))
                }
                ParamRole::Bias | ParamRole::BnOffset | ParamRole::RunningMean => Array2::zeros(shape),
                ParamRole::GateBias => Array2::from_elem(shape, -1.0),
                ParamRole::BnScale | ParamRole::RunningVar => Array2::ones(shape),
            };
            (spec.name, t)
        })
        .collect();
    Ok(ModelParams { tensors })
}

/// Schema as `name<TAB>shape formula` lines.
pub fn schema_table(cfg: &ModelConfig) -> String {
    param_schema(cfg)
        .iter()
        .map(|s| format!("{}\t{}\n", s.name, s.formula))
        .collect()
}
