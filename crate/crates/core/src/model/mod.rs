//! Character-to-spectrogram network: embedding, pre-net and CBHG encoder,
//! an additive-attention decoder emitting `r` mel frames per step, and a
//! CBHG post-net that maps mel frames to linear-frequency frames.

mod config;
pub mod layers;
mod params;
pub mod tape;

use ndarray::Array2;
use thiserror::Error;

use crate::signal::{self, griffin_lim, inverse_preemphasis, AudioBuffer, MagnitudeSpectrogram, Scale, SignalConfig};
use crate::textnorm::{self, NormalizationRules, TextError, Vocabulary};

pub use config::ModelConfig;
pub use layers::{BatchStats, Graph};
pub use params::{init_params, param_schema, schema_table, ModelParams, ParamRole, ParamSpec};
use tape::Var;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("parameter table: {0}")]
    Schema(String),
    #[error("tensor {0} holds non-finite values")]
    NonFinite(String),
    #[error("input sequence is empty")]
    EmptyInput,
    #[error("character id {id} is outside the vocabulary of {vocab_size}")]
    UnknownId { id: usize, vocab_size: usize },
    #[error("teacher frames {frames} are not a multiple of reduction_r {r}")]
    TeacherFrames { frames: usize, r: usize },
    #[error("teacher frames have {found} bands, expected {expected}")]
    TeacherBands { found: usize, expected: usize },
    #[error("forward pass produced non-finite values")]
    NonFiniteOutput,
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Signal(#[from] signal::SignalError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Decoder steps x encoder steps attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionAlignment {
    weights: Array2<f64>,
}

impl AttentionAlignment {
    /// Accepts a matrix whose rows are probability distributions.
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        for row in weights.rows() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row.sum() - 1.0).abs() > 1e-6 {
                return Err(ModelError::Schema("alignment rows must be distributions".into()));
            }
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn decoder_steps(&self) -> usize {
        self.weights.nrows()
    }

    pub fn encoder_steps(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// (decoder_steps * r) x mel_bands
    pub mel_out: Array2<f64>,
    /// same frames x linear_bins
    pub linear_out: Array2<f64>,
    pub alignment: AttentionAlignment,
    /// Decoder steps actually run.
    pub stop_step: usize,
}

/// Per-pass switches. Dropout is always on; its mask stream is pinned by
/// `dropout_seed` so repeated passes agree.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    /// Batch-norm uses batch statistics when true, running statistics otherwise.
    pub training: bool,
    pub dropout_seed: u64,
}

impl ForwardOptions {
    pub fn inference(cfg: &ModelConfig) -> Self {
        Self {
            training: false,
            dropout_seed: cfg.seed,
        }
    }
}

/// Recurrent state carried between decoder steps.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub attention_h: Var,
    pub context: Var,
    pub layers: Vec<Var>,
}

/// Tape handles of a whole forward pass.
pub struct GraphOutput {
    pub mel: Var,
    pub linear: Var,
    pub alignment_rows: Vec<Var>,
    pub stop_step: usize,
}

/// Level in dB of a predicted frame: mean square of its normalized values.
pub fn frame_energy_db(frame: &[f64]) -> f64 {
    let ms = frame.iter().map(|v| v * v).sum::<f64>() / frame.len().max(1) as f64;
    10.0 * (ms + 1e-10).log10()
}

impl Graph<'_> {
    /// Embedding lookup, pre-net and CBHG: `T_enc x 2*gru_dim`.
    pub fn encode(&mut self, char_ids: &[usize]) -> Result<Var> {
        if char_ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let vocab_size = self.cfg.vocab_size;
        if let Some(&id) = char_ids.iter().find(|&&id| id >= vocab_size) {
            return Err(ModelError::UnknownId { id, vocab_size });
        }
        let table = self.param("encoder.embedding");
        let embedded = self.tape.gather(table, char_ids);
        let pre = self.prenet(embedded, "encoder.prenet");
        let width = self.cfg.prenet_out(self.cfg.embed_dim);
        self.cbhg(pre, "encoder.cbhg", width)
    }

    pub fn initial_decoder_state(&mut self) -> DecoderState {
        let enc = self.cfg.encoder_dim();
        DecoderState {
            attention_h: self.tape.constant(Array2::zeros((1, self.cfg.attention_dim))),
            context: self.tape.constant(Array2::zeros((1, enc))),
            layers: (0..self.cfg.decoder_layers)
                .map(|_| self.tape.constant(Array2::zeros((1, enc))))
                .collect(),
        }
    }

    /// One decoder step from the previous frame (`1 x mel_bands`).
    /// Returns `(r x mel_bands frames, new state, 1 x T_enc weights)`.
    pub fn decoder_step(
        &mut self,
        prev_frame: Var,
        state: &DecoderState,
        memory: Var,
        keys: Var,
    ) -> (Var, DecoderState, Var) {
        let pre = self.prenet(prev_frame, "decoder.prenet");
        let rnn_in = self.tape.concat_cols(&[pre, state.context]);
        let xw = self.gru_inputs(rnn_in, "decoder.attn_rnn");
        let attention_h = self.gru_cell(xw, state.attention_h, "decoder.attn_rnn");
        let (context, weights) = self.attention(attention_h, memory, keys);
        let joined = self.tape.concat_cols(&[attention_h, context]);
        let mut d = self.affine(joined, "decoder.proj_in");
        let mut layers = Vec::with_capacity(state.layers.len());
        for (l, &h) in state.layers.iter().enumerate() {
            let prefix = format!("decoder.rnn.{l}");
            let xw = self.gru_inputs(d, &prefix);
            let h_new = self.gru_cell(xw, h, &prefix);
            layers.push(h_new);
            d = self.tape.add(d, h_new);
        }
        let flat = self.affine(d, "decoder.mel_out");
        let frames = self.tape.reshape(flat, self.cfg.reduction_r, self.cfg.mel_bands);
        (
            frames,
            DecoderState {
                attention_h,
                context,
                layers,
            },
            weights,
        )
    }

    /// Whole network. Teacher-forced when `teacher` is given, free-running
    /// until the stop criterion or `max_decoder_steps` otherwise.
    pub fn forward(&mut self, char_ids: &[usize], teacher: Option<&Array2<f64>>) -> Result<GraphOutput> {
        let r = self.cfg.reduction_r;
        let mel_bands = self.cfg.mel_bands;
        if let Some(t) = teacher {
            if t.nrows() == 0 || t.nrows() % r != 0 {
                return Err(ModelError::TeacherFrames { frames: t.nrows(), r });
            }
            if t.ncols() != mel_bands {
                return Err(ModelError::TeacherBands {
                    found: t.ncols(),
                    expected: mel_bands,
                });
            }
        }
        let memory = self.encode(char_ids)?;
        let w_m = self.param("decoder.attention.w_m");
        let keys = self.tape.matmul(memory, w_m);
        let mut state = self.initial_decoder_state();
        let mut prev = self.tape.constant(Array2::zeros((1, mel_bands)));
        let mut steps = Vec::new();
        let mut rows = Vec::new();
        let mut silent = 0;
        let max_steps = teacher.map_or(self.cfg.max_decoder_steps, |t| t.nrows() / r);
        for step in 0..max_steps {
            let (frames, next, weights) = self.decoder_step(prev, &state, memory, keys);
            state = next;
            steps.push(frames);
            rows.push(weights);
            match teacher {
                Some(t) => {
                    let last = (step + 1) * r - 1;
                    prev = self.tape.constant(t.slice(ndarray::s![last..last + 1, ..]).to_owned());
                }
                None => {
                    prev = self.tape.slice_rows(frames, r - 1, 1);
                    let all_quiet = self
                        .value(frames)
                        .rows()
                        .into_iter()
                        .all(|f| frame_energy_db(&f.to_vec()) < self.cfg.stop_threshold_db);
                    silent = if all_quiet { silent + 1 } else { 0 };
                    if silent >= self.cfg.stop_patience {
                        break;
                    }
                }
            }
        }
        let mel = self.tape.concat_rows(&steps);
        let post = self.cbhg(mel, "postnet.cbhg", mel_bands)?;
        let linear = self.affine(post, "postnet.linear_out");
        Ok(GraphOutput {
            mel,
            linear,
            stop_step: steps.len(),
            alignment_rows: rows,
        })
    }

    pub fn alignment(&mut self, rows: &[Var]) -> Array2<f64> {
        let joined = self.tape.concat_rows(rows);
        self.value(joined).clone()
    }
}

/// Encoder states for `char_ids` with running batch-norm statistics.
pub fn encode(char_ids: &[usize], params: &ModelParams, cfg: &ModelConfig) -> Result<Array2<f64>> {
    let mut g = Graph::new(params, cfg, false, cfg.seed);
    let v = g.encode(char_ids)?;
    Ok(g.value(v).clone())
}

pub fn forward(
    char_ids: &[usize],
    params: &ModelParams,
    cfg: &ModelConfig,
    teacher_mel: Option<&Array2<f64>>,
) -> Result<ForwardOutput> {
    forward_with(char_ids, params, cfg, teacher_mel, ForwardOptions::inference(cfg))
}

pub fn forward_with(
    char_ids: &[usize],
    params: &ModelParams,
    cfg: &ModelConfig,
    teacher_mel: Option<&Array2<f64>>,
    opts: ForwardOptions,
) -> Result<ForwardOutput> {
    cfg.validate()?;
    let mut g = Graph::new(params, cfg, opts.training, opts.dropout_seed);
    let out = g.forward(char_ids, teacher_mel)?;
    let weights = g.alignment(&out.alignment_rows);
    let mel_out = g.value(out.mel).clone();
    let linear_out = g.value(out.linear).clone();
    if mel_out.iter().chain(linear_out.iter()).any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteOutput);
    }
    Ok(ForwardOutput {
        mel_out,
        linear_out,
        alignment: AttentionAlignment::new(weights)?,
        stop_step: out.stop_step,
    })
}

/// Text to waveform: normalize, encode, decode free-running, invert the
/// predicted linear spectrogram with Griffin-Lim and undo pre-emphasis.
pub fn synthesize(
    text: &str,
    params: &ModelParams,
    cfg: &ModelConfig,
    rules: &NormalizationRules,
    vocab: &Vocabulary,
    signal_cfg: &SignalConfig,
) -> Result<AudioBuffer> {
    cfg.check_signal(signal_cfg)?;
    let normalized = textnorm::normalize(text, rules);
    if !normalized.text.chars().any(textnorm::is_bangla_letter) {
        return Err(ModelError::EmptyInput);
    }
    let ids = textnorm::encode(&normalized, vocab)?;
    let out = forward(&ids, params, cfg, None)?;
    let amp = out.linear_out.mapv(|v| signal::denormalize_magnitude(v, signal_cfg));
    let mag = MagnitudeSpectrogram::new(amp, Scale::Linear, signal_cfg.clone())?;
    let recovered = griffin_lim(&mag, signal_cfg)?;
    Ok(inverse_preemphasis(&recovered.audio, signal_cfg.preemphasis_coeff)?)
}
