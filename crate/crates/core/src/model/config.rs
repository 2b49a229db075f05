use crate::signal::SignalConfig;
use crate::util::fingerprint;

use super::ModelError;

/// Architecture and decoding settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Widths of the pre-net layers, shared by encoder and decoder.
    pub prenet_dims: Vec<usize>,
    pub prenet_dropout: f64,
    /// Largest kernel width in the convolution bank (widths 1..=K).
    pub encoder_bank_k: usize,
    pub conv_channels: usize,
    pub highway_layers: usize,
    /// Hidden size of each direction of the bidirectional GRU.
    pub gru_dim: usize,
    pub attention_dim: usize,
    pub decoder_layers: usize,
    pub mel_bands: usize,
    pub linear_bins: usize,
    /// Frames emitted per decoder step.
    pub reduction_r: usize,
    pub max_decoder_steps: usize,
    /// A free-running step counts as silent when every frame's mean
    /// squared normalized value is below this level in dB.
    pub stop_threshold_db: f64,
    /// Consecutive silent steps that end free-running decoding.
    pub stop_patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            embed_dim: 128,
            prenet_dims: vec![128, 64],
            prenet_dropout: 0.5,
            encoder_bank_k: 8,
            conv_channels: 64,
            highway_layers: 4,
            gru_dim: 64,
            attention_dim: 64,
            decoder_layers: 2,
            mel_bands: 80,
            linear_bins: 1025,
            reduction_r: 2,
            max_decoder_steps: 500,
            stop_threshold_db: -6.0,
            stop_patience: 5,
            seed: 1234,
        }
    }
}

impl ModelConfig {
    /// Small settings for the bundled toy corpus.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 16,
            prenet_dims: vec![16, 8],
            prenet_dropout: 0.0,
            encoder_bank_k: 3,
            conv_channels: 8,
            highway_layers: 1,
            gru_dim: 8,
            attention_dim: 8,
            decoder_layers: 1,
            mel_bands: 20,
            linear_bins: 129,
            reduction_r: 2,
            max_decoder_steps: 60,
            ..Self::default()
        }
    }

    /// Very small settings for gradient checks: every block present,
    /// every width at most 5.
    pub fn tiny() -> Self {
        Self {
            vocab_size: 6,
            embed_dim: 4,
            prenet_dims: vec![4, 3],
            prenet_dropout: 0.2,
            encoder_bank_k: 2,
            conv_channels: 3,
            highway_layers: 1,
            gru_dim: 3,
            attention_dim: 3,
            decoder_layers: 1,
            mel_bands: 4,
            linear_bins: 5,
            reduction_r: 2,
            max_decoder_steps: 20,
            ..Self::default()
        }
    }

    /// Width of the encoder output and of the decoder residual stack.
    pub fn encoder_dim(&self) -> usize {
        2 * self.gru_dim
    }

    pub fn prenet_out(&self, input: usize) -> usize {
        self.prenet_dims.last().copied().unwrap_or(input)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("encoder_bank_k", self.encoder_bank_k),
            ("conv_channels", self.conv_channels),
            ("gru_dim", self.gru_dim),
            ("attention_dim", self.attention_dim),
            ("decoder_layers", self.decoder_layers),
            ("mel_bands", self.mel_bands),
            ("linear_bins", self.linear_bins),
            ("reduction_r", self.reduction_r),
            ("max_decoder_steps", self.max_decoder_steps),
            ("stop_patience", self.stop_patience),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{field} must be positive")));
            }
        }
        if self.vocab_size < 3 {
            return Err(ModelError::InvalidConfig(
                "vocab_size must cover PAD, EOS and one symbol".into(),
            ));
        }
        if self.prenet_dims.contains(&0) {
            return Err(ModelError::InvalidConfig("prenet_dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(ModelError::InvalidConfig("prenet_dropout must be in [0, 1)".into()));
        }
        if !self.stop_threshold_db.is_finite() {
            return Err(ModelError::InvalidConfig("stop_threshold_db must be finite".into()));
        }
        Ok(())
    }

    /// Checks that the output widths match the analysis settings.
    pub fn check_signal(&self, signal: &SignalConfig) -> Result<(), ModelError> {
        if self.linear_bins != signal.bins() {
            return Err(ModelError::InvalidConfig(format!(
                "linear_bins {} does not match fft_size / 2 + 1 = {}",
                self.linear_bins,
                signal.bins()
            )));
        }
        if self.mel_bands != signal.mel_bands {
            return Err(ModelError::InvalidConfig(format!(
                "mel_bands {} does not match the signal config's {}",
                self.mel_bands, signal.mel_bands
            )));
        }
        Ok(())
    }

    /// Hash of the fields that shape the parameters or the training graph.
    /// Seeds and decoding limits are excluded so they can change between
    /// training and synthesis.
    pub fn fingerprint(&self) -> u64 {
        fingerprint(&format!(
            "model:v1|{}|{}|{:?}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
            self.vocab_size,
            self.embed_dim,
            self.prenet_dims,
            self.prenet_dropout,
            self.encoder_bank_k,
            self.conv_channels,
            self.highway_layers,
            self.gru_dim,
            self.attention_dim,
            self.decoder_layers,
            self.mel_bands,
            self.linear_bins,
            self.reduction_r
        ))
    }
}
