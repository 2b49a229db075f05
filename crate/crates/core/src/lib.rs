//! Character-to-waveform speech synthesis toolkit: signal processing,
//! Bangla text normalization, corpus preparation, an attention-based
//! sequence-to-sequence spectrogram model with Griffin-Lim inversion,
//! training utilities and evaluation arithmetic.

pub mod corpus;
pub mod evaluation;
pub mod model;
pub mod signal;
pub mod textnorm;
pub mod training;
pub mod util;
