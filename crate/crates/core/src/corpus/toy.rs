//! A small synthetic corpus with a deterministic text-to-sound mapping.
//!
//! Every Bangla character is rendered as a 40 ms two-partial tone whose
//! frequencies depend only on the character, spaces as 40 ms of silence,
//! with 100 ms of silence at both ends. That gives the model a learnable
//! character-to-spectrogram pattern and exercises every pipeline stage.
//! A copy ships in `data/toy`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::signal::{wav, AudioBuffer, SignalConfig};

pub const TOY_SAMPLE_RATE: u32 = 8_000;
pub const TOY_UTTERANCES: usize = 48;
const SEED: u64 = 2021;
const SEGMENT_SECS: f64 = 0.04;
const EDGE_SECS: f64 = 0.1;

const WORDS: [&str; 16] = [
    "আম",
    "জল",
    "বই",
    "মা",
    "বাবা",
    "ঘর",
    "দিন",
    "রাত",
    "গান",
    "পথ",
    "কাজ",
    "হাত",
    "চোখ",
    "নদী",
    "মন",
    "ফুল",
];

#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub id: String,
    pub text: String,
    pub audio: AudioBuffer,
}

/// Analysis settings sized for the toy corpus.
pub fn toy_signal_config() -> SignalConfig {
    SignalConfig {
        fft_size: 256,
        win_length: 160,
        hop_length: 80,
        mel_bands: 20,
        sample_rate: TOY_SAMPLE_RATE,
        ..SignalConfig::default()
    }
}

fn partials(c: char) -> (f64, f64) {
    let k = (c as u32).wrapping_sub(0x0980) as f64;
    (250.0 + 23.0 * (k % 29.0), 1000.0 + 61.0 * (k % 37.0))
}

/// Renders `text` with the character-to-tone mapping.
pub fn render(text: &str) -> AudioBuffer {
    let sr = TOY_SAMPLE_RATE as f64;
    let seg = (SEGMENT_SECS * sr) as usize;
    let edge = (EDGE_SECS * sr) as usize;
    let mut x = vec![0.0; edge];
    for c in text.chars() {
        if c.is_whitespace() {
            x.extend(std::iter::repeat_n(0.0, seg));
            continue;
        }
        let (f1, f2) = partials(c);
        x.extend((0..seg).map(|i| {
            let t = i as f64 / sr;
            let env = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / seg as f64).cos();
            env * (0.35 * (2.0 * std::f64::consts::PI * f1 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * f2 * t).sin())
        }));
    }
    x.extend(std::iter::repeat_n(0.0, edge));
    AudioBuffer::new(x, TOY_SAMPLE_RATE).expect("finite samples")
}

pub fn toy_corpus() -> Vec<ToyUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    (0..TOY_UTTERANCES)
        .map(|i| {
            let n = rng.gen_range(4..=6);
            let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
            let text = words.join(" ");
            ToyUtterance {
                id: format!("toy_{i:03}"),
                audio: render(&text),
                text,
            }
        })
        .collect()
}

/// `id|text|text` lines.
pub fn toy_metadata() -> String {
    toy_corpus().iter().fold(String::new(), |mut s, u| {
        let _ = writeln!(s, "{}|{}|{}", u.id, u.text, u.text);
        s
    })
}

/// Writes `metadata.csv` and `wavs/<id>.wav` under `dir`.
pub fn write_toy_corpus(dir: &Path) -> crate::signal::Result<()> {
    std::fs::create_dir_all(dir.join("wavs"))?;
    std::fs::write(dir.join("metadata.csv"), toy_metadata())?;
    for u in toy_corpus() {
        wav::write_wav(&dir.join("wavs").join(format!("{}.wav", u.id)), &u.audio)?;
    }
    Ok(())
}

/// Directory of the copy shipped with the crate.
pub fn bundled_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("toy")
}
