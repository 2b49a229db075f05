//! Mono 16-bit PCM RIFF/WAVE I/O.

use std::io::{Cursor, Read, Seek};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioBuffer, Result, SignalError};

fn pcm16_spec(sample_rate: u32) -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

fn check_spec(spec: WavSpec) -> Result<()> {
    if spec.channels != 1 {
        return Err(SignalError::UnsupportedWav(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(SignalError::UnsupportedWav(format!(
            "{}-bit {:?}, expected 16-bit PCM",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    Ok(())
}

pub fn read_from<R: Read>(reader: R) -> Result<AudioBuffer> {
    let mut wav = WavReader::new(reader)?;
    check_spec(wav.spec())?;
    let samples = wav
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    AudioBuffer::new(samples, wav.spec().sample_rate)
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    read_from(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Header-only probe returning `(sample_rate, frames)`.
pub fn probe_wav(path: &Path) -> Result<(u32, u32)> {
    let wav = WavReader::open(path)?;
    check_spec(wav.spec())?;
    Ok((wav.spec().sample_rate, wav.duration()))
}

fn to_pcm(v: f64) -> i16 {
    (v.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

pub fn write_to<W: std::io::Write + Seek>(writer: W, audio: &AudioBuffer) -> Result<()> {
    let mut wav = WavWriter::new(writer, pcm16_spec(audio.sample_rate()))?;
    for &s in audio.samples() {
        wav.write_sample(to_pcm(s))?;
    }
    wav.finalize()?;
    Ok(())
}

/// Encodes to an in-memory WAV file. Samples outside `[-1, 1]` are clipped.
pub fn to_bytes(audio: &AudioBuffer) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    write_to(&mut cursor, audio)?;
    Ok(cursor.into_inner())
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    std::fs::write(path, to_bytes(audio)?)?;
    Ok(())
}
