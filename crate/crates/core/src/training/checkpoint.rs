//! Checkpoint layout, all little-endian:
//!
//! ```text
//! "BTTS" | version u32 | step u64 | model fingerprint u64 | signal fingerprint u64
//! params table | adam t u64 | adam m table | adam v table | loss count u32 | f64 losses
//! ```
//!
//! A table is a u32 count followed by `(name, tensor)` pairs with `f64`
//! payloads, so a reload reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{io_context, AdamState, Result, TrainConfig, TrainError, TrainState};
use crate::model::{ModelConfig, ModelParams};
use crate::signal::SignalConfig;
use crate::util::{self, Payload};

const MAGIC: &[u8; 4] = b"BTTS";
const VERSION: u32 = 1;
const MAX_TABLE: u32 = 1 << 20;
const MAX_LOSSES: u32 = 1 << 24;

/// Parsed checkpoint before it is bound to configs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub model_fingerprint: u64,
    pub signal_fingerprint: u64,
    pub params: BTreeMap<String, Array2<f64>>,
    pub adam_t: u64,
    pub adam_m: BTreeMap<String, Array2<f64>>,
    pub adam_v: BTreeMap<String, Array2<f64>>,
    pub loss_history: Vec<f64>,
}

fn write_table<W: Write>(w: &mut W, table: &BTreeMap<String, Array2<f64>>) -> std::io::Result<()> {
    util::write_u32(w, table.len() as u32)?;
    for (name, t) in table {
        util::write_str(w, name)?;
        util::write_tensor(w, t, Payload::F64)?;
    }
    Ok(())
}

fn read_table<R: Read>(r: &mut R) -> std::io::Result<BTreeMap<String, Array2<f64>>> {
    let n = util::read_u32(r)?;
    if n > MAX_TABLE {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "table too large"));
    }
    let mut table = BTreeMap::new();
    for _ in 0..n {
        let name = util::read_str(r)?;
        let t = util::read_tensor(r, Payload::F64)?;
        if table.insert(name.clone(), t).is_some() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("duplicate tensor {name}"),
            ));
        }
    }
    Ok(table)
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        Self {
            step: state.step,
            model_fingerprint: state.model_cfg.fingerprint(),
            signal_fingerprint: state.signal_fingerprint,
            params: state.params.tensors().clone(),
            adam_t: state.adam.t,
            adam_m: state.adam.m.clone(),
            adam_v: state.adam.v.clone(),
            loss_history: state.loss_history.clone(),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        util::write_u32(w, VERSION)?;
        util::write_u64(w, self.step)?;
        util::write_u64(w, self.model_fingerprint)?;
        util::write_u64(w, self.signal_fingerprint)?;
        write_table(w, &self.params)?;
        util::write_u64(w, self.adam_t)?;
        write_table(w, &self.adam_m)?;
        write_table(w, &self.adam_v)?;
        util::write_u32(w, self.loss_history.len() as u32)?;
        for l in &self.loss_history {
            w.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |e: std::io::Error| TrainError::Checkpoint(format!("truncated or corrupt: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != MAGIC {
            return Err(TrainError::Checkpoint("not a checkpoint file".into()));
        }
        let version = util::read_u32(r).map_err(bad)?;
        if version != VERSION {
            return Err(TrainError::Checkpoint(format!("unsupported version {version}")));
        }
        let step = util::read_u64(r).map_err(bad)?;
        let model_fingerprint = util::read_u64(r).map_err(bad)?;
        let signal_fingerprint = util::read_u64(r).map_err(bad)?;
        let params = read_table(r).map_err(bad)?;
        let adam_t = util::read_u64(r).map_err(bad)?;
        let adam_m = read_table(r).map_err(bad)?;
        let adam_v = read_table(r).map_err(bad)?;
        let n = util::read_u32(r).map_err(bad)?;
        if n > MAX_LOSSES {
            return Err(TrainError::Checkpoint("loss history too long".into()));
        }
        let mut loss_history = Vec::with_capacity(n as usize);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(bad)?;
            loss_history.push(f64::from_le_bytes(buf));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(bad)? != 0 {
            return Err(TrainError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            step,
            model_fingerprint,
            signal_fingerprint,
            params,
            adam_t,
            adam_m,
            adam_v,
            loss_history,
        })
    }

    /// Checks fingerprints and shapes, then rebuilds the training state.
    pub fn into_state(
        self,
        model_cfg: &ModelConfig,
        signal: &SignalConfig,
        train_cfg: &TrainConfig,
    ) -> Result<TrainState> {
        if self.model_fingerprint != model_cfg.fingerprint() {
            return Err(TrainError::FingerprintMismatch {
                what: "model config",
                expected: model_cfg.fingerprint(),
                found: self.model_fingerprint,
            });
        }
        if self.signal_fingerprint != signal.fingerprint() {
            return Err(TrainError::FingerprintMismatch {
                what: "signal config",
                expected: signal.fingerprint(),
                found: self.signal_fingerprint,
            });
        }
        let params = ModelParams::from_tensors(model_cfg, self.params)?;
        let mut state = TrainState::new(params, model_cfg.clone(), train_cfg.clone(), signal)?;
        for (name, table) in [("first", &self.adam_m), ("second", &self.adam_v)] {
            let reference = &state.adam.m;
            if table.len() != reference.len()
                || table
                    .iter()
                    .any(|(k, t)| reference.get(k).map(|r| r.dim()) != Some(t.dim()))
            {
                return Err(TrainError::Checkpoint(format!(
                    "{name} moment table does not match the model"
                )));
            }
        }
        state.step = self.step;
        state.adam = AdamState {
            m: self.adam_m,
            v: self.adam_v,
            t: self.adam_t,
        };
        state.loss_history = self.loss_history;
        Ok(state)
    }
}

/// Writes via a temporary file and rename so readers never see a partial
/// checkpoint.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let tmp = path.with_extension("btts.tmp");
    std::fs::write(&tmp, Checkpoint::from_state(state).to_bytes()).map_err(|e| io_context(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_context(path, e))?;
    Ok(())
}

pub fn load_checkpoint(
    path: &Path,
    model_cfg: &ModelConfig,
    signal: &SignalConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| io_context(path, e))?;
    Checkpoint::read_from(&mut bytes.as_slice())?.into_state(model_cfg, signal, train_cfg)
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step:08}.btts"))
}

/// The checkpoint with the highest step in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).map_err(|e| io_context(dir, e))? {
        let path = entry?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("ckpt_"))
            .and_then(|n| n.strip_suffix(".btts"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(step) = step {
            if best.as_ref().is_none_or(|(b, _)| step > *b) {
                best = Some((step, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::training::tests::{tiny_cfg, tiny_sample};
    use crate::training::{train, RunOutputs, Sample};

    fn signal() -> SignalConfig {
        SignalConfig {
            fft_size: 8,
            win_length: 8,
            hop_length: 4,
            mel_bands: 4,
            ..SignalConfig::default()
        }
    }

    fn trained_state(steps: u64) -> (TrainState, Vec<Sample>) {
        let cfg = tiny_cfg();
        let samples: Vec<Sample> = (0..4).map(|i| tiny_sample(i, 4)).collect();
        let mut state = TrainState::new(
            init_params(&cfg).unwrap(),
            cfg,
            TrainConfig {
                batch_size: 2,
                ..TrainConfig::default()
            },
            &signal(),
        )
        .unwrap();
        train(&mut state, &samples, steps, &RunOutputs::default(), |_| {}).unwrap();
        (state, samples)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (state, _) = trained_state(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.btts");
        save_checkpoint(&state, &path).unwrap();
        let loaded = load_checkpoint(&path, &state.model_cfg, &signal(), &state.train_cfg).unwrap();
        assert_eq!(loaded, state);
        assert_eq!(loaded.step, 3);
        let path2 = dir.path().join("b.btts");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        assert_eq!(&std::fs::read(&path).unwrap()[..4], b"BTTS");
    }

    #[test]
    fn fingerprints_and_truncation_are_checked() {
        let (state, _) = trained_state(1);
        let bytes = Checkpoint::from_state(&state).to_bytes();
        let other_model = ModelConfig {
            gru_dim: 4,
            ..state.model_cfg.clone()
        };
        let ck = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert!(matches!(
            ck.clone().into_state(&other_model, &signal(), &state.train_cfg),
            Err(TrainError::FingerprintMismatch {
                what: "model config",
                ..
            })
        ));
        let other_signal = SignalConfig {
            hop_length: 2,
            ..signal()
        };
        assert!(matches!(
            ck.into_state(&state.model_cfg, &other_signal, &state.train_cfg),
            Err(TrainError::FingerprintMismatch {
                what: "signal config",
                ..
            })
        ));
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::read_from(&mut &bytes[..cut]),
                Err(TrainError::Checkpoint(_))
            ));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::read_from(&mut extra.as_slice()).is_err());
    }

    #[test]
    fn resume_continues_the_same_trace() {
        let (mut full, samples) = trained_state(0);
        let cfg = full.model_cfg.clone();
        let trace_full = train(&mut full, &samples, 8, &RunOutputs::default(), |_| {}).unwrap();
        let (mut part, _) = trained_state(0);
        let mut trace = train(&mut part, &samples, 5, &RunOutputs::default(), |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = checkpoint_path(dir.path(), part.step);
        save_checkpoint(&part, &path).unwrap();
        let mut resumed = load_checkpoint(&path, &cfg, &signal(), &part.train_cfg).unwrap();
        trace.extend(train(&mut resumed, &samples, 8, &RunOutputs::default(), |_| {}).unwrap());
        assert_eq!(trace, trace_full);
        assert_eq!(resumed, full);
    }

    #[test]
    fn periodic_checkpoints_and_latest() {
        let (mut state, samples) = trained_state(0);
        state.train_cfg.checkpoint_interval = 2;
        let dir = tempfile::tempdir().unwrap();
        let outputs = RunOutputs {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            log_path: Some(dir.path().join("train_log.csv")),
        };
        train(&mut state, &samples, 5, &outputs, |_| {}).unwrap();
        for step in [2, 4, 5] {
            assert!(checkpoint_path(dir.path(), step).exists());
        }
        assert!(!checkpoint_path(dir.path(), 3).exists());
        assert_eq!(
            latest_checkpoint(dir.path()).unwrap(),
            Some(checkpoint_path(dir.path(), 5))
        );
        let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        assert_eq!(log.lines().next(), Some("step,loss,diagonality,wall_ms"));
        assert_eq!(log.lines().count(), 6);
    }
}
