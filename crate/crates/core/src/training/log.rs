use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use super::{io_context, Result};

pub const LOG_HEADER: &str = "step,loss,diagonality,wall_ms";

/// Append-only `step,loss,diagonality,wall_ms` CSV. The header is written
/// only when the file starts empty, so resumed runs extend the same log.
pub struct TrainingLog {
    file: File,
}

impl TrainingLog {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_context(path, e))?;
        if file.metadata()?.len() == 0 {
            writeln!(file, "{LOG_HEADER}")?;
        }
        Ok(Self { file })
    }

    pub fn append(&mut self, step: u64, loss: f64, diagonality: f64, wall_ms: u64) -> Result<()> {
        writeln!(self.file, "{step},{loss:.6},{diagonality:.4},{wall_ms}")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_once_then_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        TrainingLog::open(&path).unwrap().append(1, 0.5, 0.25, 10).unwrap();
        TrainingLog::open(&path).unwrap().append(2, 0.4, 0.5, 20).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "step,loss,diagonality,wall_ms\n1,0.500000,0.2500,10\n2,0.400000,0.5000,20\n"
        );
    }
}
