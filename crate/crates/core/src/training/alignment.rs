use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::{io_context, Result, TrainError};
use crate::model::AttentionAlignment;

/// Half-width of the diagonal band in normalized coordinates.
pub const DIAGONAL_BAND: f64 = 0.1;

/// Fraction of attention mass within `|i/T_dec - j/T_enc| <= 0.1`, with
/// cells placed at their centers so a square identity scores exactly 1.
pub fn alignment_diagonality(a: &AttentionAlignment) -> f64 {
    let w = a.weights();
    let (t_dec, t_enc) = w.dim();
    let mut inside = 0.0;
    let mut total = 0.0;
    for ((i, j), &v) in w.indexed_iter() {
        let x = (i as f64 + 0.5) / t_dec as f64;
        let y = (j as f64 + 0.5) / t_enc as f64;
        total += v;
        if (x - y).abs() <= DIAGONAL_BAND + 1e-12 {
            inside += v;
        }
    }
    if total > 0.0 {
        (inside / total).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Writes the matrix as CSV at `path` and an 8-bit PGM rendering next to
/// it with the `pgm` extension. Returns the PGM path.
pub fn export_alignment(a: &AttentionAlignment, path: &Path) -> Result<std::path::PathBuf> {
    let w = a.weights();
    let mut csv = String::new();
    for row in w.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        let _ = writeln!(csv, "{}", line.join(","));
    }
    std::fs::write(path, csv).map_err(|e| io_context(path, e))?;

    let (rows, cols) = w.dim();
    let max = w.iter().copied().fold(0.0, f64::max);
    let mut pgm = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    pgm.extend(w.iter().map(|v| {
        if max > 0.0 {
            (v / max * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    let pgm_path = path.with_extension("pgm");
    std::fs::write(&pgm_path, pgm).map_err(|e| io_context(&pgm_path, e))?;
    Ok(pgm_path)
}

pub fn read_alignment_csv(path: &Path) -> Result<AttentionAlignment> {
    let text = std::fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| TrainError::Shape(format!("{} line {}: {e}", path.display(), n + 1)))?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(TrainError::Shape(format!(
                "{} line {}: ragged row",
                path.display(),
                n + 1
            )));
        }
        values.extend(row);
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, cols.unwrap_or(0)), values).map_err(|e| TrainError::Shape(e.to_string()))?;
    Ok(AttentionAlignment::new(m)?)
}
