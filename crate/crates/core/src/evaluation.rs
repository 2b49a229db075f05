//! Listening-test and objective score arithmetic: MOS over integer ratings,
//! summary statistics of externally produced score files, a log-spectral
//! distance proxy and CSV export of system comparison bars.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::signal::{magnitude, stft, AudioBuffer, SignalConfig, SignalError};
use crate::util::round_half_up;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("rating {0} is outside 1..=5")]
    InvalidRating(i64),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("rating table is incomplete: {0}")]
    Incomplete(String),
    #[error("score {value} for {id:?} is outside the declared range [{lo}, {hi}]")]
    OutOfRange { id: String, value: f64, lo: f64, hi: f64 },
    #[error("{source_name} line {line}: {reason}")]
    Parse {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("sample rates differ: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, EvalError>;

pub const RATINGS_HEADER: &str = "waveform_id,rater_id,rating";
pub const SCORES_HEADER: &str = "waveform_id,score";
pub const CHART_HEADER: &str = "system,metric,value";

/// Raw PESQ scale.
pub const PESQ_RANGE: (f64, f64) = (-0.5, 4.5);
/// Opinion-score scale (Bad = 1 .. Excellent = 5).
pub const MOS_RANGE: (f64, f64) = (1.0, 5.0);

/// Arithmetic mean of integer opinion scores.
pub fn mos(ratings: &[u8]) -> Result<f64> {
    if ratings.is_empty() {
        return Err(EvalError::Empty("rating list"));
    }
    if let Some(&bad) = ratings.iter().find(|r| !(1..=5).contains(*r)) {
        return Err(EvalError::InvalidRating(bad.into()));
    }
    let sum: u64 = ratings.iter().map(|&r| u64::from(r)).sum();
    Ok(sum as f64 / ratings.len() as f64)
}

/// Complete item x rater matrix of ratings in 1..=5.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTable {
    items: Vec<String>,
    raters: Vec<String>,
    ratings: Array2<u8>,
}

impl RatingTable {
    pub fn new(items: Vec<String>, raters: Vec<String>, ratings: Array2<u8>) -> Result<Self> {
        if items.is_empty() || raters.is_empty() {
            return Err(EvalError::Empty("rating table"));
        }
        if ratings.dim() != (items.len(), raters.len()) {
            return Err(EvalError::Incomplete(format!(
                "{} x {} matrix for {} items and {} raters",
                ratings.nrows(),
                ratings.ncols(),
                items.len(),
                raters.len()
            )));
        }
        if let Some(&bad) = ratings.iter().find(|r| !(1..=5).contains(*r)) {
            return Err(EvalError::InvalidRating(bad.into()));
        }
        Ok(Self { items, raters, ratings })
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn ratings(&self) -> &Array2<u8> {
        &self.ratings
    }

    /// Parses `waveform_id,rater_id,rating` rows. Items and raters keep
    /// first-appearance order; every pair must be rated exactly once.
    pub fn parse(source: &str, source_name: &str) -> Result<Self> {
        let mut items: Vec<String> = Vec::new();
        let mut raters: Vec<String> = Vec::new();
        let mut item_index = HashMap::new();
        let mut rater_index = HashMap::new();
        let mut cells: HashMap<(usize, usize), u8> = HashMap::new();
        for (line, fields) in csv_rows(source, source_name, RATINGS_HEADER, 3)? {
            let err = |reason: String| EvalError::Parse {
                source_name: source_name.to_string(),
                line,
                reason,
            };
            let rating: i64 = fields[2]
                .parse()
                .map_err(|e| err(format!("rating {:?}: {e}", fields[2])))?;
            if !(1..=5).contains(&rating) {
                return Err(EvalError::InvalidRating(rating));
            }
            let i = *item_index.entry(fields[0].to_string()).or_insert_with(|| {
                items.push(fields[0].to_string());
                items.len() - 1
            });
            let j = *rater_index.entry(fields[1].to_string()).or_insert_with(|| {
                raters.push(fields[1].to_string());
                raters.len() - 1
            });
            if cells.insert((i, j), rating as u8).is_some() {
                return Err(err(format!("{} rated {} twice", fields[1], fields[0])));
            }
        }
        let mut ratings = Array2::zeros((items.len(), raters.len()));
        for ((i, j), slot) in ratings.indexed_iter_mut() {
            *slot = *cells
                .get(&(i, j))
                .ok_or_else(|| EvalError::Incomplete(format!("{} has no rating for {}", raters[j], items[i])))?;
        }
        Self::new(items, raters, ratings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?, &path.display().to_string())
    }
}

/// Labeled scores confined to a declared range.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub label: String,
    ids: Vec<String>,
    values: Vec<f64>,
    declared_range: (f64, f64),
}

impl ScoreSet {
    pub fn new(
        label: impl Into<String>,
        ids: Vec<String>,
        values: Vec<f64>,
        declared_range: (f64, f64),
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(EvalError::Empty("score set"));
        }
        if ids.len() != values.len() {
            return Err(EvalError::Incomplete(format!(
                "{} ids for {} scores",
                ids.len(),
                values.len()
            )));
        }
        let (lo, hi) = declared_range;
        for (id, &value) in ids.iter().zip(&values) {
            if !value.is_finite() || value < lo || value > hi {
                return Err(EvalError::OutOfRange {
                    id: id.clone(),
                    value,
                    lo,
                    hi,
                });
            }
        }
        Ok(Self {
            label: label.into(),
            ids,
            values,
            declared_range,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn declared_range(&self) -> (f64, f64) {
        self.declared_range
    }

    /// Parses `waveform_id,score` rows.
    pub fn parse(label: &str, source: &str, source_name: &str, declared_range: (f64, f64)) -> Result<Self> {
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (line, fields) in csv_rows(source, source_name, SCORES_HEADER, 2)? {
            let value: f64 = fields[1].parse().map_err(|e| EvalError::Parse {
                source_name: source_name.to_string(),
                line,
                reason: format!("score {:?}: {e}", fields[1]),
            })?;
            ids.push(fields[0].to_string());
            values.push(value);
        }
        Self::new(label, ids, values, declared_range)
    }

    pub fn load(label: &str, path: &Path, declared_range: (f64, f64)) -> Result<Self> {
        Self::parse(label, &read(path)?, &path.display().to_string(), declared_range)
    }
}

/// Item-wise MOS over the rater axis.
pub fn per_item_mos(table: &RatingTable) -> ScoreSet {
    let raters = table.raters.len() as f64;
    let values = table
        .ratings
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|&r| f64::from(r)).sum::<f64>() / raters)
        .collect();
    ScoreSet::new("mos", table.items.clone(), values, MOS_RANGE).expect("ratings in 1..=5 give means in range")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

pub fn aggregate(scores: &ScoreSet) -> Summary {
    let v = &scores.values;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Summary {
        mean,
        stddev: var.sqrt(),
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        count: v.len(),
    }
}

/// Magnitudes below this are clamped before taking logarithms.
pub const LSD_FLOOR: f64 = 1e-10;

/// Mean over frames of the RMS difference between dB magnitude spectra,
/// truncated to the shorter frame count.
pub fn log_spectral_distance(reference: &AudioBuffer, degraded: &AudioBuffer, cfg: &SignalConfig) -> Result<f64> {
    if reference.sample_rate() != degraded.sample_rate() {
        return Err(EvalError::SampleRateMismatch(
            reference.sample_rate(),
            degraded.sample_rate(),
        ));
    }
    if reference.is_empty() || degraded.is_empty() {
        return Err(EvalError::Empty("audio buffer"));
    }
    let a = magnitude(&stft(reference, cfg)?).data;
    let b = magnitude(&stft(degraded, cfg)?).data;
    let frames = a.nrows().min(b.nrows());
    let db = |m: f64| 20.0 * m.max(LSD_FLOOR).log10();
    let total: f64 = (0..frames)
        .map(|t| {
            let sq: f64 = a
                .row(t)
                .iter()
                .zip(b.row(t))
                .map(|(&x, &y)| (db(x) - db(y)).powi(2))
                .sum();
            (sq / a.ncols() as f64).sqrt()
        })
        .sum();
    Ok(total / frames as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartEntry {
    pub system: String,
    pub metric: String,
    pub value: f64,
}

impl ChartEntry {
    pub fn new(system: &str, metric: &str, value: f64) -> Self {
        Self {
            system: system.to_string(),
            metric: metric.to_string(),
            value,
        }
    }

    /// Entry whose value is the summary mean.
    pub fn from_summary(system: &str, metric: &str, summary: &Summary) -> Self {
        Self::new(system, metric, summary.mean)
    }
}

/// Published PESQ and MOS bars of four Bangla TTS systems.
pub fn comparison_fixtures() -> Vec<ChartEntry> {
    [
        ("Subachan TTS", 0.45, 2.18),
        ("SPSS TTS", 0.53, 3.1),
        ("Tacotron TTS", 0.77, 3.79),
        ("Google Bangla TTS", 1.52, 4.22),
    ]
    .iter()
    .flat_map(|&(s, pesq, mos)| [ChartEntry::new(s, "pesq", pesq), ChartEntry::new(s, "mos", mos)])
    .collect()
}

/// Renders `system,metric,value` rows with values rounded half-up to 2 dp.
pub fn chart_csv(entries: &[ChartEntry]) -> String {
    let mut out = format!("{CHART_HEADER}\n");
    for e in entries {
        let _ = writeln!(out, "{},{},{:.2}", e.system, e.metric, round_half_up(e.value, 2));
    }
    out
}

pub fn export_chart_data(entries: &[ChartEntry], include_comparison: bool, path: &Path) -> Result<()> {
    let mut all = entries.to_vec();
    if include_comparison {
        all.extend(comparison_fixtures());
    }
    std::fs::write(path, chart_csv(&all)).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Directory of the score fixtures shipped with the crate.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("fixtures")
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Yields `(line number, fields)` for each nonblank data row after
/// checking the header.
fn csv_rows<'a>(source: &'a str, source_name: &str, header: &str, width: usize) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = source.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let parse_err = |line: usize, reason: String| EvalError::Parse {
        source_name: source_name.to_string(),
        line,
        reason,
    };
    match lines.next() {
        Some((_, first)) if first.trim().trim_start_matches('\u{feff}') == header => {}
        Some((n, first)) => return Err(parse_err(n + 1, format!("expected header {header:?}, found {first:?}"))),
        None => return Err(parse_err(1, format!("missing header {header:?}"))),
    }
    lines
        .map(|(n, l)| {
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            if fields.len() != width || fields.iter().any(|f| f.is_empty()) {
                Err(parse_err(n + 1, format!("expected {width} nonempty fields")))
            } else {
                Ok((n + 1, fields))
            }
        })
        .collect()
}
