//! `btts` command-line front end. Progress and the resolved config go to
//! standard error; artifacts go to the named output files, and short
//! result lines (MOS, score summaries, diagonality) go to standard output.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use btts_core::corpus::{self, toy, Utterance};
use btts_core::evaluation::{self, ChartEntry, RatingTable, ScoreSet};
use btts_core::model::{self, init_params, ForwardOptions};
use btts_core::signal::wav;
use btts_core::textnorm::{self, build_vocabulary, NormalizationRules, Vocabulary};
use btts_core::training::{
    self, alignment_diagonality, export_alignment, latest_checkpoint, load_checkpoint, make_sample, RunOutputs,
    TrainState,
};
use btts_core::util::round_half_up;

use config::{load_config, Preset, Resolved, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOG_FILE: &str = "log.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    corpus::CorpusError,
    evaluation::EvalError,
    model::ModelError,
    btts_core::signal::SignalError,
    textnorm::TextError,
    training::TrainError,
    std::io::Error
);

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "btts",
    version,
    about = "Bangla character-to-waveform speech synthesis toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat `section.key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Built-in defaults to start from (toy when training on the bundled corpus).
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// `id|raw_text[|normalized_text]` metadata file.
    #[arg(long, value_name = "PATH", required_unless_present = "toy")]
    pub metadata: Option<PathBuf>,
    /// Directory of `<id>.wav` files (default: `wavs` next to the metadata).
    #[arg(long, value_name = "DIR")]
    pub wav_dir: Option<PathBuf>,
    /// Use the bundled toy corpus.
    #[arg(long, conflicts_with = "metadata")]
    pub toy: bool,
    /// Directory with number, abbreviation and symbol lexicons.
    #[arg(long, value_name = "DIR")]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize Bangla text.
    Normalize {
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        text: Option<String>,
        /// File with one text per line.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        lexicon: Option<PathBuf>,
    },
    /// Corpus statistics as `metric,value` CSV.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Keep only utterances with 4 to 11 words first.
        #[arg(long)]
        filter: bool,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Filter the corpus, build the vocabulary and write the feature cache.
    Prepare {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train, writing checkpoints, log, config and vocabulary to `--out`.
    Train {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Feature cache written by `prepare`.
        #[arg(long, value_name = "DIR")]
        cache: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Train until this step (default: train.max_steps).
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from the latest checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Synthesize a 16-bit PCM WAV from text.
    Synthesize {
        #[arg(long)]
        text: String,
        /// Checkpoint file, or a run directory to take the latest from.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, value_name = "DIR")]
        lexicon: Option<PathBuf>,
    },
    /// MOS from `waveform_id,rater_id,rating` ratings.
    EvalMos {
        #[arg(long, value_name = "PATH")]
        ratings: PathBuf,
        /// Per-item MOS as `waveform_id,score`.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Summary of a `waveform_id,score` file.
    EvalScores {
        #[arg(long, value_name = "PATH")]
        scores: PathBuf,
        #[arg(long, default_value = "pesq")]
        label: String,
        /// `pesq`, `mos` or `LO,HI`.
        #[arg(long, default_value = "pesq")]
        range: String,
    },
    /// Export the attention alignment of a free-running synthesis.
    AlignExport {
        #[arg(long)]
        text: String,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// CSV path; a PGM image is written next to it.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, value_name = "DIR")]
        lexicon: Option<PathBuf>,
    },
    /// Bar-chart data as `system,metric,value` CSV.
    Chart {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Name for the system scored by `--ratings` and `--scores`.
        #[arg(long, default_value = "this system")]
        system: String,
        #[arg(long, value_name = "PATH")]
        ratings: Option<PathBuf>,
        /// PESQ `waveform_id,score` file.
        #[arg(long, value_name = "PATH")]
        scores: Option<PathBuf>,
        /// Append the published comparison systems.
        #[arg(long)]
        comparison: bool,
    },
}

/// Parses `argv` (program name first) and runs; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let base = base_config(&cli)?;
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = load_config(
        base,
        cli.config.config.as_deref(),
        &cli.config.overrides,
        env_seed.as_deref(),
    )?;
    eprint!("# resolved config\n{}", cfg.to_text());
    match cli.command {
        Command::Normalize {
            text,
            input,
            out,
            lexicon,
        } => normalize(text, input, out, lexicon.as_deref()),
        Command::Stats { corpus, filter, out } => stats(&corpus, filter, out.as_deref()),
        Command::Prepare { corpus, out } => prepare(&cfg, &corpus, &out),
        Command::Train {
            corpus,
            cache,
            out,
            steps,
            resume,
        } => train(cfg, &corpus, cache.as_deref(), &out, steps, resume),
        Command::Synthesize {
            text,
            checkpoint,
            out,
            lexicon,
        } => synthesize(&cfg, &text, &checkpoint, &out, lexicon.as_deref()),
        Command::EvalMos { ratings, out } => eval_mos(&ratings, out.as_deref()),
        Command::EvalScores { scores, label, range } => eval_scores(&scores, &label, &range),
        Command::AlignExport {
            text,
            checkpoint,
            out,
            lexicon,
        } => align_export(&cfg, &text, &checkpoint, &out, lexicon.as_deref()),
        Command::Chart {
            out,
            system,
            ratings,
            scores,
            comparison,
        } => chart(&out, &system, ratings.as_deref(), scores.as_deref(), comparison),
    }
}

/// Lowest config layer: the run's saved config for checkpoint-based
/// commands, the chosen preset otherwise.
fn base_config(cli: &Cli) -> Result<Resolved> {
    let checkpoint = match &cli.command {
        Command::Synthesize { checkpoint, .. } | Command::AlignExport { checkpoint, .. } => Some(checkpoint),
        _ => None,
    };
    if let Some(ckpt) = checkpoint {
        let path = run_dir(ckpt).join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut cfg = Resolved::preset(Preset::Default);
        cfg.apply_text(&text, &path.display().to_string())?;
        return Ok(cfg);
    }
    let toy_corpus = matches!(
        &cli.command,
        Command::Stats { corpus, .. } | Command::Prepare { corpus, .. } | Command::Train { corpus, .. } if corpus.toy
    );
    let preset = cli
        .config
        .preset
        .unwrap_or(if toy_corpus { Preset::Toy } else { Preset::Default });
    Ok(Resolved::preset(preset))
}

fn run_dir(checkpoint: &Path) -> PathBuf {
    if checkpoint.is_dir() {
        checkpoint.to_path_buf()
    } else {
        checkpoint.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn rules(lexicon: Option<&Path>) -> Result<NormalizationRules> {
    Ok(match lexicon {
        Some(dir) => NormalizationRules::load_dir(dir)?,
        None => NormalizationRules::bundled(),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_corpus(args: &CorpusArgs) -> Result<Vec<Utterance>> {
    let rules = rules(args.lexicon.as_deref())?;
    let (metadata, default_wavs) = match &args.metadata {
        Some(m) => (m.clone(), m.parent().unwrap_or(Path::new(".")).join("wavs")),
        None => (toy::bundled_dir().join("metadata.csv"), toy::bundled_dir().join("wavs")),
    };
    let wav_dir = args.wav_dir.clone().unwrap_or(default_wavs);
    corpus::load_metadata(&metadata, &rules, Some(&wav_dir))
        .map_err(|e| CliError::Data(format!("{}: {e}", metadata.display())))
}

fn normalize(text: Option<String>, input: Option<PathBuf>, out: Option<PathBuf>, lexicon: Option<&Path>) -> Result<()> {
    let rules = rules(lexicon)?;
    let lines: Vec<String> = match (text, input) {
        (Some(t), _) => vec![t],
        (None, Some(p)) => std::fs::read_to_string(&p)
            .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
            .lines()
            .map(str::to_string)
            .collect(),
        (None, None) => return Err(CliError::Usage("give --text or --input".into())),
    };
    let mut result = String::new();
    for l in &lines {
        result.push_str(&textnorm::normalize(l, &rules).text);
        result.push('\n');
    }
    match out {
        Some(p) => {
            write_file(&p, &result)?;
            eprintln!("normalized {} line(s) into {}", lines.len(), p.display());
        }
        None => print!("{result}"),
    }
    Ok(())
}

fn stats(args: &CorpusArgs, filter: bool, out: Option<&Path>) -> Result<()> {
    let mut utts = load_corpus(args)?;
    if filter {
        utts = corpus::filter_by_length(&utts);
    }
    let csv = corpus::compute_stats(&utts)?.to_csv();
    match out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn prepare(cfg: &Resolved, args: &CorpusArgs, out: &Path) -> Result<()> {
    let all = load_corpus(args)?;
    let utts = corpus::filter_by_length(&all);
    eprintln!("kept {} of {} utterances with 4 to 11 words", utts.len(), all.len());
    let vocab = build_vocabulary(utts.iter().map(|u| &u.normalized_text));
    let paths = corpus::prepare_corpus(&utts, &cfg.signal, cfg.model.reduction_r, out)?;
    vocab.save(&out.join(VOCAB_FILE))?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_text())?;
    eprintln!(
        "wrote {} feature files and a {}-symbol vocabulary to {}",
        paths.len(),
        vocab.len(),
        out.display()
    );
    Ok(())
}

fn train(
    mut cfg: Resolved,
    args: &CorpusArgs,
    cache: Option<&Path>,
    out: &Path,
    steps: Option<u64>,
    resume: bool,
) -> Result<()> {
    let all = load_corpus(args)?;
    let mut utts = corpus::filter_by_length(&all);
    let vocab = match cache.map(|c| c.join(VOCAB_FILE)).filter(|p| p.exists()) {
        Some(p) => Vocabulary::load(&p)?,
        None => build_vocabulary(utts.iter().map(|u| &u.normalized_text)),
    };
    if cfg.model.vocab_size != vocab.len() {
        eprintln!("model.vocab_size = {} (from the corpus vocabulary)", vocab.len());
        cfg.model.vocab_size = vocab.len();
    }
    cfg.validate()?;
    corpus::assign_ids(&mut utts, &vocab)?;
    let features = corpus::load_features(&utts, &cfg.signal, cfg.model.reduction_r, cache)?;
    let samples: Vec<_> = utts
        .iter()
        .zip(features)
        .map(|(u, f)| make_sample(&u.id, u.char_ids.clone(), f.mel, f.linear))
        .collect();
    eprintln!("training on {} utterances", samples.len());

    std::fs::create_dir_all(out)?;
    let latest = if resume { latest_checkpoint(out)? } else { None };
    let mut state = match latest {
        Some(p) => {
            eprintln!("resuming from {}", p.display());
            load_checkpoint(&p, &cfg.model, &cfg.signal, &cfg.train)?
        }
        None => TrainState::new(
            init_params(&cfg.model)?,
            cfg.model.clone(),
            cfg.train.clone(),
            &cfg.signal,
        )?,
    };
    write_file(&out.join(CONFIG_FILE), &cfg.to_text())?;
    vocab.save(&out.join(VOCAB_FILE))?;
    let until = steps.unwrap_or(cfg.train.max_steps);
    let outputs = RunOutputs {
        checkpoint_dir: Some(out.to_path_buf()),
        log_path: Some(out.join(LOG_FILE)),
    };
    let every = (until / 20).max(1);
    let trace = training::train(&mut state, &samples, until, &outputs, |r| {
        if r.step % every == 0 || r.step == until {
            eprintln!(
                "step {:>6}  loss {:.5}  grad_norm {:.4}  lr {:.2e}  diagonality {:.3}",
                r.step, r.loss, r.grad_norm, r.learning_rate, r.diagonality
            );
        }
    })?;
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        eprintln!("loss {first:.5} -> {last:.5} over {} step(s)", trace.len());
    }
    Ok(())
}

struct LoadedModel {
    state: TrainState,
    vocab: Vocabulary,
}

fn load_model(cfg: &Resolved, checkpoint: &Path) -> Result<LoadedModel> {
    let dir = run_dir(checkpoint);
    let path = if checkpoint.is_dir() {
        latest_checkpoint(checkpoint)?
            .ok_or_else(|| CliError::Data(format!("no checkpoint in {}", checkpoint.display())))?
    } else {
        checkpoint.to_path_buf()
    };
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let state = load_checkpoint(&path, &cfg.model, &cfg.signal, &cfg.train)?;
    eprintln!("loaded {} (step {})", path.display(), state.step);
    Ok(LoadedModel { state, vocab })
}

fn synthesize(cfg: &Resolved, text: &str, checkpoint: &Path, out: &Path, lexicon: Option<&Path>) -> Result<()> {
    let m = load_model(cfg, checkpoint)?;
    let audio = model::synthesize(
        text,
        &m.state.params,
        &cfg.model,
        &rules(lexicon)?,
        &m.vocab,
        &cfg.signal,
    )?;
    wav::write_wav(out, &audio)?;
    eprintln!("wrote {:.2} s of audio to {}", audio.duration_secs(), out.display());
    Ok(())
}

fn align_export(cfg: &Resolved, text: &str, checkpoint: &Path, out: &Path, lexicon: Option<&Path>) -> Result<()> {
    let m = load_model(cfg, checkpoint)?;
    let normalized = textnorm::normalize(text, &rules(lexicon)?);
    let ids = textnorm::encode(&normalized, &m.vocab)?;
    let fwd = model::forward_with(
        &ids,
        &m.state.params,
        &cfg.model,
        None,
        ForwardOptions::inference(&cfg.model),
    )?;
    let pgm = export_alignment(&fwd.alignment, out)?;
    eprintln!("wrote {} and {}", out.display(), pgm.display());
    println!("diagonality {:.4}", alignment_diagonality(&fwd.alignment));
    Ok(())
}

fn eval_mos(ratings: &Path, out: Option<&Path>) -> Result<()> {
    let table = RatingTable::load(ratings)?;
    let items = evaluation::per_item_mos(&table);
    let summary = evaluation::aggregate(&items);
    if let Some(p) = out {
        let mut csv = format!("{}\n", evaluation::SCORES_HEADER);
        for (id, v) in items.ids().iter().zip(items.values()) {
            csv.push_str(&format!("{id},{:.4}\n", round_half_up(*v, 4)));
        }
        write_file(p, &csv)?;
    }
    eprintln!("{} items x {} raters", table.items().len(), table.raters().len());
    println!("MOS {:.2}", round_half_up(summary.mean, 2));
    Ok(())
}

fn parse_range(range: &str) -> Result<(f64, f64)> {
    match range {
        "pesq" => Ok(evaluation::PESQ_RANGE),
        "mos" => Ok(evaluation::MOS_RANGE),
        other => {
            let bad = || CliError::Usage(format!("--range {other:?} is not pesq, mos or LO,HI"));
            let (lo, hi) = other.split_once(',').ok_or_else(bad)?;
            let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
            if lo <= hi {
                Ok((lo, hi))
            } else {
                Err(bad())
            }
        }
    }
}

fn eval_scores(scores: &Path, label: &str, range: &str) -> Result<()> {
    let set = ScoreSet::load(label, scores, parse_range(range)?)?;
    let s = evaluation::aggregate(&set);
    println!(
        "{label} mean {:.2} stddev {:.2} min {:.2} max {:.2} count {}",
        round_half_up(s.mean, 2),
        round_half_up(s.stddev, 2),
        round_half_up(s.min, 2),
        round_half_up(s.max, 2),
        s.count
    );
    Ok(())
}

fn chart(out: &Path, system: &str, ratings: Option<&Path>, scores: Option<&Path>, comparison: bool) -> Result<()> {
    let mut entries = Vec::new();
    if let Some(p) = scores {
        let set = ScoreSet::load("pesq", p, evaluation::PESQ_RANGE)?;
        entries.push(ChartEntry::from_summary(system, "pesq", &evaluation::aggregate(&set)));
    }
    if let Some(p) = ratings {
        let items = evaluation::per_item_mos(&RatingTable::load(p)?);
        entries.push(ChartEntry::from_summary(system, "mos", &evaluation::aggregate(&items)));
    }
    evaluation::export_chart_data(&entries, comparison, out)?;
    let rows = entries.len() + if comparison { 8 } else { 0 };
    eprintln!("wrote {rows} row(s) to {}", out.display());
    Ok(())
}
