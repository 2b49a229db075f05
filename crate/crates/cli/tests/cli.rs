use std::path::Path;
use std::process::{Command, Output};

use btts_core::evaluation::fixtures_dir;

fn btts(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_btts"));
    cmd.args(args).env_remove("BTTS_SEED");
    if let Some(s) = seed {
        cmd.env("BTTS_SEED", s);
    }
    cmd.output().expect("run btts")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_1() {
    let o = btts(&["eval-mos", "--bogus"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(btts(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(btts(&[], None).status.code(), Some(1));
    assert_eq!(btts(&["--help"], None).status.code(), Some(0));
}

#[test]
fn invalid_config_exits_1_naming_the_field() {
    let ratings = fixtures_dir().join("mos_ratings.csv");
    let o = btts(
        &["--set", "signal.hop_length=4096", "eval-mos", "--ratings", p(&ratings)],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hop_length"), "{}", stderr(&o));
    let o = btts(&["--set", "train.nope=1", "eval-mos", "--ratings", p(&ratings)], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.nope"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        btts(&["eval-mos", "--ratings", p(&missing)], None).status.code(),
        Some(2)
    );
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "waveform_id,rater_id,rating\na,r1,9\n").unwrap();
    let o = btts(&["eval-mos", "--ratings", p(&bad)], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rating 9"));
}

#[test]
fn config_is_echoed_with_overrides_and_env_seed() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "train.batch_size = 2\n").unwrap();
    let ratings = fixtures_dir().join("mos_ratings.csv");
    let o = btts(
        &[
            "eval-mos",
            "--ratings",
            p(&ratings),
            "--config",
            p(&conf),
            "--set",
            "signal.griffin_lim_iters=60",
        ],
        Some("99"),
    );
    assert!(o.status.success());
    let err = stderr(&o);
    for line in [
        "signal.griffin_lim_iters = 60",
        "train.batch_size = 2",
        "model.seed = 99",
        "train.seed = 99",
    ] {
        assert!(err.contains(line), "missing {line:?} in\n{err}");
    }
    assert_eq!(stdout(&o).trim(), "MOS 3.79");
}

#[test]
fn eval_mos_writes_item_scores() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("items.csv");
    let o = btts(
        &[
            "eval-mos",
            "--ratings",
            p(&fixtures_dir().join("mos_ratings.csv")),
            "--out",
            p(&out),
        ],
        None,
    );
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], "waveform_id,score");
    assert_eq!(lines[1], "w00,3.0769");
    assert_eq!(lines[5], "w04,4.6923");
}

#[test]
fn eval_scores_summary_and_range() {
    let scores = fixtures_dir().join("pesq_scores.csv");
    let o = btts(&["eval-scores", "--scores", p(&scores)], None);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("pesq mean 0.77 "), "{}", stdout(&o));
    assert!(stdout(&o).trim_end().ends_with("count 100"));
    let o = btts(&["eval-scores", "--scores", p(&scores), "--range", "mos"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = btts(&["eval-scores", "--scores", p(&scores), "--range", "3,1"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn chart_with_own_scores_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("chart.csv");
    let o = btts(
        &[
            "chart",
            "--out",
            p(&out),
            "--system",
            "ours",
            "--scores",
            p(&fixtures_dir().join("pesq_scores.csv")),
            "--ratings",
            p(&fixtures_dir().join("mos_ratings.csv")),
        ],
        None,
    );
    assert!(o.status.success());
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        "system,metric,value\nours,pesq,0.77\nours,mos,3.79\n"
    );
    assert!(btts(&["chart", "--out", p(&out)], None).status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "system,metric,value\n");
}

#[test]
fn normalize_text_and_file() {
    let o = btts(&["normalize", "--text", "আমার ১২৩ টাকা"], None);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "আমার এক শত তেইশ টাকা\n");
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    let out = dir.path().join("out.txt");
    std::fs::write(&input, "আমার ১২৩ টাকা\nআমার ২ টাকা\n").unwrap();
    assert!(btts(&["normalize", "--input", p(&input), "--out", p(&out)], None)
        .status
        .success());
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 2);
}

#[test]
fn stats_of_toy_corpus() {
    let o = btts(&["stats", "--toy"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("metric,value\ntotal_sentences,48\n"), "{text}");
}

#[test]
fn prepare_train_synthesize_align() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let o = btts(&["prepare", "--toy", "--out", p(&cache)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = std::fs::read(cache.join("toy_000.bttc")).unwrap();
    assert!(btts(&["prepare", "--toy", "--out", p(&cache)], None).status.success());
    assert_eq!(
        std::fs::read(cache.join("toy_000.bttc")).unwrap(),
        first,
        "prepare is idempotent"
    );

    let run = dir.path().join("run");
    let o = btts(
        &[
            "train",
            "--toy",
            "--cache",
            p(&cache),
            "--out",
            p(&run),
            "--steps",
            "6",
            "--set",
            "train.checkpoint_interval=3",
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "ckpt_00000003.btts",
        "ckpt_00000006.btts",
        "config.txt",
        "vocab.txt",
        "log.csv",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 7);
    assert!(log.starts_with("step,loss,diagonality,wall_ms\n1,"));

    let o = btts(
        &[
            "train",
            "--toy",
            "--cache",
            p(&cache),
            "--out",
            p(&run),
            "--steps",
            "8",
            "--resume",
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("resuming from"));
    assert_eq!(std::fs::read_to_string(run.join("log.csv")).unwrap().lines().count(), 9);

    let wav = dir.path().join("out.wav");
    let o = btts(
        &[
            "synthesize",
            "--text",
            "মন বই",
            "--checkpoint",
            p(&run.join("ckpt_00000006.btts")),
            "--out",
            p(&wav),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let reader = hound::WavReader::open(&wav).unwrap();
    assert_eq!(reader.spec().bits_per_sample, 16);
    assert_eq!(reader.spec().sample_rate, 8000);

    let o = btts(
        &["synthesize", "--text", "!!", "--checkpoint", p(&run), "--out", p(&wav)],
        None,
    );
    assert_eq!(o.status.code(), Some(2));

    let align = dir.path().join("align.csv");
    let o = btts(
        &[
            "align-export",
            "--text",
            "মন বই",
            "--checkpoint",
            p(&run),
            "--out",
            p(&align),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("diagonality "));
    assert!(dir.path().join("align.pgm").exists());
    let rows = std::fs::read_to_string(&align).unwrap();
    for row in rows.lines() {
        let sum: f64 = row.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = btts(
        &[
            "synthesize",
            "--text",
            "মন",
            "--checkpoint",
            p(&dir.path().join("nope.btts")),
            "--out",
            p(&dir.path().join("x.wav")),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
}
