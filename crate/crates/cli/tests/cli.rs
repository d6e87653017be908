//! End-to-end checks of the binary: subcommands, exit codes, and the
//! stats-replay equivalence of the saved events file.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lanecut(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanecut"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn synth_then_run_produces_all_reports() {
    let corpus = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let corpus_path = corpus.path().to_str().unwrap();
    let out_path = out.path().to_str().unwrap();

    let synth = lanecut(&["synth", "--out", corpus_path, "--scenarios", "8", "--nulls", "1", "--seed", "3"]);
    assert_eq!(exit_code(&synth), 0, "{}", stderr(&synth));
    assert_eq!(fs::read_dir(corpus.path()).unwrap().count(), 18); // 9 pairs

    let run = lanecut(&["run", "--input", corpus_path, "--out", out_path]);
    assert_eq!(exit_code(&run), 0, "{}", stderr(&run));

    for name in ["table1.csv", "table1.md", "events.csv", "drops.csv", "manifest.txt"] {
        assert!(out.path().join(name).exists(), "missing {name}");
    }
    // 2 roles x 2 anchors x 5 metrics, in both formats.
    let grid_files = fs::read_dir(out.path())
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name();
            name.to_string_lossy().starts_with("table_")
        })
        .count();
    assert_eq!(grid_files, 40);

    let table1 = fs::read_to_string(out.path().join("table1.csv")).unwrap();
    assert!(table1.starts_with("events,10,15,20,25,30"));
}

#[test]
fn validate_reports_clean_corpus() {
    let corpus = tempfile::tempdir().unwrap();
    let corpus_path = corpus.path().to_str().unwrap();
    let synth = lanecut(&["synth", "--out", corpus_path, "--scenarios", "2", "--nulls", "0", "--seed", "11"]);
    assert_eq!(exit_code(&synth), 0);

    let validate = lanecut(&["validate", "--input", corpus_path]);
    assert_eq!(exit_code(&validate), 0, "{}", stderr(&validate));
    let stdout = String::from_utf8_lossy(&validate.stdout).into_owned();
    assert!(stdout.contains("0 violations"), "{stdout}");
}

#[test]
fn validate_flags_corrupt_corpus() {
    let corpus = tempfile::tempdir().unwrap();
    let corpus_path = corpus.path().to_str().unwrap();
    lanecut(&["synth", "--out", corpus_path, "--scenarios", "1", "--nulls", "0", "--seed", "5"]);
    // Corrupt a mid-track frame index, breaking frame contiguity.
    let tracks = corpus.path().join("01_tracks.csv");
    let text = fs::read_to_string(&tracks).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let broken = lines[50].replacen(|c: char| c.is_ascii_digit(), "9999", 1);
    lines[50] = &broken;
    fs::write(&tracks, lines.join("\n")).unwrap();

    let validate = lanecut(&["validate", "--input", corpus_path]);
    assert_eq!(exit_code(&validate), 2, "{}", String::from_utf8_lossy(&validate.stdout));
}

#[test]
fn run_without_events_exits_three() {
    let corpus = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    lanecut(&["synth", "--out", corpus.path().to_str().unwrap(), "--scenarios", "0", "--nulls", "2", "--seed", "9"]);

    let run = lanecut(&[
        "run",
        "--input",
        corpus.path().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&run), 3);
    // Tables still written; table1 is header-only without events.
    let table1 = fs::read_to_string(out.path().join("table1.csv")).unwrap();
    assert_eq!(table1, "events,10,15,20,25,30\n");
}

#[test]
fn bad_flags_exit_one() {
    let out = tempfile::tempdir().unwrap();
    let out_path = out.path().to_str().unwrap();

    let neither = lanecut(&["run", "--out", out_path]);
    assert_eq!(exit_code(&neither), 1);

    let bad_gaps = lanecut(&["run", "--synthetic", "1", "--out", out_path, "--gaps", "10,zzz"]);
    assert_eq!(exit_code(&bad_gaps), 1);

    let unsorted_gaps = lanecut(&["run", "--synthetic", "1", "--out", out_path, "--gaps", "30,10"]);
    assert_eq!(exit_code(&unsorted_gaps), 1);

    let bad_format = lanecut(&["run", "--synthetic", "1", "--out", out_path, "--format", "pdf"]);
    assert_eq!(exit_code(&bad_format), 1);
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("params.conf");
    fs::write(&config, "v_s = 0.2\nspeed_floor = 1\n").unwrap();
    let out = dir.path().join("out");
    let run = lanecut(&[
        "run",
        "--synthetic",
        "1",
        "--out",
        out.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&run), 1);
    assert!(stderr(&run).contains("speed_floor"));
}

#[test]
fn config_file_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("params.conf");
    fs::write(
        &config,
        "# detection overrides\nv_s = 0.2\ngap_thresholds = 12,24\ngap_mode = center_distance\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = lanecut(&[
        "run",
        "--synthetic",
        "6",
        "--seed",
        "17",
        "--out",
        out.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&run), 0, "{}", stderr(&run));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("v_s = 0.2"));
    assert!(manifest.contains("gap_thresholds = 12,24"));
    assert!(manifest.contains("gap_mode = center_distance"));
    let table1 = fs::read_to_string(out.join("table1.csv")).unwrap();
    assert!(table1.starts_with("events,12,24"));
}

/// The stats subcommand must reproduce the run's tables exactly from the
/// saved events file.
#[test]
fn stats_replay_matches_original_tables() {
    let dir = tempfile::tempdir().unwrap();
    let run_out = dir.path().join("run");
    let stats_out = dir.path().join("stats");

    let run = lanecut(&[
        "run",
        "--synthetic",
        "12",
        "--seed",
        "23",
        "--out",
        run_out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&run), 0, "{}", stderr(&run));

    let stats = lanecut(&[
        "stats",
        "--input",
        run_out.join("events.csv").to_str().unwrap(),
        "--out",
        stats_out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&stats), 0, "{}", stderr(&stats));

    let compare = |name: &str| {
        let a = fs::read_to_string(run_out.join(name)).unwrap();
        let b = fs::read_to_string(stats_out.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between run and stats replay");
    };
    compare("table1.csv");
    compare("events.csv");
    for entry in fs::read_dir(&run_out).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().into_owned();
        if name.starts_with("table_") {
            compare(&name);
        }
    }
}

fn read_all_machine_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn worker_count_leaves_outputs_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    lanecut(&["synth", "--out", corpus.to_str().unwrap(), "--scenarios", "6", "--nulls", "1", "--seed", "29"]);

    let out1 = dir.path().join("w1");
    let out8 = dir.path().join("w8");
    let run1 = lanecut(&[
        "run", "--input", corpus.to_str().unwrap(), "--out", out1.to_str().unwrap(), "--workers", "1",
    ]);
    let run8 = lanecut(&[
        "run", "--input", corpus.to_str().unwrap(), "--out", out8.to_str().unwrap(), "--workers", "8",
    ]);
    assert_eq!(exit_code(&run1), 0);
    assert_eq!(exit_code(&run8), 0);
    assert_eq!(read_all_machine_outputs(&out1), read_all_machine_outputs(&out8));
}
