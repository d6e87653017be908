//! Command-line front end for the lane-change analytics pipeline.
//!
//! Exit codes: 0 success, 1 config error, 2 ingestion error, 3 no events.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lanecut_core::ingest::{load_corpus, validate_recording};
use lanecut_core::model::{default_windows, DetectionParams, GapMode};
use lanecut_core::pipeline::{
    build_tables, run_pipeline, InputSource, OutputFormat, PipelineConfig, PipelineError,
    ReportBundle,
};
use lanecut_core::report::{read_events_csv, write_report};
use lanecut_core::synth::{make_null_scenario, random_feasible_scenario, write_highd_files};

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_INGEST: u8 = 2;
const EXIT_NO_EVENTS: u8 = 3;

#[derive(Parser)]
#[command(
    name = "lanecut",
    version,
    about = "Lane-change extraction, cut-in classification, and rank-sum comparison tables \
             for highD-style trajectory recordings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write the report tables
    Run {
        /// Corpus directory with *_tracks.csv / *_recordingMeta.csv pairs
        #[arg(long, conflicts_with = "synthetic")]
        input: Option<PathBuf>,
        /// Generate this many synthetic scenarios instead of reading files
        #[arg(long)]
        synthetic: Option<usize>,
        /// Null (lane-keeping) recordings to add to a synthetic corpus
        #[arg(long, default_value_t = 0)]
        nulls: usize,
        /// Seed for synthetic generation
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output directory for the report files
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated cut-in gap thresholds in meters, e.g. 10,15,20
        #[arg(long)]
        gaps: Option<String>,
        /// Flat key=value config file overriding detection parameters
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output formats: any of csv,md
        #[arg(long, default_value = "csv,md")]
        format: String,
        /// Worker threads (default: all cores)
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Generate a synthetic corpus in the ingestion CSV format
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        scenarios: usize,
        #[arg(long, default_value_t = 2)]
        nulls: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Load a corpus and report every invariant violation
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Recompute the comparison tables from a saved events.csv
    Stats {
        /// events.csv produced by `lanecut run`
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv,md")]
        format: String,
    },
}

fn parse_formats(raw: &str) -> Result<Vec<OutputFormat>, String> {
    let mut formats = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let format = match part {
            "csv" => OutputFormat::Csv,
            "md" | "markdown" => OutputFormat::Markdown,
            other => return Err(format!("unknown format `{other}` (expected csv or md)")),
        };
        if !formats.contains(&format) {
            formats.push(format);
        }
    }
    if formats.is_empty() {
        return Err("no output formats selected".into());
    }
    Ok(formats)
}

fn parse_gaps(raw: &str) -> Result<Vec<f64>, String> {
    let gaps: Result<Vec<f64>, _> = raw
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse::<f64>)
        .collect();
    gaps.map_err(|e| format!("bad gap threshold list: {e}"))
}

/// Applies a flat key=value config file to the detection parameters.
/// Unknown keys are errors so typos cannot silently skew a run.
fn apply_config_file(path: &Path, params: &mut DetectionParams) -> Result<(), String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("{}:{}: expected key = value", path.display(), lineno + 1));
        };
        let key = key.trim();
        let value = value.trim();
        let parse_f = |v: &str| v.parse::<f64>().map_err(|e| format!("bad value for {key}: {e}"));
        match key {
            "v_s" => params.v_s = parse_f(value)?,
            "tau_s" => params.tau_s = parse_f(value)?,
            "v_e" => params.v_e = parse_f(value)?,
            "tau_e" => params.tau_e = parse_f(value)?,
            "min_speed" => params.min_speed = parse_f(value)?,
            "gap_thresholds" => params.gap_thresholds = parse_gaps(value)?,
            "gap_mode" => {
                params.gap_mode = match value {
                    "net_gap" => GapMode::NetGap,
                    "center_distance" => GapMode::CenterDistance,
                    other => return Err(format!("unknown gap_mode `{other}`")),
                }
            }
            other => {
                return Err(format!(
                    "{}:{}: unknown config key `{other}`",
                    path.display(),
                    lineno + 1
                ))
            }
        }
    }
    Ok(())
}

fn config_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_CONFIG)
}

#[allow(clippy::too_many_arguments)]
fn run_command(
    input: Option<PathBuf>,
    synthetic: Option<usize>,
    nulls: usize,
    seed: u64,
    out: PathBuf,
    gaps: Option<String>,
    config: Option<PathBuf>,
    format: String,
    workers: Option<usize>,
) -> ExitCode {
    let mut params = DetectionParams::default();
    if let Some(path) = &config {
        if let Err(msg) = apply_config_file(path, &mut params) {
            return config_error(&msg);
        }
    }
    if let Some(raw) = &gaps {
        match parse_gaps(raw) {
            Ok(g) => params.gap_thresholds = g,
            Err(msg) => return config_error(&msg),
        }
    }
    let formats = match parse_formats(&format) {
        Ok(f) => f,
        Err(msg) => return config_error(&msg),
    };
    let input_source = match (input, synthetic) {
        (Some(dir), None) => InputSource::Directory(dir),
        (None, Some(scenarios)) => InputSource::Synthetic { scenarios, nulls, seed },
        (None, None) => return config_error("exactly one of --input or --synthetic is required"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let cfg = PipelineConfig {
        input: input_source,
        params,
        windows: default_windows(),
        output_dir: out.clone(),
        formats: formats.clone(),
        workers,
    };
    let bundle = match run_pipeline(&cfg) {
        Ok(bundle) => bundle,
        Err(PipelineError::ConfigInvalid(msg)) => return config_error(&msg),
        Err(PipelineError::Ingest(err)) => {
            eprintln!("ingestion error: {err}");
            return ExitCode::from(EXIT_INGEST);
        }
        Err(PipelineError::Io(err)) => {
            eprintln!("io error: {err}");
            return ExitCode::from(EXIT_INGEST);
        }
    };
    write_bundle(&bundle, &out, &formats)
}

fn write_bundle(bundle: &ReportBundle, out: &Path, formats: &[OutputFormat]) -> ExitCode {
    match write_report(bundle, out, formats) {
        Ok(files) => {
            for warning in &bundle.ingest_report.warnings {
                eprintln!("warning: {warning}");
            }
            println!(
                "{} recordings, {} raw transitions, {} kept events, {} drops",
                bundle.ingest_report.recordings_loaded,
                bundle.drop_audit.raw_transitions,
                bundle.drop_audit.kept,
                bundle.drop_audit.drops.len(),
            );
            println!("wrote {} files to {}", files.len(), out.display());
            if bundle.events.is_empty() {
                eprintln!("no events detected");
                ExitCode::from(EXIT_NO_EVENTS)
            } else {
                ExitCode::from(EXIT_OK)
            }
        }
        Err(err) => config_error(&format!("cannot write report: {err}")),
    }
}

fn synth_command(out: PathBuf, scenarios: usize, nulls: usize, seed: u64) -> ExitCode {
    let params = DetectionParams::default();
    for i in 0..scenarios {
        let (_, mut rec, _) = random_feasible_scenario(seed.wrapping_add(i as u64), &params);
        rec.recording_id = (i + 1) as u64;
        if let Err(err) = write_highd_files(&rec, &out) {
            return config_error(&format!("cannot write corpus: {err}"));
        }
    }
    for j in 0..nulls {
        let speeds: Vec<f64> = (0..3 + j % 4).map(|k| 18.0 + 4.0 * k as f64).collect();
        let mut rec = make_null_scenario(40.0, &speeds);
        rec.recording_id = (scenarios + j + 1) as u64;
        if let Err(err) = write_highd_files(&rec, &out) {
            return config_error(&format!("cannot write corpus: {err}"));
        }
    }
    println!(
        "wrote {} recordings ({} scenarios, {} null) to {}",
        scenarios + nulls,
        scenarios,
        nulls,
        out.display()
    );
    ExitCode::from(EXIT_OK)
}

fn validate_command(input: PathBuf) -> ExitCode {
    let (recordings, report) = match load_corpus(&input) {
        Ok(result) => result,
        Err(err) => {
            eprintln!("ingestion error: {err}");
            return ExitCode::from(EXIT_INGEST);
        }
    };
    let mut violation_count = 0usize;
    for rec in &recordings {
        for violation in validate_recording(rec) {
            println!("recording {}: {violation}", rec.recording_id);
            violation_count += 1;
        }
    }
    for warning in &report.warnings {
        println!("warning: {warning}");
    }
    println!(
        "{} recordings, {} tracks, {} rows rejected, {} violations",
        recordings.len(),
        report.tracks_loaded,
        report.rows_rejected,
        violation_count
    );
    let failed_files = report.warnings.iter().any(|w| w.contains(".csv"));
    if violation_count > 0 || failed_files || recordings.is_empty() {
        ExitCode::from(EXIT_INGEST)
    } else {
        ExitCode::from(EXIT_OK)
    }
}

fn stats_command(input: PathBuf, out: PathBuf, format: String) -> ExitCode {
    let formats = match parse_formats(&format) {
        Ok(f) => f,
        Err(msg) => return config_error(&msg),
    };
    let events_file = match read_events_csv(&input) {
        Ok(f) => f,
        Err(err) => {
            eprintln!("ingestion error: {err}");
            return ExitCode::from(EXIT_INGEST);
        }
    };
    let (table1, grids) = build_tables(
        &events_file.events,
        &events_file.thresholds,
        &events_file.windows,
    );
    let manifest = format!(
        "lanecut stats replay\ntool_version = {}\nsource_events = {}\nevents = {}\n",
        env!("CARGO_PKG_VERSION"),
        input.display(),
        events_file.events.len(),
    );
    let mut recordings: Vec<u64> = events_file.events.iter().map(|e| e.recording_id).collect();
    recordings.sort_unstable();
    recordings.dedup();
    let drop_audit = lanecut_core::pipeline::DropAudit {
        raw_transitions: events_file.events.len(),
        kept: events_file.events.len(),
        ..Default::default()
    };
    let ingest_report = lanecut_core::ingest::IngestReport {
        recordings_loaded: recordings.len(),
        ..Default::default()
    };
    let bundle = ReportBundle {
        thresholds: events_file.thresholds.clone(),
        windows: events_file.windows.clone(),
        gap_mode: GapMode::NetGap,
        table1,
        grids,
        events: events_file.events,
        drop_audit,
        ingest_report,
        run_manifest: manifest,
    };
    write_bundle(&bundle, &out, &formats)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            input,
            synthetic,
            nulls,
            seed,
            out,
            gaps,
            config,
            format,
            workers,
        } => run_command(input, synthetic, nulls, seed, out, gaps, config, format, workers),
        Command::Synth { out, scenarios, nulls, seed } => synth_command(out, scenarios, nulls, seed),
        Command::Validate { input } => validate_command(input),
        Command::Stats { input, out, format } => stats_command(input, out, format),
    }
}
