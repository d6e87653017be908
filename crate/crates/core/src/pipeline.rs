//! End-to-end orchestration: ingest or synthesize a corpus, detect and
//! classify events, compute the metric grid, and run every group comparison.
//!
//! All fan-out is deterministic: recordings process in lexicographic input
//! order, events sort by (recording, vehicle, crossing frame), and reducers
//! merge in key order, so outputs are byte-identical at any worker count.

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classify::{attach_and_filter, classify, Label};
use crate::detect::extract_events;
use crate::ingest::{discover_pairs, load_corpus, IngestError, IngestReport};
use crate::metrics::{
    acceleration_percentage, cumulative_velocity_change, max_acceleration, min_deceleration,
    slice_window, velocity_change_ratio,
};
use crate::model::{
    Anchor, DetectionParams, FrameIdx, GapMode, LaneId, Recording, VehicleId, WindowSpec,
};
use crate::stats::{compare_groups, GroupComparison};
use crate::synth::{make_null_scenario, random_feasible_scenario};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where the corpus comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Directory(PathBuf),
    Synthetic { scenarios: usize, nulls: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Markdown,
}

impl OutputFormat {
    pub fn name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Markdown => "md",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: InputSource,
    pub params: DetectionParams,
    pub windows: Vec<WindowSpec>,
    pub output_dir: PathBuf,
    pub formats: Vec<OutputFormat>,
    /// None or 0 = let the runtime decide.
    pub workers: Option<usize>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.params.validate().map_err(PipelineError::ConfigInvalid)?;
        if self.windows.is_empty() {
            return Err(PipelineError::ConfigInvalid("window set is empty".into()));
        }
        if self.formats.is_empty() {
            return Err(PipelineError::ConfigInvalid("no output formats selected".into()));
        }
        if let InputSource::Synthetic { scenarios, nulls, .. } = self.input {
            if scenarios + nulls == 0 {
                return Err(PipelineError::ConfigInvalid("synthetic corpus is empty".into()));
            }
        }
        Ok(())
    }
}

/// Which vehicle a metric describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Lcv,
    Tfv,
}

pub const ROLES: [Role; 2] = [Role::Lcv, Role::Tfv];

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Lcv => "lcv",
            Role::Tfv => "tfv",
        }
    }
}

/// The five driving-characteristic metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    CumulativeVelocityChange,
    VelocityChangeRatio,
    AccelerationPercentage,
    MaxAcceleration,
    MinDeceleration,
}

pub const METRICS: [MetricKind; 5] = [
    MetricKind::CumulativeVelocityChange,
    MetricKind::VelocityChangeRatio,
    MetricKind::AccelerationPercentage,
    MetricKind::MaxAcceleration,
    MetricKind::MinDeceleration,
];

impl MetricKind {
    pub fn short_name(self) -> &'static str {
        match self {
            MetricKind::CumulativeVelocityChange => "dv",
            MetricKind::VelocityChangeRatio => "rv",
            MetricKind::AccelerationPercentage => "pa",
            MetricKind::MaxAcceleration => "amax",
            MetricKind::MinDeceleration => "amin",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            MetricKind::CumulativeVelocityChange => "cumulative velocity change",
            MetricKind::VelocityChangeRatio => "velocity change ratio",
            MetricKind::AccelerationPercentage => "acceleration percentage",
            MetricKind::MaxAcceleration => "maximum acceleration",
            MetricKind::MinDeceleration => "minimum deceleration",
        }
    }

    fn index(self) -> usize {
        METRICS.iter().position(|m| *m == self).unwrap()
    }
}

/// Standard table number for the comparisons published for this analysis.
pub fn published_reference(role: Role, anchor: Anchor, metric: MetricKind) -> Option<&'static str> {
    match (role, anchor, metric) {
        (Role::Lcv, Anchor::T1, MetricKind::CumulativeVelocityChange) => Some("II"),
        (Role::Lcv, Anchor::T1, MetricKind::VelocityChangeRatio) => Some("III"),
        (Role::Lcv, Anchor::T2, MetricKind::AccelerationPercentage) => Some("IV"),
        (Role::Lcv, Anchor::T2, MetricKind::MaxAcceleration) => Some("V"),
        (Role::Tfv, Anchor::T1, MetricKind::MinDeceleration) => Some("VI"),
        (Role::Tfv, Anchor::T2, MetricKind::CumulativeVelocityChange) => Some("VII"),
        _ => None,
    }
}

/// One kept event with everything the statistics stage needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub recording_id: u64,
    pub lcv_id: VehicleId,
    pub tfv_id: VehicleId,
    pub t1: FrameIdx,
    pub t2: FrameIdx,
    pub t3: FrameIdx,
    pub origin_lane: LaneId,
    pub target_lane: LaneId,
    pub x_gap_at_t1: f64,
    /// Label per configured threshold, ascending.
    pub labels: Vec<(f64, Label)>,
    /// Flattened [role][window][metric]; None marks an uncomputable value
    /// (the velocity-change ratio when speeds touch zero inside a window).
    pub metrics: Vec<Option<f64>>,
}

impl EventRecord {
    pub fn metric_index(n_windows: usize, role: Role, window_idx: usize, metric: MetricKind) -> usize {
        let role_idx = ROLES.iter().position(|r| *r == role).unwrap();
        (role_idx * n_windows + window_idx) * METRICS.len() + metric.index()
    }

    pub fn metric(&self, n_windows: usize, role: Role, window_idx: usize, metric: MetricKind) -> Option<f64> {
        self.metrics[Self::metric_index(n_windows, role, window_idx, metric)]
    }

    pub fn label_at(&self, threshold: f64) -> Option<Label> {
        self.labels
            .iter()
            .find(|(t, _)| *t == threshold)
            .map(|(_, l)| *l)
    }
}

/// Cut-in / other counts per threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub thresholds: Vec<f64>,
    pub cutin: Vec<usize>,
    pub other: Vec<usize>,
}

/// One comparison cell: a (threshold, window) pair of one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub threshold: f64,
    pub window: WindowSpec,
    pub cutin_n: usize,
    pub other_n: usize,
    /// None when either group is empty for this cell.
    pub comparison: Option<GroupComparison>,
}

/// All cells for one (role, anchor, metric) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonGrid {
    pub role: Role,
    pub anchor: Anchor,
    pub metric: MetricKind,
    pub reference: Option<&'static str>,
    pub cells: Vec<GridCell>,
}

impl ComparisonGrid {
    pub fn file_stem(&self) -> String {
        format!(
            "table_{}_{}_{}",
            self.role.name(),
            self.anchor.name().to_lowercase(),
            self.metric.short_name()
        )
    }
}

/// One dropped transition or event in the audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct DropRow {
    pub stage: &'static str,
    pub recording_id: u64,
    pub vehicle_id: VehicleId,
    pub t2: FrameIdx,
    pub reason: &'static str,
    pub detail: String,
}

/// Exclusion accounting: raw transitions = kept + all drops.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DropAudit {
    pub raw_transitions: usize,
    pub kept: usize,
    pub drops: Vec<DropRow>,
    /// (event, window, role) triples whose ratio metric was uncomputable.
    pub metric_gaps: usize,
}

impl DropAudit {
    pub fn count_reason(&self, reason: &str) -> usize {
        self.drops.iter().filter(|d| d.reason == reason).count()
    }
}

/// Everything `run_pipeline` produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub thresholds: Vec<f64>,
    pub windows: Vec<WindowSpec>,
    pub gap_mode: GapMode,
    pub table1: Table1,
    pub grids: Vec<ComparisonGrid>,
    pub events: Vec<EventRecord>,
    pub drop_audit: DropAudit,
    pub ingest_report: IngestReport,
    pub run_manifest: String,
}

struct RecordingOutcome {
    events: Vec<EventRecord>,
    drops: Vec<DropRow>,
    raw_transitions: usize,
    metric_gaps: usize,
}

fn process_recording(
    rec: &Recording,
    params: &DetectionParams,
    windows: &[WindowSpec],
) -> RecordingOutcome {
    let (raw_events, detect_report) = extract_events(rec, params);
    let raw_transitions = raw_events.len() + detect_report.dropped.len();
    let mut drops: Vec<DropRow> = detect_report
        .dropped
        .into_iter()
        .map(|(tr, reason)| DropRow {
            stage: "detect",
            recording_id: rec.recording_id,
            vehicle_id: tr.vehicle_id,
            t2: tr.t2,
            reason: reason.code(),
            detail: format!("{} -> {}", tr.from_lane, tr.to_lane),
        })
        .collect();

    let (kept, excluded) = attach_and_filter(raw_events, rec, params, windows);
    drops.extend(excluded.into_iter().map(|(ev, reason)| DropRow {
        stage: "classify",
        recording_id: rec.recording_id,
        vehicle_id: ev.lcv_id,
        t2: ev.t2,
        reason: reason.code.code(),
        detail: reason.detail,
    }));

    let mut metric_gaps = 0;
    let events = kept
        .into_iter()
        .map(|ev| {
            let classified = classify(&ev, &params.gap_thresholds);
            let tfv_id = ev.tfv_id.expect("attached");
            let mut values = vec![None; ROLES.len() * windows.len() * METRICS.len()];
            for role in ROLES {
                let track = match role {
                    Role::Lcv => rec.track(ev.lcv_id).unwrap(),
                    Role::Tfv => rec.track(tfv_id).unwrap(),
                };
                for (w_idx, w) in windows.iter().enumerate() {
                    let anchor_frame = match w.anchor {
                        Anchor::T1 => ev.t1,
                        Anchor::T2 => ev.t2,
                    };
                    let series = slice_window(track, anchor_frame, w, rec.dt)
                        .expect("windows verified on-track by the exclusion rules");
                    let idx = |m: MetricKind| EventRecord::metric_index(windows.len(), role, w_idx, m);
                    values[idx(MetricKind::CumulativeVelocityChange)] =
                        Some(cumulative_velocity_change(&series));
                    values[idx(MetricKind::AccelerationPercentage)] =
                        Some(acceleration_percentage(&series));
                    values[idx(MetricKind::MaxAcceleration)] = Some(max_acceleration(&series));
                    values[idx(MetricKind::MinDeceleration)] = Some(min_deceleration(&series));
                    match velocity_change_ratio(&series) {
                        Ok(rv) => values[idx(MetricKind::VelocityChangeRatio)] = Some(rv),
                        Err(_) => metric_gaps += 1,
                    }
                }
            }
            EventRecord {
                recording_id: rec.recording_id,
                lcv_id: ev.lcv_id,
                tfv_id,
                t1: ev.t1,
                t2: ev.t2,
                t3: ev.t3,
                origin_lane: ev.origin_lane,
                target_lane: ev.target_lane,
                x_gap_at_t1: ev.x_gap_at_t1.expect("attached"),
                labels: classified.labels,
                metrics: values,
            }
        })
        .collect();

    RecordingOutcome { events, drops, raw_transitions, metric_gaps }
}

/// Builds Table 1 and the full comparison grid set from event records.
pub fn build_tables(
    events: &[EventRecord],
    thresholds: &[f64],
    windows: &[WindowSpec],
) -> (Table1, Vec<ComparisonGrid>) {
    let mut cutin_counts = Vec::with_capacity(thresholds.len());
    let mut other_counts = Vec::with_capacity(thresholds.len());
    for &theta in thresholds {
        let cutin = events
            .iter()
            .filter(|e| e.label_at(theta) == Some(Label::CutIn))
            .count();
        cutin_counts.push(cutin);
        other_counts.push(events.len() - cutin);
    }
    let table1 = Table1 {
        thresholds: thresholds.to_vec(),
        cutin: cutin_counts,
        other: other_counts,
    };

    let mut grids = Vec::new();
    for role in ROLES {
        for anchor in [Anchor::T1, Anchor::T2] {
            for metric in METRICS {
                let mut cells = Vec::new();
                for &theta in thresholds {
                    for (w_idx, w) in windows.iter().enumerate() {
                        if w.anchor != anchor {
                            continue;
                        }
                        let mut cutin = Vec::new();
                        let mut other = Vec::new();
                        for e in events {
                            let Some(value) = e.metric(windows.len(), role, w_idx, metric) else {
                                continue;
                            };
                            match e.label_at(theta) {
                                Some(Label::CutIn) => cutin.push(value),
                                Some(Label::OtherLaneChange) => other.push(value),
                                None => {}
                            }
                        }
                        let comparison = if cutin.is_empty() || other.is_empty() {
                            None
                        } else {
                            Some(compare_groups(&cutin, &other).expect("groups are non-empty"))
                        };
                        cells.push(GridCell {
                            threshold: theta,
                            window: *w,
                            cutin_n: cutin.len(),
                            other_n: other.len(),
                            comparison,
                        });
                    }
                }
                grids.push(ComparisonGrid {
                    role,
                    anchor,
                    metric,
                    reference: published_reference(role, anchor, metric),
                    cells,
                });
            }
        }
    }
    (table1, grids)
}

fn synthetic_corpus(scenarios: usize, nulls: usize, seed: u64, params: &DetectionParams) -> Vec<Recording> {
    let mut recordings: Vec<Recording> = (0..scenarios)
        .into_par_iter()
        .map(|i| {
            let (_, mut rec, _) = random_feasible_scenario(seed.wrapping_add(i as u64), params);
            rec.recording_id = (i + 1) as u64;
            rec
        })
        .collect();
    for j in 0..nulls {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e75_6c6c ^ j as u64);
        let n_vehicles = rng.random_range(2..8usize);
        let speeds: Vec<f64> = (0..n_vehicles).map(|_| rng.random_range(15.0..38.0)).collect();
        let mut rec = make_null_scenario(rng.random_range(30.0..60.0), &speeds);
        rec.recording_id = (scenarios + j + 1) as u64;
        recordings.push(rec);
    }
    recordings
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn manifest(cfg: &PipelineConfig, input_lines: &[String]) -> String {
    let p = &cfg.params;
    let mut body = String::new();
    body.push_str("lanecut run manifest\n");
    body.push_str(&format!("tool_version = {}\n", env!("CARGO_PKG_VERSION")));
    body.push_str(&format!("gap_mode = {}\n", p.gap_mode.name()));
    body.push_str(&format!("v_s = {}\n", p.v_s));
    body.push_str(&format!("tau_s = {}\n", p.tau_s));
    body.push_str(&format!("v_e = {}\n", p.v_e));
    body.push_str(&format!("tau_e = {}\n", p.tau_e));
    body.push_str(&format!("min_speed = {}\n", p.min_speed));
    body.push_str(&format!(
        "gap_thresholds = {}\n",
        p.gap_thresholds
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    body.push_str(&format!(
        "windows = {}\n",
        cfg.windows.iter().map(|w| w.label()).collect::<Vec<_>>().join(" ")
    ));
    for line in input_lines {
        body.push_str(line);
        body.push('\n');
    }
    let digest = hex_digest(body.as_bytes());
    body.push_str(&format!("manifest_sha256 = {digest}\n"));
    body
}

fn input_manifest_lines(input: &InputSource) -> Result<Vec<String>, PipelineError> {
    match input {
        InputSource::Synthetic { scenarios, nulls, seed } => Ok(vec![format!(
            "input = synthetic scenarios={scenarios} nulls={nulls} seed={seed}"
        )]),
        InputSource::Directory(dir) => {
            let mut lines = vec![format!("input = directory {}", dir.display())];
            for (tracks, meta) in discover_pairs(dir)? {
                for path in [tracks, meta] {
                    let name = path
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    match std::fs::read(&path) {
                        Ok(bytes) => {
                            lines.push(format!("input_file {name} sha256={}", hex_digest(&bytes)))
                        }
                        Err(_) => lines.push(format!("input_file {name} unreadable")),
                    }
                }
            }
            Ok(lines)
        }
    }
}

/// Runs the full pipeline: corpus in, report bundle out.
///
/// Deterministic given identical inputs and config, independent of the
/// worker count.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<ReportBundle, PipelineError> {
    cfg.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::ConfigInvalid(format!("thread pool: {e}")))?;

    let input_lines = input_manifest_lines(&cfg.input)?;
    let (recordings, ingest_report) = match &cfg.input {
        InputSource::Directory(dir) => pool.install(|| load_corpus(dir))?,
        InputSource::Synthetic { scenarios, nulls, seed } => {
            let recs =
                pool.install(|| synthetic_corpus(*scenarios, *nulls, *seed, &cfg.params));
            let report = IngestReport {
                recordings_loaded: recs.len(),
                tracks_loaded: recs.iter().map(|r| r.tracks.len()).sum(),
                ..Default::default()
            };
            (recs, report)
        }
    };

    let outcomes: Vec<RecordingOutcome> = pool.install(|| {
        recordings
            .par_iter()
            .map(|rec| process_recording(rec, &cfg.params, &cfg.windows))
            .collect()
    });

    let mut events = Vec::new();
    let mut audit = DropAudit::default();
    for outcome in outcomes {
        audit.raw_transitions += outcome.raw_transitions;
        audit.metric_gaps += outcome.metric_gaps;
        audit.drops.extend(outcome.drops);
        events.extend(outcome.events);
    }
    events.sort_by(|a, b| {
        (a.recording_id, a.lcv_id, a.t2).cmp(&(b.recording_id, b.lcv_id, b.t2))
    });
    audit
        .drops
        .sort_by(|a, b| (a.recording_id, a.vehicle_id, a.t2, a.stage).cmp(&(
            b.recording_id,
            b.vehicle_id,
            b.t2,
            b.stage,
        )));
    audit.kept = events.len();

    let (table1, grids) = build_tables(&events, &cfg.params.gap_thresholds, &cfg.windows);

    Ok(ReportBundle {
        thresholds: cfg.params.gap_thresholds.clone(),
        windows: cfg.windows.clone(),
        gap_mode: cfg.params.gap_mode,
        table1,
        grids,
        events,
        drop_audit: audit,
        ingest_report,
        run_manifest: manifest(cfg, &input_lines),
    })
}
