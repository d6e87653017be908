//! highD-style CSV ingestion into the canonical recording model.
//!
//! The tracks file carries one bounding-box row per vehicle per frame; the
//! meta file carries the frame rate and the lane-marking lateral positions of
//! both carriageways. Positions are converted from box corner to geometric
//! center, and both driving directions are normalized so x increases in the
//! travel direction and vx >= 0.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Direction, FrameIdx, LaneId, Recording, VehicleClass, VehicleId, VehicleState, VehicleTrack,
};
use crate::synth::LaneLayout;

/// Vehicles at least this long are classified as trucks (m).
const TRUCK_LENGTH_THRESHOLD: f64 = 7.0;
/// Tolerated negative canonical longitudinal velocity (m/s) before a warning.
const VX_NOISE_TOLERANCE: f64 = 0.01;
/// Per-run cap on individually listed reject reasons and warnings; beyond
/// this only counters grow.
const MAX_LISTED_ENTRIES: usize = 1000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-contiguous frames for vehicle {0}")]
    NonContiguousFrames(VehicleId),
    #[error("unknown lane id for vehicle {vehicle_id} at frame {frame}")]
    UnknownLaneId { vehicle_id: VehicleId, frame: FrameIdx },
    #[error("vehicle {0} switches carriageway")]
    InconsistentDirection(VehicleId),
    #[error("recording contains no tracks")]
    EmptyRecording,
    #[error("cannot read directory {0}")]
    DirectoryUnreadable(PathBuf),
    #[error("meta file invalid: {0}")]
    MetaParse(String),
}

/// Header names the adapter expects; override to map other corpora.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub frame: String,
    pub id: String,
    pub x: String,
    pub y: String,
    pub width: String,
    pub height: String,
    pub x_velocity: String,
    pub y_velocity: String,
    pub x_acceleration: String,
    pub lane_id: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            frame: "frame".into(),
            id: "id".into(),
            x: "x".into(),
            y: "y".into(),
            width: "width".into(),
            height: "height".into(),
            x_velocity: "xVelocity".into(),
            y_velocity: "yVelocity".into(),
            x_acceleration: "xAcceleration".into(),
            lane_id: "laneId".into(),
        }
    }
}

/// Accounting for a load run: what was read, dropped, and why.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub recordings_loaded: usize,
    pub tracks_loaded: usize,
    pub rows_rejected: usize,
    pub reject_reasons: Vec<String>,
    pub warnings: Vec<String>,
}

impl IngestReport {
    fn merge(&mut self, other: IngestReport) {
        self.recordings_loaded += other.recordings_loaded;
        self.tracks_loaded += other.tracks_loaded;
        self.rows_rejected += other.rows_rejected;
        self.reject_reasons.extend(other.reject_reasons);
        self.warnings.extend(other.warnings);
    }

    fn push_reject(&mut self, reason: String) {
        self.rows_rejected += 1;
        if self.reject_reasons.len() < MAX_LISTED_ENTRIES {
            self.reject_reasons.push(reason);
        } else if self.reject_reasons.len() == MAX_LISTED_ENTRIES {
            self.reject_reasons.push("further rejects omitted".into());
        }
    }

    fn push_warning(&mut self, warning: String) {
        if self.warnings.len() < MAX_LISTED_ENTRIES {
            self.warnings.push(warning);
        } else if self.warnings.len() == MAX_LISTED_ENTRIES {
            self.warnings.push("further warnings omitted".into());
        }
    }
}

/// A single invariant violation found by [`validate_recording`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    NonContiguousFrames { vehicle_id: VehicleId, after_frame: FrameIdx },
    UnknownLaneId { vehicle_id: VehicleId, frame: FrameIdx, lane_id: LaneId },
    NonPositiveDimension { vehicle_id: VehicleId },
    EmptyTrack { vehicle_id: VehicleId },
    InconsistentDirection { vehicle_id: VehicleId },
    NonPositiveDt,
    EmptyRecording,
    LaneCentersTooClose { a: LaneId, b: LaneId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonContiguousFrames { vehicle_id, after_frame } => {
                write!(f, "vehicle {vehicle_id}: frame gap after {after_frame}")
            }
            Violation::UnknownLaneId { vehicle_id, frame, lane_id } => {
                write!(f, "vehicle {vehicle_id}: undeclared lane {lane_id} at frame {frame}")
            }
            Violation::NonPositiveDimension { vehicle_id } => {
                write!(f, "vehicle {vehicle_id}: non-positive length or width")
            }
            Violation::EmptyTrack { vehicle_id } => write!(f, "vehicle {vehicle_id}: empty track"),
            Violation::InconsistentDirection { vehicle_id } => {
                write!(f, "vehicle {vehicle_id}: states span both carriageways")
            }
            Violation::NonPositiveDt => write!(f, "recording dt is not positive"),
            Violation::EmptyRecording => write!(f, "recording has no tracks"),
            Violation::LaneCentersTooClose { a, b } => {
                write!(f, "lanes {a} and {b} have centers closer than 1 m")
            }
        }
    }
}

struct Meta {
    recording_id: u64,
    frame_rate: f64,
    layout: LaneLayout,
}

fn parse_markings(raw: &str) -> Result<Vec<f64>, IngestError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    let values: Result<Vec<f64>, _> = trimmed.split(';').map(|s| s.trim().parse::<f64>()).collect();
    let values = values.map_err(|e| IngestError::MetaParse(format!("bad lane marking: {e}")))?;
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(IngestError::MetaParse(
            "lane markings must be strictly increasing".into(),
        ));
    }
    Ok(values)
}

fn read_meta(path: &Path) -> Result<Meta, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?;
    let headers = reader
        .headers()
        .map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?
        .clone();
    let col = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let id_col = col("id")?;
    let rate_col = col("frameRate")?;
    let upper_col = col("upperLaneMarkings")?;
    let lower_col = col("lowerLaneMarkings")?;

    let record = reader
        .records()
        .next()
        .ok_or_else(|| IngestError::MetaParse("meta file has no data row".into()))?
        .map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?;

    let field = |idx: usize| record.get(idx).unwrap_or("");
    let recording_id = field(id_col)
        .trim()
        .parse::<u64>()
        .map_err(|e| IngestError::MetaParse(format!("bad recording id: {e}")))?;
    let frame_rate = field(rate_col)
        .trim()
        .parse::<f64>()
        .map_err(|e| IngestError::MetaParse(format!("bad frame rate: {e}")))?;
    if !frame_rate.is_finite() || frame_rate <= 0.0 {
        return Err(IngestError::MetaParse("frame rate must be positive".into()));
    }
    Ok(Meta {
        recording_id,
        frame_rate,
        layout: LaneLayout {
            upper_markings: parse_markings(field(upper_col))?,
            lower_markings: parse_markings(field(lower_col))?,
        },
    })
}

struct RawRow {
    frame: FrameIdx,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    ax: f64,
    length: f64,
    width: f64,
    lane_id: LaneId,
}

/// Parses one tracks/meta file pair into a canonical recording.
pub fn load_recording(
    tracks_file: &Path,
    meta_file: &Path,
) -> Result<(Recording, IngestReport), IngestError> {
    load_recording_with(tracks_file, meta_file, &ColumnMap::default())
}

/// [`load_recording`] with remapped column headers.
pub fn load_recording_with(
    tracks_file: &Path,
    meta_file: &Path,
    columns: &ColumnMap,
) -> Result<(Recording, IngestReport), IngestError> {
    let meta = read_meta(meta_file)?;
    let lanes = meta.layout.lanes();
    let lane_centers: BTreeMap<LaneId, f64> = lanes.iter().map(|(id, c, _)| (*id, *c)).collect();
    let lane_directions: BTreeMap<LaneId, Direction> =
        lanes.iter().map(|(id, _, d)| (*id, *d)).collect();

    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(tracks_file)
        .map_err(|source| IngestError::Csv { path: tracks_file.to_path_buf(), source })?;
    let headers = reader
        .headers()
        .map_err(|source| IngestError::Csv { path: tracks_file.to_path_buf(), source })?
        .clone();
    let col = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let c_frame = col(&columns.frame)?;
    let c_id = col(&columns.id)?;
    let c_x = col(&columns.x)?;
    let c_y = col(&columns.y)?;
    let c_width = col(&columns.width)?;
    let c_height = col(&columns.height)?;
    let c_vx = col(&columns.x_velocity)?;
    let c_vy = col(&columns.y_velocity)?;
    let c_ax = col(&columns.x_acceleration)?;
    let c_lane = col(&columns.lane_id)?;

    let mut report = IngestReport::default();
    let mut by_vehicle: BTreeMap<VehicleId, Vec<RawRow>> = BTreeMap::new();

    for (row_idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|source| IngestError::Csv { path: tracks_file.to_path_buf(), source })?;
        let line = row_idx + 2; // header is line 1
        let get = |idx: usize| record.get(idx).unwrap_or("").trim();

        let parse_f = |idx: usize| -> Option<f64> {
            let v: f64 = get(idx).parse().ok()?;
            v.is_finite().then_some(v)
        };
        let frame = get(c_frame).parse::<FrameIdx>().ok();
        let id = get(c_id).parse::<VehicleId>().ok();
        let lane = get(c_lane).parse::<LaneId>().ok();
        let fields = (
            frame,
            id,
            parse_f(c_x),
            parse_f(c_y),
            parse_f(c_width),
            parse_f(c_height),
            parse_f(c_vx),
            parse_f(c_vy),
            parse_f(c_ax),
            lane,
        );
        let (
            Some(frame),
            Some(id),
            Some(x),
            Some(y),
            Some(width),
            Some(height),
            Some(vx),
            Some(vy),
            Some(ax),
            Some(lane_id),
        ) = fields
        else {
            report.push_reject(format!(
                "{}:{line}: blank or non-numeric field",
                file_name(tracks_file)
            ));
            continue;
        };

        by_vehicle.entry(id).or_default().push(RawRow {
            frame,
            // Bounding-box corner to geometric center.
            x: x + width / 2.0,
            y: y + height / 2.0,
            vx,
            vy,
            ax,
            length: width,
            width: height,
            lane_id,
        });
    }

    if by_vehicle.is_empty() {
        return Err(IngestError::EmptyRecording);
    }

    let mut tracks = BTreeMap::new();
    for (vehicle_id, mut rows) in by_vehicle {
        rows.sort_by_key(|r| r.frame);
        if rows.windows(2).any(|w| w[1].frame != w[0].frame + 1) {
            return Err(IngestError::NonContiguousFrames(vehicle_id));
        }
        let direction = *lane_directions
            .get(&rows[0].lane_id)
            .ok_or(IngestError::UnknownLaneId { vehicle_id, frame: rows[0].frame })?;

        let mut states = Vec::with_capacity(rows.len());
        for row in &rows {
            let dir = lane_directions
                .get(&row.lane_id)
                .ok_or(IngestError::UnknownLaneId { vehicle_id, frame: row.frame })?;
            if *dir != direction {
                return Err(IngestError::InconsistentDirection(vehicle_id));
            }
            let (x, vx, ax) = match direction {
                Direction::Positive => (row.x, row.vx, row.ax),
                Direction::Negative => (-row.x, -row.vx, -row.ax),
            };
            if vx < -VX_NOISE_TOLERANCE {
                report.push_warning(format!(
                    "vehicle {vehicle_id} frame {}: canonical vx {vx:.3} m/s is negative",
                    row.frame
                ));
            }
            states.push(VehicleState {
                frame: row.frame,
                x,
                y: row.y,
                vx,
                vy_raw: row.vy,
                ax,
                lane_id: row.lane_id,
            });
        }
        let length = rows[0].length;
        let width = rows[0].width;
        tracks.insert(
            vehicle_id,
            VehicleTrack {
                vehicle_id,
                vehicle_class: if length >= TRUCK_LENGTH_THRESHOLD {
                    VehicleClass::Truck
                } else {
                    VehicleClass::Car
                },
                length,
                width,
                states,
            },
        );
    }

    report.recordings_loaded = 1;
    report.tracks_loaded = tracks.len();
    let recording = Recording {
        recording_id: meta.recording_id,
        dt: 1.0 / meta.frame_rate,
        lane_centers,
        lane_directions,
        tracks,
    };
    Ok((recording, report))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Discovers `*_tracks.csv` / `*_recordingMeta.csv` pairs under `directory`.
pub fn discover_pairs(directory: &Path) -> Result<Vec<(PathBuf, PathBuf)>, IngestError> {
    let entries = std::fs::read_dir(directory)
        .map_err(|_| IngestError::DirectoryUnreadable(directory.to_path_buf()))?;
    let mut pairs = Vec::new();
    for entry in entries.flatten() {
        let path = entry.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(prefix) = name.strip_suffix("_tracks.csv") {
            let meta = directory.join(format!("{prefix}_recordingMeta.csv"));
            pairs.push((path.clone(), meta));
        }
    }
    pairs.sort();
    Ok(pairs)
}

/// Loads every recording pair in a directory.
///
/// Per-file failures are recorded in the report instead of aborting the
/// corpus. Files load in parallel; results merge in lexicographic file order
/// so the output is deterministic.
pub fn load_corpus(directory: &Path) -> Result<(Vec<Recording>, IngestReport), IngestError> {
    let pairs = discover_pairs(directory)?;
    let mut report = IngestReport::default();
    if pairs.is_empty() {
        report.warnings.push("no recordings found".into());
        return Ok((Vec::new(), report));
    }

    type FileOutcome = (PathBuf, Result<(Recording, IngestReport), IngestError>);
    let results: Vec<FileOutcome> = pairs
        .par_iter()
        .map(|(tracks, meta)| {
            if !meta.exists() {
                return (
                    tracks.clone(),
                    Err(IngestError::MetaParse(format!("missing meta file {}", file_name(meta)))),
                );
            }
            (tracks.clone(), load_recording(tracks, meta))
        })
        .collect();

    let mut recordings = Vec::new();
    for (tracks_path, result) in results {
        match result {
            Ok((rec, file_report)) => {
                report.merge(file_report);
                recordings.push(rec);
            }
            Err(err) => {
                report
                    .warnings
                    .push(format!("{}: {err}", file_name(&tracks_path)));
            }
        }
    }
    if recordings.is_empty() && report.recordings_loaded == 0 {
        report.warnings.push("no recordings loaded".into());
    }
    Ok((recordings, report))
}

/// Checks the canonical-model invariants; an empty list means the recording
/// is valid.
pub fn validate_recording(rec: &Recording) -> Vec<Violation> {
    let mut violations = Vec::new();
    if !rec.dt.is_finite() || rec.dt <= 0.0 {
        violations.push(Violation::NonPositiveDt);
    }
    if rec.tracks.is_empty() {
        violations.push(Violation::EmptyRecording);
    }

    // Adjacent lane centers within one carriageway must be separated.
    let mut by_direction: BTreeMap<Direction, Vec<(LaneId, f64)>> = BTreeMap::new();
    for (lane, center) in &rec.lane_centers {
        if let Some(dir) = rec.direction_of(*lane) {
            by_direction.entry(dir).or_default().push((*lane, *center));
        }
    }
    for lanes in by_direction.values() {
        let mut sorted = lanes.clone();
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
        for w in sorted.windows(2) {
            if (w[1].1 - w[0].1).abs() <= 1.0 {
                violations.push(Violation::LaneCentersTooClose { a: w[0].0, b: w[1].0 });
            }
        }
    }

    for track in rec.tracks.values() {
        if track.states.is_empty() {
            violations.push(Violation::EmptyTrack { vehicle_id: track.vehicle_id });
            continue;
        }
        if !(track.length > 0.0 && track.width > 0.0) {
            violations.push(Violation::NonPositiveDimension { vehicle_id: track.vehicle_id });
        }
        for w in track.states.windows(2) {
            if w[1].frame != w[0].frame + 1 {
                violations.push(Violation::NonContiguousFrames {
                    vehicle_id: track.vehicle_id,
                    after_frame: w[0].frame,
                });
                break;
            }
        }
        let mut track_dir = None;
        for s in &track.states {
            match rec.direction_of(s.lane_id) {
                None => {
                    violations.push(Violation::UnknownLaneId {
                        vehicle_id: track.vehicle_id,
                        frame: s.frame,
                        lane_id: s.lane_id,
                    });
                    break;
                }
                Some(dir) => match track_dir {
                    None => track_dir = Some(dir),
                    Some(d) if d != dir => {
                        violations.push(Violation::InconsistentDirection {
                            vehicle_id: track.vehicle_id,
                        });
                        break;
                    }
                    Some(_) => {}
                },
            }
        }
    }
    violations
}
