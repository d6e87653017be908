//! Canonical in-memory model shared by every pipeline stage.
//!
//! All positions and velocities are stored in a direction-normalized frame:
//! `x` increases in the vehicle's travel direction and `vx >= 0`, regardless
//! of which carriageway the vehicle was recorded on. Lateral quantities keep
//! the dataset's sign convention; detection resolves their sign against the
//! target lane on demand.
//!
//! Everything here is immutable after construction and safe to share across
//! worker threads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Frame index within a recording (unit step, strictly increasing per track).
pub type FrameIdx = i64;
/// Vehicle identifier, unique within a recording.
pub type VehicleId = u64;
/// Lane identifier, one of the recording's declared lanes.
pub type LaneId = u32;

/// One frame-sampled kinematic state of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub frame: FrameIdx,
    /// Longitudinal center position (m), increasing in travel direction.
    pub x: f64,
    /// Lateral center position (m), dataset axis.
    pub y: f64,
    /// Longitudinal velocity (m/s), >= 0 in travel direction.
    pub vx: f64,
    /// Raw lateral velocity (m/s), dataset sign convention.
    pub vy_raw: f64,
    /// Longitudinal acceleration (m/s²), travel-direction sign.
    pub ax: f64,
    pub lane_id: LaneId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleClass {
    Car,
    Truck,
}

/// Frame-sampled kinematic time series for one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub vehicle_id: VehicleId,
    pub vehicle_class: VehicleClass,
    /// Longitudinal extent (m).
    pub length: f64,
    /// Lateral extent (m).
    pub width: f64,
    /// Non-empty, frame-contiguous.
    pub states: Vec<VehicleState>,
}

impl VehicleTrack {
    pub fn first_frame(&self) -> FrameIdx {
        self.states[0].frame
    }

    pub fn last_frame(&self) -> FrameIdx {
        self.states[self.states.len() - 1].frame
    }

    /// State at an absolute frame index. Relies on frame contiguity.
    pub fn state_at(&self, frame: FrameIdx) -> Option<&VehicleState> {
        if frame < self.first_frame() || frame > self.last_frame() {
            return None;
        }
        self.states.get((frame - self.first_frame()) as usize)
    }

    pub fn covers(&self, start: FrameIdx, end: FrameIdx) -> bool {
        self.first_frame() <= start && end <= self.last_frame()
    }
}

/// Carriageway travel direction along the raw x axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    /// Raw x increases in travel direction.
    Positive,
    /// Raw x decreases in travel direction (normalized by negating x/vx/ax).
    Negative,
}

/// A set of tracks plus frame rate and lane layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub recording_id: u64,
    /// Seconds per frame. highD records at 25 Hz, so 0.04 s.
    pub dt: f64,
    /// Lane id -> lateral center position (m).
    pub lane_centers: BTreeMap<LaneId, f64>,
    /// Lane id -> travel direction of that carriageway.
    pub lane_directions: BTreeMap<LaneId, Direction>,
    pub tracks: BTreeMap<VehicleId, VehicleTrack>,
}

impl Recording {
    pub fn lane_center(&self, lane: LaneId) -> Option<f64> {
        self.lane_centers.get(&lane).copied()
    }

    pub fn direction_of(&self, lane: LaneId) -> Option<Direction> {
        self.lane_directions.get(&lane).copied()
    }

    pub fn track(&self, vehicle: VehicleId) -> Option<&VehicleTrack> {
        self.tracks.get(&vehicle)
    }
}

/// How the longitudinal gap between LCV and TFV is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapMode {
    /// Bumper-to-bumper distance, clamped at zero.
    NetGap,
    /// Center-to-center distance.
    CenterDistance,
}

impl GapMode {
    pub fn name(self) -> &'static str {
        match self {
            GapMode::NetGap => "net_gap",
            GapMode::CenterDistance => "center_distance",
        }
    }
}

/// Thresholds controlling event detection, exclusion, and classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Lateral speed that marks the start of the lateral movement (m/s).
    pub v_s: f64,
    /// Observation duration for the start condition (s).
    pub tau_s: f64,
    /// Lateral speed bound that marks the completed movement (m/s).
    pub v_e: f64,
    /// Observation duration for the completion condition (s).
    pub tau_e: f64,
    /// Events with LCV or TFV slower than this at any point are excluded (m/s).
    pub min_speed: f64,
    /// Maximum X-gap values used to label cut-ins (m), strictly increasing.
    pub gap_thresholds: Vec<f64>,
    pub gap_mode: GapMode,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            v_s: 0.15,
            tau_s: 1.0,
            v_e: 0.1,
            tau_e: 1.0,
            min_speed: 1.0,
            gap_thresholds: vec![10.0, 15.0, 20.0, 25.0, 30.0],
            gap_mode: GapMode::NetGap,
        }
    }
}

impl DetectionParams {
    /// Checks the structural invariants of the parameter set.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.v_s > 0.0 && self.tau_s > 0.0 && self.v_e > 0.0 && self.tau_e > 0.0) {
            return Err("detection thresholds must be strictly positive".into());
        }
        if self.min_speed <= 0.0 {
            return Err("min_speed must be strictly positive".into());
        }
        if self.gap_thresholds.is_empty() {
            return Err("gap_thresholds must be non-empty".into());
        }
        if !self
            .gap_thresholds
            .windows(2)
            .all(|w| w[0] < w[1] && w[0] > 0.0)
            || self.gap_thresholds[0] <= 0.0
        {
            return Err("gap_thresholds must be strictly positive and increasing".into());
        }
        Ok(())
    }
}

/// One detected lane-change maneuver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeEvent {
    pub recording_id: u64,
    pub lcv_id: VehicleId,
    /// Lateral movement start.
    pub t1: FrameIdx,
    /// Lane-mark crossing (first frame with the new lane id).
    pub t2: FrameIdx,
    /// Lateral movement completion.
    pub t3: FrameIdx,
    pub origin_lane: LaneId,
    pub target_lane: LaneId,
    /// Set by classification once the exclusion rules pass.
    pub tfv_id: Option<VehicleId>,
    /// Longitudinal gap to the TFV at t1 (m), set with tfv_id.
    pub x_gap_at_t1: Option<f64>,
}

/// Key instant a window is anchored at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchor {
    T1,
    T2,
}

impl Anchor {
    pub fn name(self) -> &'static str {
        match self {
            Anchor::T1 => "T1",
            Anchor::T2 => "T2",
        }
    }
}

/// A time interval around an anchor instant, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub anchor: Anchor,
    pub start_offset: f64,
    pub end_offset: f64,
}

impl WindowSpec {
    pub fn new(anchor: Anchor, start_offset: f64, end_offset: f64) -> Self {
        assert!(start_offset < end_offset, "window must have positive span");
        WindowSpec {
            anchor,
            start_offset,
            end_offset,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end_offset - self.start_offset
    }

    /// Human-readable interval label, e.g. `[T1-4,T1+1]` or `[T2,T2+2]`.
    pub fn label(&self) -> String {
        format!(
            "[{}{},{}{}]",
            self.anchor.name(),
            fmt_offset(self.start_offset),
            self.anchor.name(),
            fmt_offset(self.end_offset)
        )
    }

    /// Compact identifier safe for file names and CSV headers,
    /// e.g. `t1m40p10` for [T1-4,T1+1].
    pub fn id(&self) -> String {
        format!(
            "{}{}{}",
            self.anchor.name().to_lowercase(),
            fmt_offset_id(self.start_offset),
            fmt_offset_id(self.end_offset)
        )
    }
}

fn fmt_offset(off: f64) -> String {
    if off == 0.0 {
        String::new()
    } else if off == off.trunc() {
        format!("{:+}", off as i64)
    } else {
        format!("{:+}", off)
    }
}

fn fmt_offset_id(off: f64) -> String {
    let tenths = (off * 10.0).round() as i64;
    if tenths < 0 {
        format!("m{:02}", -tenths)
    } else {
        format!("p{:02}", tenths)
    }
}

/// Converts a window to an inclusive frame range around an anchor frame.
///
/// Offsets are discretized with round-half-away-from-zero so negative and
/// positive offsets are treated symmetrically.
pub fn window_to_frames(w: &WindowSpec, anchor_frame: FrameIdx, dt: f64) -> (FrameIdx, FrameIdx) {
    debug_assert!(dt > 0.0);
    let start = anchor_frame + (w.start_offset / dt).round() as FrameIdx;
    let end = anchor_frame + (w.end_offset / dt).round() as FrameIdx;
    (start, end)
}

/// Number of frames covering `seconds` at the recording's frame step.
pub fn seconds_to_steps(seconds: f64, dt: f64) -> i64 {
    debug_assert!(dt > 0.0);
    (seconds / dt).round() as i64
}

/// The nine analysis windows: four around T1 and five around T2.
pub fn default_windows() -> Vec<WindowSpec> {
    vec![
        WindowSpec::new(Anchor::T1, -4.0, 1.0),
        WindowSpec::new(Anchor::T1, -3.0, 1.0),
        WindowSpec::new(Anchor::T1, -2.0, 1.0),
        WindowSpec::new(Anchor::T1, -1.0, 1.0),
        WindowSpec::new(Anchor::T2, -2.0, 0.0),
        WindowSpec::new(Anchor::T2, -1.5, 0.5),
        WindowSpec::new(Anchor::T2, -1.0, 1.0),
        WindowSpec::new(Anchor::T2, -0.5, 1.5),
        WindowSpec::new(Anchor::T2, 0.0, 2.0),
    ]
}

/// The five driving-characteristic values for one vehicle over one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    /// Acceleration percentage: fraction of the window with ax > 0.
    pub p_a: f64,
    /// Velocity change ratio: (v_max - v_min) / v_min.
    pub r_v: f64,
    /// Cumulative velocity change: sum of |a_j * dt| over the window's steps.
    pub dv: f64,
    pub a_max: f64,
    pub a_min: f64,
}
