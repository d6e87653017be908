//! Lane-change event detection: lane-ID crossings plus the lateral-movement
//! start (T1) and completion (T3) searches around each crossing (T2).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    seconds_to_steps, DetectionParams, FrameIdx, LaneChangeEvent, LaneId, Recording, VehicleId,
    VehicleTrack,
};

/// Slack absorbing floating-point noise in the monotonicity condition.
const MONOTONICITY_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("frame {frame} outside track of vehicle {vehicle_id}")]
    FrameOutOfRange { vehicle_id: VehicleId, frame: FrameIdx },
    #[error("lane {0} is not declared in the recording")]
    UnknownLane(LaneId),
}

/// One lane-ID change: the first frame carrying the new lane id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneTransition {
    pub vehicle_id: VehicleId,
    pub t2: FrameIdx,
    pub from_lane: LaneId,
    pub to_lane: LaneId,
}

/// Why a lane transition produced no event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectDropReason {
    /// Fewer than tau_s frames between track start and the crossing.
    TooCloseToTrackStart,
    /// No room for a full tau_e window after the crossing.
    TooCloseToTrackEnd,
    T1NotFound,
    T3NotFound,
}

impl DetectDropReason {
    pub fn code(self) -> &'static str {
        match self {
            DetectDropReason::TooCloseToTrackStart => "TooCloseToTrackStart",
            DetectDropReason::TooCloseToTrackEnd => "TooCloseToTrackEnd",
            DetectDropReason::T1NotFound => "T1NotFound",
            DetectDropReason::T3NotFound => "T3NotFound",
        }
    }
}

/// Transitions that did not become events, with the first reason that fired.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionDropReport {
    pub dropped: Vec<(LaneTransition, DetectDropReason)>,
}

impl DetectionDropReport {
    pub fn count(&self, reason: DetectDropReason) -> usize {
        self.dropped.iter().filter(|(_, r)| *r == reason).count()
    }
}

/// All lane-ID changes of a track, in frame order.
pub fn find_lane_transitions(track: &VehicleTrack) -> Vec<LaneTransition> {
    track
        .states
        .windows(2)
        .filter(|w| w[0].lane_id != w[1].lane_id)
        .map(|w| LaneTransition {
            vehicle_id: track.vehicle_id,
            t2: w[1].frame,
            from_lane: w[0].lane_id,
            to_lane: w[1].lane_id,
        })
        .collect()
}

/// Lateral velocity signed toward the target lane center.
///
/// Positive means the vehicle is moving toward the target lane. When the
/// vehicle sits exactly on the target center, the sign of
/// (target center - origin center) is used so motion continuing away from the
/// origin lane stays positive.
pub fn signed_lateral_velocity(
    rec: &Recording,
    track: &VehicleTrack,
    origin_lane: LaneId,
    target_lane: LaneId,
    frame: FrameIdx,
) -> Result<f64, DetectError> {
    let target_center = rec
        .lane_center(target_lane)
        .ok_or(DetectError::UnknownLane(target_lane))?;
    let origin_center = rec
        .lane_center(origin_lane)
        .ok_or(DetectError::UnknownLane(origin_lane))?;
    let state = track
        .state_at(frame)
        .ok_or(DetectError::FrameOutOfRange {
            vehicle_id: track.vehicle_id,
            frame,
        })?;
    let offset = target_center - state.y;
    let sign = if offset != 0.0 {
        offset.signum()
    } else {
        (target_center - origin_center).signum()
    };
    Ok(state.vy_raw * sign)
}

/// Signed lateral velocities toward `to_lane` over `[first, upto]`, indexed
/// relative to the track start. Shared by the T1/T3 searches.
fn signed_velocity_series(
    rec: &Recording,
    track: &VehicleTrack,
    transition: &LaneTransition,
    upto: FrameIdx,
) -> Vec<f64> {
    let target_center = rec.lane_center(transition.to_lane).expect("declared lane");
    let origin_center = rec.lane_center(transition.from_lane).expect("declared lane");
    let tie_sign = (target_center - origin_center).signum();
    let end = upto.min(track.last_frame());
    let n = (end - track.first_frame() + 1) as usize;
    track.states[..n]
        .iter()
        .map(|s| {
            let offset = target_center - s.y;
            let sign = if offset != 0.0 { offset.signum() } else { tie_sign };
            s.vy_raw * sign
        })
        .collect()
}

/// Earliest frame before the crossing where the lateral movement starts.
///
/// Searches for the smallest t < t2 such that, with v the lateral velocity
/// signed toward the target lane: v(t) >= 0, v(t + tau_s) >= v_s, and v is
/// non-decreasing at frame resolution over [t, t + tau_s]. Returns `None`
/// when no candidate window fits inside the track or satisfies the predicate.
pub fn detect_t1(
    rec: &Recording,
    track: &VehicleTrack,
    transition: &LaneTransition,
    params: &DetectionParams,
) -> Option<FrameIdx> {
    let n_s = seconds_to_steps(params.tau_s, rec.dt).max(1);
    let first = track.first_frame();
    let v = signed_velocity_series(rec, track, transition, transition.t2 + n_s);

    'candidates: for t in first..transition.t2 {
        if t + n_s > track.last_frame() {
            break;
        }
        let base = (t - first) as usize;
        let end = base + n_s as usize;
        if v[base] < 0.0 || v[end] < params.v_s {
            continue;
        }
        for j in base..end {
            if v[j + 1] < v[j] - MONOTONICITY_SLACK {
                continue 'candidates;
            }
        }
        return Some(t);
    }
    None
}

/// Earliest frame after the crossing where the lateral movement has settled.
///
/// Searches for the smallest t > t2 such that |v| <= v_e holds on every frame
/// of [t, t + tau_e].
pub fn detect_t3(
    rec: &Recording,
    track: &VehicleTrack,
    transition: &LaneTransition,
    params: &DetectionParams,
) -> Option<FrameIdx> {
    let n_e = seconds_to_steps(params.tau_e, rec.dt).max(1);
    let first = track.first_frame();
    let last = track.last_frame();
    let v = signed_velocity_series(rec, track, transition, last);

    let mut t = transition.t2 + 1;
    while t + n_e <= last {
        let base = (t - first) as usize;
        let end = base + n_e as usize;
        // Scan backward so a violation skips the search past it.
        let mut violation = None;
        for j in (base..=end).rev() {
            if v[j].abs() > params.v_e {
                violation = Some(j);
                break;
            }
        }
        match violation {
            None => return Some(t),
            Some(j) => t = first + (j + 1) as FrameIdx,
        }
    }
    None
}

/// Detects every lane-change maneuver of a recording.
///
/// Emits one event per transition where both the T1 and T3 searches succeed;
/// transitions too close to a track edge for a full observation window, or
/// with a failed search, are dropped with a reason. Events are ordered by
/// (vehicle_id, t2); TFV fields stay unset until classification.
pub fn extract_events(
    rec: &Recording,
    params: &DetectionParams,
) -> (Vec<LaneChangeEvent>, DetectionDropReport) {
    let n_s = seconds_to_steps(params.tau_s, rec.dt).max(1);
    let n_e = seconds_to_steps(params.tau_e, rec.dt).max(1);
    let mut events = Vec::new();
    let mut report = DetectionDropReport::default();

    for track in rec.tracks.values() {
        for transition in find_lane_transitions(track) {
            if transition.t2 - track.first_frame() < n_s {
                report
                    .dropped
                    .push((transition, DetectDropReason::TooCloseToTrackStart));
                continue;
            }
            if track.last_frame() - transition.t2 < n_e + 1 {
                report
                    .dropped
                    .push((transition, DetectDropReason::TooCloseToTrackEnd));
                continue;
            }
            let Some(t1) = detect_t1(rec, track, &transition, params) else {
                report.dropped.push((transition, DetectDropReason::T1NotFound));
                continue;
            };
            let Some(t3) = detect_t3(rec, track, &transition, params) else {
                report.dropped.push((transition, DetectDropReason::T3NotFound));
                continue;
            };
            events.push(LaneChangeEvent {
                recording_id: rec.recording_id,
                lcv_id: track.vehicle_id,
                t1,
                t2: transition.t2,
                t3,
                origin_lane: transition.from_lane,
                target_lane: transition.to_lane,
                tfv_id: None,
                x_gap_at_t1: None,
            });
        }
    }
    events.sort_by_key(|e| (e.lcv_id, e.t2));
    (events, report)
}
