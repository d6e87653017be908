//! TFV attachment, event exclusion rules, X-gap measurement, and per-threshold
//! cut-in labeling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    window_to_frames, DetectionParams, FrameIdx, GapMode, LaneChangeEvent, LaneId, Recording,
    VehicleId, WindowSpec,
};

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("frame {frame} outside track of vehicle {vehicle_id}")]
    FrameOutOfRange { vehicle_id: VehicleId, frame: FrameIdx },
    #[error("vehicle {vehicle_id} missing at frame {frame}")]
    VehicleMissingAtFrame { vehicle_id: VehicleId, frame: FrameIdx },
}

/// First exclusion rule that fired for a dropped event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionCode {
    NoTfvThroughout,
    TfvChanged,
    LowSpeed,
    WindowOffTrack,
}

impl ExclusionCode {
    pub fn code(self) -> &'static str {
        match self {
            ExclusionCode::NoTfvThroughout => "NoTfvThroughout",
            ExclusionCode::TfvChanged => "TfvChanged",
            ExclusionCode::LowSpeed => "LowSpeed",
            ExclusionCode::WindowOffTrack => "WindowOffTrack",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReason {
    pub code: ExclusionCode,
    pub detail: String,
}

/// Cut-in / other label under one gap threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    CutIn,
    OtherLaneChange,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::CutIn => "cut_in",
            Label::OtherLaneChange => "other",
        }
    }
}

/// An event with its label under every configured gap threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedEvent {
    pub event: LaneChangeEvent,
    /// (threshold, label) in ascending threshold order.
    pub labels: Vec<(f64, Label)>,
}

/// Nearest vehicle strictly behind the LCV in the target lane at frame `t`.
///
/// Candidates must share the target lane's driving direction; the LCV itself
/// is never a candidate. Returns `None` when no vehicle qualifies.
pub fn target_following_vehicle(
    rec: &Recording,
    lcv_id: VehicleId,
    target_lane: LaneId,
    t: FrameIdx,
) -> Result<Option<VehicleId>, ClassifyError> {
    let lcv = rec
        .track(lcv_id)
        .and_then(|tr| tr.state_at(t))
        .ok_or(ClassifyError::FrameOutOfRange { vehicle_id: lcv_id, frame: t })?;
    let direction = rec.direction_of(target_lane);

    let mut best: Option<(f64, VehicleId)> = None;
    for track in rec.tracks.values() {
        if track.vehicle_id == lcv_id {
            continue;
        }
        let Some(state) = track.state_at(t) else { continue };
        if state.lane_id != target_lane || rec.direction_of(state.lane_id) != direction {
            continue;
        }
        if state.x >= lcv.x {
            continue;
        }
        let better = match best {
            None => true,
            Some((x, id)) => state.x > x || (state.x == x && track.vehicle_id < id),
        };
        if better {
            best = Some((state.x, track.vehicle_id));
        }
    }
    Ok(best.map(|(_, id)| id))
}

/// Longitudinal gap between LCV and TFV at frame `t`.
///
/// `NetGap` is bumper-to-bumper and clamps at zero when the boxes overlap;
/// `CenterDistance` is the raw center separation.
pub fn x_gap(
    rec: &Recording,
    lcv_id: VehicleId,
    tfv_id: VehicleId,
    t: FrameIdx,
    mode: GapMode,
) -> Result<f64, ClassifyError> {
    let state_of = |id: VehicleId| {
        rec.track(id)
            .and_then(|tr| tr.state_at(t))
            .ok_or(ClassifyError::VehicleMissingAtFrame { vehicle_id: id, frame: t })
    };
    let lcv = state_of(lcv_id)?;
    let tfv = state_of(tfv_id)?;
    let lcv_len = rec.track(lcv_id).unwrap().length;
    let tfv_len = rec.track(tfv_id).unwrap().length;
    Ok(match mode {
        GapMode::NetGap => {
            ((lcv.x - lcv_len / 2.0) - (tfv.x + tfv_len / 2.0)).max(0.0)
        }
        GapMode::CenterDistance => lcv.x - tfv.x,
    })
}

/// Applies the exclusion rules and annotates survivors with TFV and X-gap.
///
/// Rules fire in order over the lane-change process [t1, t3]:
/// 1. a TFV must exist at every frame;
/// 2. it must be the same vehicle throughout;
/// 3. LCV and TFV longitudinal speeds must exceed `min_speed` at every frame;
/// 4. every analysis window must lie within both vehicles' recorded spans.
pub fn attach_and_filter(
    events: Vec<LaneChangeEvent>,
    rec: &Recording,
    params: &DetectionParams,
    windows: &[WindowSpec],
) -> (Vec<LaneChangeEvent>, Vec<(LaneChangeEvent, ExclusionReason)>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();

    'events: for mut event in events {
        // Rule 1: some TFV must exist at every frame of the process.
        let mut per_frame = Vec::with_capacity((event.t3 - event.t1 + 1) as usize);
        for frame in event.t1..=event.t3 {
            match target_following_vehicle(rec, event.lcv_id, event.target_lane, frame)
                .expect("event frames lie inside the LCV track")
            {
                None => {
                    dropped.push((
                        event,
                        ExclusionReason {
                            code: ExclusionCode::NoTfvThroughout,
                            detail: format!("no TFV at frame {frame}"),
                        },
                    ));
                    continue 'events;
                }
                Some(id) => per_frame.push(id),
            }
        }

        // Rule 2: it must be the same vehicle throughout.
        let tfv_id = per_frame[0];
        if let Some(pos) = per_frame.iter().position(|&id| id != tfv_id) {
            let detail = format!(
                "TFV {tfv_id} replaced by {} at frame {}",
                per_frame[pos],
                event.t1 + pos as FrameIdx
            );
            dropped.push((event, ExclusionReason { code: ExclusionCode::TfvChanged, detail }));
            continue 'events;
        }

        let lcv_track = rec.track(event.lcv_id).unwrap();
        let tfv_track = rec.track(tfv_id).unwrap();
        for frame in event.t1..=event.t3 {
            let lcv_v = lcv_track.state_at(frame).unwrap().vx;
            let tfv_v = tfv_track.state_at(frame).unwrap().vx;
            if lcv_v <= params.min_speed || tfv_v <= params.min_speed {
                dropped.push((
                    event,
                    ExclusionReason {
                        code: ExclusionCode::LowSpeed,
                        detail: format!(
                            "speed at frame {frame}: LCV {lcv_v:.3} m/s, TFV {tfv_v:.3} m/s"
                        ),
                    },
                ));
                continue 'events;
            }
        }

        for w in windows {
            let anchor = match w.anchor {
                crate::model::Anchor::T1 => event.t1,
                crate::model::Anchor::T2 => event.t2,
            };
            let (start, end) = window_to_frames(w, anchor, rec.dt);
            if !lcv_track.covers(start, end) || !tfv_track.covers(start, end) {
                dropped.push((
                    event,
                    ExclusionReason {
                        code: ExclusionCode::WindowOffTrack,
                        detail: format!("window {} spans frames [{start}, {end}]", w.label()),
                    },
                ));
                continue 'events;
            }
        }

        let gap = x_gap(rec, event.lcv_id, tfv_id, event.t1, params.gap_mode)
            .expect("both vehicles verified present at t1");
        event.tfv_id = Some(tfv_id);
        event.x_gap_at_t1 = Some(gap);
        kept.push(event);
    }

    (kept, dropped)
}

/// Labels an event under each threshold: cut-in iff the X-gap at T1 is
/// strictly below the threshold.
pub fn classify(event: &LaneChangeEvent, thresholds: &[f64]) -> ClassifiedEvent {
    let gap = event
        .x_gap_at_t1
        .expect("classify requires an attached X-gap");
    let labels = thresholds
        .iter()
        .map(|&theta| {
            let label = if gap < theta { Label::CutIn } else { Label::OtherLaneChange };
            (theta, label)
        })
        .collect();
    ClassifiedEvent {
        event: event.clone(),
        labels,
    }
}
