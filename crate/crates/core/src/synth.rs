//! Synthetic recordings with analytically known ground truth.
//!
//! Scenarios use piecewise-linear lateral velocity profiles, so the key
//! instants satisfy the detection predicates in closed form. The ground
//! truth is evaluated directly on the analytic profile — never on the
//! emitted track via the detector — which keeps it an independent oracle.
//! Accelerations are emitted as exact finite differences of the emitted
//! velocities, giving the cumulative-velocity-change metric a closed form.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::Label;
use crate::model::{
    seconds_to_steps, DetectionParams, Direction, FrameIdx, GapMode, LaneId, Recording,
    VehicleClass, VehicleId, VehicleState, VehicleTrack,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible scenario: {0}")]
    InfeasibleSpec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn infeasible(msg: impl Into<String>) -> SynthError {
    SynthError::InfeasibleSpec(msg.into())
}

/// Lane-marking geometry of both carriageways, in the dataset's y axis.
///
/// Lane ids follow the highD convention: upper lanes are numbered from 2,
/// lower lanes continue after a gap of one id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneLayout {
    pub upper_markings: Vec<f64>,
    pub lower_markings: Vec<f64>,
}

impl LaneLayout {
    /// Two lanes per carriageway, 4 m wide.
    pub fn standard() -> Self {
        LaneLayout {
            upper_markings: vec![8.5, 12.5, 16.5],
            lower_markings: vec![21.0, 25.0, 29.0],
        }
    }

    fn carriageway_lanes(markings: &[f64], first_id: LaneId) -> Vec<(LaneId, f64)> {
        if markings.len() < 2 {
            return Vec::new();
        }
        markings
            .windows(2)
            .enumerate()
            .map(|(i, m)| (first_id + i as LaneId, (m[0] + m[1]) / 2.0))
            .collect()
    }

    /// Upper lanes start at id 2; lower lanes continue after skipping one id.
    pub fn lanes(&self) -> Vec<(LaneId, f64, Direction)> {
        let n_upper = self.upper_markings.len().saturating_sub(1) as LaneId;
        let mut out: Vec<(LaneId, f64, Direction)> =
            Self::carriageway_lanes(&self.upper_markings, 2)
                .into_iter()
                .map(|(id, c)| (id, c, Direction::Negative))
                .collect();
        out.extend(
            Self::carriageway_lanes(&self.lower_markings, n_upper + 3)
                .into_iter()
                .map(|(id, c)| (id, c, Direction::Positive)),
        );
        out
    }

    /// Lane containing lateral position `y`; boundaries belong to the lane
    /// they open (markings[i] <= y < markings[i+1]).
    pub fn lane_of(&self, y: f64) -> Option<LaneId> {
        let n_upper = self.upper_markings.len().saturating_sub(1) as LaneId;
        let find = |markings: &[f64], first_id: LaneId| -> Option<LaneId> {
            if markings.len() < 2 {
                return None;
            }
            let last = markings.len() - 1;
            if y < markings[0] || y > markings[last] {
                return None;
            }
            if y == markings[last] {
                return Some(first_id + (last - 1) as LaneId);
            }
            let idx = markings.partition_point(|&m| m <= y) - 1;
            Some(first_id + idx as LaneId)
        };
        find(&self.upper_markings, 2).or_else(|| find(&self.lower_markings, n_upper + 3))
    }
}

/// Piecewise-linear velocity over time with closed-form integration.
#[derive(Debug, Clone)]
pub struct VelocityProfile {
    /// (time, velocity) breakpoints, strictly increasing in time.
    breaks: Vec<(f64, f64)>,
    /// Cumulative displacement at each breakpoint.
    cum: Vec<f64>,
}

impl VelocityProfile {
    pub fn new(breaks: Vec<(f64, f64)>) -> Self {
        assert!(breaks.len() >= 2);
        assert!(breaks.windows(2).all(|w| w[0].0 < w[1].0));
        let mut cum = Vec::with_capacity(breaks.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in breaks.windows(2) {
            acc += (w[0].1 + w[1].1) / 2.0 * (w[1].0 - w[0].0);
            cum.push(acc);
        }
        VelocityProfile { breaks, cum }
    }

    pub fn end_time(&self) -> f64 {
        self.breaks[self.breaks.len() - 1].0
    }

    pub fn velocity_at(&self, t: f64) -> f64 {
        let idx = self.breaks.partition_point(|&(bt, _)| bt <= t);
        if idx == 0 {
            return self.breaks[0].1;
        }
        if idx == self.breaks.len() {
            return self.breaks[idx - 1].1;
        }
        let (t0, v0) = self.breaks[idx - 1];
        let (t1, v1) = self.breaks[idx];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn displacement_at(&self, t: f64) -> f64 {
        let idx = self.breaks.partition_point(|&(bt, _)| bt <= t);
        if idx == 0 {
            return 0.0;
        }
        if idx == self.breaks.len() {
            let (t_last, v_last) = self.breaks[idx - 1];
            return self.cum[idx - 1] + v_last * (t - t_last);
        }
        let (t0, v0) = self.breaks[idx - 1];
        let v_t = self.velocity_at(t);
        self.cum[idx - 1] + (v0 + v_t) / 2.0 * (t - t0)
    }
}

/// Lateral velocity shape of a single maneuver leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Triangular profile: rise and fall at the given slope (m/s²).
    Ramp { slope: f64 },
    /// Trapezoidal profile: linear rise, hold at `v_lat`, linear fall; the
    /// hold duration is solved from the lane displacement.
    Plateau { v_lat: f64, rise: f64, fall: f64 },
}

/// Lateral trajectory of the scenario's lane-change vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LateralProfile {
    /// Single maneuver starting at `start` seconds.
    Single { start: f64, shape: Shape },
    /// Double weave: out to the target lane, pause, then back.
    Composite {
        start: f64,
        out: Shape,
        /// Lateral standstill between the legs (s); must exceed tau_e so the
        /// first leg completes before the second begins.
        pause: f64,
        back: Shape,
    },
}

/// Optional linear change of the LCV's longitudinal speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedRamp {
    pub t_begin: f64,
    pub t_end: f64,
    pub delta: f64,
}

/// Full description of one synthetic lane-change scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub recording_id: u64,
    pub lcv_speed: f64,
    pub lcv_speed_ramp: Option<SpeedRamp>,
    pub tfv_speed: f64,
    /// X-gap between LCV and TFV at the ground-truth T1, in the configured
    /// gap mode's sense for net gaps (bumper to bumper).
    pub initial_gap: f64,
    pub profile: LateralProfile,
    pub layout: LaneLayout,
    pub origin_lane: LaneId,
    pub target_lane: LaneId,
    pub duration: f64,
    pub seed: u64,
}

/// Analytically derived truth for one maneuver leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManeuverTruth {
    pub t1: FrameIdx,
    pub t2: FrameIdx,
    pub t3: FrameIdx,
    pub origin_lane: LaneId,
    pub target_lane: LaneId,
}

/// Ground truth for a generated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// One entry per leg, in time order. Single-maneuver scenarios have one.
    pub maneuvers: Vec<ManeuverTruth>,
    pub lcv_id: VehicleId,
    /// The follower placed in the first leg's target lane.
    pub tfv_id: Option<VehicleId>,
    /// X-gap at the first leg's T1, in the scenario's gap mode.
    pub x_gap_at_t1: Option<f64>,
    pub expected_classification: Vec<(f64, Label)>,
}

impl GroundTruth {
    pub fn primary(&self) -> &ManeuverTruth {
        &self.maneuvers[0]
    }
}

const DT: f64 = 1.0 / 25.0;
const LCV_ID: VehicleId = 1;
const TFV_ID: VehicleId = 2;
const LCV_LENGTH: f64 = 4.5;
const TFV_LENGTH: f64 = 5.0;
const VEHICLE_WIDTH: f64 = 2.0;
/// Frames of margin required ahead of T1 and behind T2 so the default
/// analysis windows ([T1-4s, ...] up to [..., T2+2s]) stay on both tracks.
const WINDOW_LEAD_S: f64 = 4.0;
const WINDOW_TAIL_S: f64 = 2.0;

struct Leg {
    origin: LaneId,
    target: LaneId,
}

fn shape_breaks(
    shape: &Shape,
    start: f64,
    displacement: f64,
) -> Result<(Vec<(f64, f64)>, f64), SynthError> {
    let magnitude = displacement.abs();
    let sign = displacement.signum();
    match *shape {
        Shape::Ramp { slope } => {
            if slope <= 0.0 {
                return Err(infeasible("ramp slope must be positive to cross the boundary"));
            }
            let v_peak = (magnitude * slope).sqrt();
            let tau = v_peak / slope;
            let end = start + 2.0 * tau;
            Ok((
                vec![(start, 0.0), (start + tau, sign * v_peak), (end, 0.0)],
                end,
            ))
        }
        Shape::Plateau { v_lat, rise, fall } => {
            if v_lat <= 0.0 {
                return Err(infeasible("plateau velocity must be positive to cross the boundary"));
            }
            if rise <= 0.0 || fall <= 0.0 {
                return Err(infeasible("plateau rise/fall must be positive"));
            }
            let hold = magnitude / v_lat - (rise + fall) / 2.0;
            if hold <= 0.05 {
                return Err(infeasible(format!(
                    "plateau hold of {hold:.3} s leaves no sustained lateral movement"
                )));
            }
            let end = start + rise + hold + fall;
            Ok((
                vec![
                    (start, 0.0),
                    (start + rise, sign * v_lat),
                    (start + rise + hold, sign * v_lat),
                    (end, 0.0),
                ],
                end,
            ))
        }
    }
}

fn peak_velocity(shape: &Shape, displacement: f64) -> f64 {
    match *shape {
        Shape::Ramp { slope } => (displacement.abs() * slope.max(0.0)).sqrt(),
        Shape::Plateau { v_lat, .. } => v_lat,
    }
}

/// Lateral velocity signed toward `target_center`, mirroring the detection
/// semantics on analytic values.
fn toward_velocity(vy: f64, y: f64, target_center: f64, origin_center: f64) -> f64 {
    let offset = target_center - y;
    let sign = if offset != 0.0 {
        offset.signum()
    } else {
        (target_center - origin_center).signum()
    };
    vy * sign
}

struct ScenarioKinematics {
    lateral: VelocityProfile,
    lcv_speed: VelocityProfile,
    legs: Vec<Leg>,
    y0: f64,
    n_frames: usize,
}

fn build_kinematics(spec: &ScenarioSpec) -> Result<ScenarioKinematics, SynthError> {
    let lanes = spec.layout.lanes();
    let center_of = |id: LaneId| -> Result<f64, SynthError> {
        lanes
            .iter()
            .find(|(l, _, _)| *l == id)
            .map(|(_, c, _)| *c)
            .ok_or_else(|| infeasible(format!("lane {id} is not part of the layout")))
    };
    let origin_center = center_of(spec.origin_lane)?;
    let target_center = center_of(spec.target_lane)?;
    if spec.origin_lane == spec.target_lane {
        return Err(infeasible("origin and target lanes must differ"));
    }
    let dir_of = |id: LaneId| lanes.iter().find(|(l, _, _)| *l == id).map(|(_, _, d)| *d);
    if dir_of(spec.origin_lane) != dir_of(spec.target_lane) {
        return Err(infeasible("origin and target lanes lie on different carriageways"));
    }
    let displacement = target_center - origin_center;

    let (mut breaks, legs, profile_end) = match &spec.profile {
        LateralProfile::Single { start, shape } => {
            if *start <= 0.0 {
                return Err(infeasible("maneuver must start after the track begins"));
            }
            let (b, end) = shape_breaks(shape, *start, displacement)?;
            (
                b,
                vec![Leg { origin: spec.origin_lane, target: spec.target_lane }],
                end,
            )
        }
        LateralProfile::Composite { start, out, pause, back } => {
            if *start <= 0.0 {
                return Err(infeasible("maneuver must start after the track begins"));
            }
            let (mut b, out_end) = shape_breaks(out, *start, displacement)?;
            let back_start = out_end + pause;
            let (b2, back_end) = shape_breaks(back, back_start, -displacement)?;
            b.extend(b2.into_iter().skip_while(|&(t, _)| t <= out_end));
            (
                b,
                vec![
                    Leg { origin: spec.origin_lane, target: spec.target_lane },
                    Leg { origin: spec.target_lane, target: spec.origin_lane },
                ],
                back_end,
            )
        }
    };

    if profile_end + 0.2 >= spec.duration {
        return Err(infeasible("duration too short for the lateral profile to settle"));
    }
    breaks.insert(0, (0.0, 0.0));
    breaks.push((spec.duration, 0.0));

    let lcv_speed = match spec.lcv_speed_ramp {
        None => VelocityProfile::new(vec![(0.0, spec.lcv_speed), (spec.duration, spec.lcv_speed)]),
        Some(ramp) => {
            if !(0.0 < ramp.t_begin && ramp.t_begin < ramp.t_end && ramp.t_end < spec.duration) {
                return Err(infeasible("speed ramp must lie strictly inside the recording"));
            }
            VelocityProfile::new(vec![
                (0.0, spec.lcv_speed),
                (ramp.t_begin, spec.lcv_speed),
                (ramp.t_end, spec.lcv_speed + ramp.delta),
                (spec.duration, spec.lcv_speed + ramp.delta),
            ])
        }
    };

    let n_frames = (spec.duration / DT).floor() as usize + 1;
    Ok(ScenarioKinematics {
        lateral: VelocityProfile::new(breaks),
        lcv_speed,
        legs,
        y0: origin_center,
        n_frames,
    })
}

/// Evaluates the detection predicates on the analytic lateral profile.
fn scan_ground_truth(
    kin: &ScenarioKinematics,
    spec: &ScenarioSpec,
    params: &DetectionParams,
) -> Result<Vec<ManeuverTruth>, SynthError> {
    let n_frames = kin.n_frames;
    let n_s = seconds_to_steps(params.tau_s, DT).max(1);
    let n_e = seconds_to_steps(params.tau_e, DT).max(1);
    let centers: BTreeMap<LaneId, f64> = spec
        .layout
        .lanes()
        .into_iter()
        .map(|(id, c, _)| (id, c))
        .collect();

    let y_at = |k: usize| kin.y0 + kin.lateral.displacement_at(k as f64 * DT);
    let vy_at = |k: usize| kin.lateral.velocity_at(k as f64 * DT);
    let lane_at = |k: usize| -> Result<LaneId, SynthError> {
        spec.layout
            .lane_of(y_at(k))
            .ok_or_else(|| infeasible(format!("lateral position leaves the roadway at frame {k}")))
    };

    // Lane-ID transitions of the analytic trajectory.
    let mut crossings: Vec<(usize, LaneId, LaneId)> = Vec::new();
    let mut prev = lane_at(0)?;
    for k in 1..n_frames {
        let cur = lane_at(k)?;
        if cur != prev {
            crossings.push((k, prev, cur));
        }
        prev = cur;
    }
    if crossings.len() != kin.legs.len() {
        return Err(infeasible(format!(
            "expected {} boundary crossings, trajectory produces {}",
            kin.legs.len(),
            crossings.len()
        )));
    }

    let last_frame = (n_frames - 1) as FrameIdx;
    let mut truths = Vec::new();
    for (leg, &(k2, from, to)) in kin.legs.iter().zip(&crossings) {
        if from != leg.origin || to != leg.target {
            return Err(infeasible("crossing sequence does not match the planned legs"));
        }
        let k2 = k2 as FrameIdx;
        if k2 < n_s || last_frame - k2 < n_e + 1 {
            return Err(infeasible("crossing too close to a track edge for the searches"));
        }
        let target_center = centers[&leg.target];
        let origin_center = centers[&leg.origin];
        let v_toward =
            |k: FrameIdx| toward_velocity(vy_at(k as usize), y_at(k as usize), target_center, origin_center);

        // Lateral-movement start: earliest frame whose observation window is
        // non-negative at the start, monotone, and fast enough at the end.
        let mut t1 = None;
        'starts: for t in 0..k2 {
            if t + n_s > last_frame {
                break;
            }
            if v_toward(t) < 0.0 || v_toward(t + n_s) < params.v_s {
                continue;
            }
            for j in t..t + n_s {
                if v_toward(j + 1) < v_toward(j) - 1e-9 {
                    continue 'starts;
                }
            }
            t1 = Some(t);
            break;
        }
        let t1 = t1.ok_or_else(|| infeasible("lateral onset predicate never satisfied"))?;

        // Lateral-movement completion: earliest settled window after k2.
        let mut t3 = None;
        't3s: for t in k2 + 1..=last_frame - n_e {
            for j in t..=t + n_e {
                if v_toward(j).abs() > params.v_e {
                    continue 't3s;
                }
            }
            t3 = Some(t);
            break;
        }
        let t3 = t3.ok_or_else(|| infeasible("lateral settle predicate never satisfied"))?;

        truths.push(ManeuverTruth {
            t1,
            t2: k2,
            t3,
            origin_lane: leg.origin,
            target_lane: leg.target,
        });
    }
    Ok(truths)
}

fn emit_states(
    lane_ids: &[LaneId],
    xs: &[f64],
    ys: &[f64],
    vxs: &[f64],
    vys: &[f64],
) -> Vec<VehicleState> {
    let n = lane_ids.len();
    (0..n)
        .map(|k| VehicleState {
            frame: k as FrameIdx,
            x: xs[k],
            y: ys[k],
            vx: vxs[k],
            vy_raw: vys[k],
            // Exact finite difference of the emitted velocities.
            ax: if k + 1 < n { (vxs[k + 1] - vxs[k]) / DT } else { 0.0 },
            lane_id: lane_ids[k],
        })
        .collect()
}

fn recording_shell(spec_layout: &LaneLayout, recording_id: u64) -> Recording {
    let mut lane_centers = BTreeMap::new();
    let mut lane_directions = BTreeMap::new();
    for (id, center, dir) in spec_layout.lanes() {
        lane_centers.insert(id, center);
        lane_directions.insert(id, dir);
    }
    Recording {
        recording_id,
        dt: DT,
        lane_centers,
        lane_directions,
        tracks: BTreeMap::new(),
    }
}

/// Builds a scenario recording and its analytic ground truth.
///
/// The LCV changes from the origin to the target lane (and back, for
/// composite profiles); a TFV is placed in the target lane so the X-gap at
/// the ground-truth T1 equals `initial_gap`.
pub fn make_lane_change_scenario(
    spec: &ScenarioSpec,
    params: &DetectionParams,
) -> Result<(Recording, GroundTruth), SynthError> {
    let displacement_peak = {
        let lanes = spec.layout.lanes();
        let c = |id: LaneId| lanes.iter().find(|(l, _, _)| *l == id).map(|(_, c, _)| *c);
        match (c(spec.origin_lane), c(spec.target_lane)) {
            (Some(o), Some(t)) => (t - o).abs(),
            _ => 0.0,
        }
    };
    let shapes: Vec<&Shape> = match &spec.profile {
        LateralProfile::Single { shape, .. } => vec![shape],
        LateralProfile::Composite { out, back, .. } => vec![out, back],
    };
    for shape in shapes {
        if peak_velocity(shape, displacement_peak) < params.v_s + 1e-6 {
            return Err(infeasible(
                "peak lateral velocity never reaches the onset threshold",
            ));
        }
    }
    if let LateralProfile::Composite { pause, .. } = spec.profile {
        if pause < params.tau_e + 0.3 {
            return Err(infeasible("composite pause shorter than the settle window"));
        }
    }
    if spec.lcv_speed <= params.min_speed + 1.0 || spec.tfv_speed <= params.min_speed + 1.0 {
        return Err(infeasible("scenario speeds must comfortably exceed the exclusion rule"));
    }
    if spec.initial_gap <= 0.1 {
        return Err(infeasible("initial gap must be positive"));
    }

    let kin = build_kinematics(spec)?;
    let truths = scan_ground_truth(&kin, spec, params)?;
    let primary = truths[0];

    // The default analysis windows must fit on the track.
    let lead = seconds_to_steps(WINDOW_LEAD_S, DT);
    let tail = seconds_to_steps(WINDOW_TAIL_S, DT);
    let last_frame = (kin.n_frames - 1) as FrameIdx;
    for m in &truths {
        if m.t1 < lead {
            return Err(infeasible("maneuver starts too early for the T1 analysis windows"));
        }
        if m.t2 + tail > last_frame || m.t3 + tail > last_frame {
            return Err(infeasible("maneuver ends too late for the T2 analysis windows"));
        }
    }

    // LCV kinematics on the frame grid.
    let times: Vec<f64> = (0..kin.n_frames).map(|k| k as f64 * DT).collect();
    let x0_lcv = 200.0;
    let lcv_x: Vec<f64> = times
        .iter()
        .map(|&t| x0_lcv + kin.lcv_speed.displacement_at(t))
        .collect();
    let lcv_y: Vec<f64> = times
        .iter()
        .map(|&t| kin.y0 + kin.lateral.displacement_at(t))
        .collect();
    let lcv_vx: Vec<f64> = times.iter().map(|&t| kin.lcv_speed.velocity_at(t)).collect();
    let lcv_vy: Vec<f64> = times.iter().map(|&t| kin.lateral.velocity_at(t)).collect();
    let lcv_lanes: Vec<LaneId> = lcv_y
        .iter()
        .map(|&y| spec.layout.lane_of(y).expect("validated in scan"))
        .collect();

    // TFV placed so the gap at the ground-truth T1 equals initial_gap.
    let t1_time = primary.t1 as f64 * DT;
    let lcv_x_at_t1 = x0_lcv + kin.lcv_speed.displacement_at(t1_time);
    let gap_extent = LCV_LENGTH / 2.0 + TFV_LENGTH / 2.0;
    let x0_tfv = lcv_x_at_t1 - spec.initial_gap - gap_extent - spec.tfv_speed * t1_time;
    let target_center = spec
        .layout
        .lanes()
        .iter()
        .find(|(l, _, _)| *l == spec.target_lane)
        .map(|(_, c, _)| *c)
        .unwrap();
    let tfv_x: Vec<f64> = times.iter().map(|&t| x0_tfv + spec.tfv_speed * t).collect();

    // The TFV must stay strictly behind through the maneuver, and must not
    // run into the LCV once both share the target lane.
    let min_clearance = gap_extent + 0.1;
    for f in primary.t1 as usize..kin.n_frames {
        if lcv_x[f] - tfv_x[f] < min_clearance {
            return Err(infeasible("TFV closes onto the LCV after the lane change"));
        }
    }

    let mut rec = recording_shell(&spec.layout, spec.recording_id);
    rec.tracks.insert(
        LCV_ID,
        VehicleTrack {
            vehicle_id: LCV_ID,
            vehicle_class: VehicleClass::Car,
            length: LCV_LENGTH,
            width: VEHICLE_WIDTH,
            states: emit_states(&lcv_lanes, &lcv_x, &lcv_y, &lcv_vx, &lcv_vy),
        },
    );
    let tfv_lanes = vec![spec.target_lane; kin.n_frames];
    let tfv_y = vec![target_center; kin.n_frames];
    let tfv_vx = vec![spec.tfv_speed; kin.n_frames];
    let tfv_vy = vec![0.0; kin.n_frames];
    rec.tracks.insert(
        TFV_ID,
        VehicleTrack {
            vehicle_id: TFV_ID,
            vehicle_class: VehicleClass::Car,
            length: TFV_LENGTH,
            width: VEHICLE_WIDTH,
            states: emit_states(&tfv_lanes, &tfv_x, &tfv_y, &tfv_vx, &tfv_vy),
        },
    );

    let gap = match params.gap_mode {
        GapMode::NetGap => spec.initial_gap,
        GapMode::CenterDistance => spec.initial_gap + gap_extent,
    };
    let expected_classification = params
        .gap_thresholds
        .iter()
        .map(|&theta| {
            let label = if gap < theta { Label::CutIn } else { Label::OtherLaneChange };
            (theta, label)
        })
        .collect();

    let truth = GroundTruth {
        maneuvers: truths,
        lcv_id: LCV_ID,
        tfv_id: Some(TFV_ID),
        x_gap_at_t1: Some(gap),
        expected_classification,
    };
    Ok((rec, truth))
}

/// Lane-keeping traffic: every vehicle holds its lane, so detection must
/// produce zero events.
pub fn make_null_scenario(duration: f64, speeds: &[f64]) -> Recording {
    assert!(duration > 0.0);
    let layout = LaneLayout::standard();
    let mut rec = recording_shell(&layout, 0);
    let lanes = layout.lanes();
    let n_frames = (duration / DT).floor() as usize + 1;

    for (i, &speed) in speeds.iter().enumerate() {
        let (lane, center, _) = lanes[i % lanes.len()];
        let id = (i + 1) as VehicleId;
        // Gentle in-lane wobble; never approaches the lane boundary.
        let amplitude = 0.3;
        let omega = 2.0 * std::f64::consts::PI * 0.08;
        let phase = i as f64 * 1.3;
        let mut lane_ids = Vec::with_capacity(n_frames);
        let mut xs = Vec::with_capacity(n_frames);
        let mut ys = Vec::with_capacity(n_frames);
        let mut vxs = Vec::with_capacity(n_frames);
        let mut vys = Vec::with_capacity(n_frames);
        for k in 0..n_frames {
            let t = k as f64 * DT;
            lane_ids.push(lane);
            xs.push(50.0 + 60.0 * (i / lanes.len()) as f64 + speed * t);
            ys.push(center + amplitude * (omega * t + phase).sin());
            vxs.push(speed);
            vys.push(amplitude * omega * (omega * t + phase).cos());
        }
        rec.tracks.insert(
            id,
            VehicleTrack {
                vehicle_id: id,
                vehicle_class: if i % 5 == 4 { VehicleClass::Truck } else { VehicleClass::Car },
                length: if i % 5 == 4 { 12.0 } else { 4.5 },
                width: VEHICLE_WIDTH,
                states: emit_states(&lane_ids, &xs, &ys, &vxs, &vys),
            },
        );
    }
    rec
}

/// Reconstructs lane markings from lane centers of one carriageway.
fn markings_from_centers(centers: &[f64]) -> Vec<f64> {
    match centers.len() {
        0 => Vec::new(),
        1 => vec![centers[0] - 2.0, centers[0] + 2.0],
        _ => {
            let mut m = Vec::with_capacity(centers.len() + 1);
            m.push((3.0 * centers[0] - centers[1]) / 2.0);
            for w in centers.windows(2) {
                m.push((w[0] + w[1]) / 2.0);
            }
            let n = centers.len();
            m.push((3.0 * centers[n - 1] - centers[n - 2]) / 2.0);
            m
        }
    }
}

fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Writes a recording in the CSV layout the ingest adapter consumes.
///
/// Returns the (tracks, meta) file paths. Values round-trip through
/// `load_recording` to well within 1e-6 on every numeric field.
pub fn write_highd_files(rec: &Recording, out_dir: &Path) -> Result<(PathBuf, PathBuf), SynthError> {
    fs::create_dir_all(out_dir)?;
    let tracks_path = out_dir.join(format!("{:02}_tracks.csv", rec.recording_id));
    let meta_path = out_dir.join(format!("{:02}_recordingMeta.csv", rec.recording_id));

    let mut upper_centers: Vec<f64> = Vec::new();
    let mut lower_centers: Vec<f64> = Vec::new();
    for (lane, center) in &rec.lane_centers {
        match rec.lane_directions[lane] {
            Direction::Negative => upper_centers.push(*center),
            Direction::Positive => lower_centers.push(*center),
        }
    }
    upper_centers.sort_by(f64::total_cmp);
    lower_centers.sort_by(f64::total_cmp);

    let join = |m: Vec<f64>| {
        m.into_iter()
            .map(fmt_f64)
            .collect::<Vec<_>>()
            .join(";")
    };
    let frame_rate = 1.0 / rec.dt;
    let mut meta = String::new();
    meta.push_str("id,frameRate,upperLaneMarkings,lowerLaneMarkings\n");
    meta.push_str(&format!(
        "{},{},\"{}\",\"{}\"\n",
        rec.recording_id,
        fmt_f64(if (frame_rate - frame_rate.round()).abs() < 1e-9 {
            frame_rate.round()
        } else {
            frame_rate
        }),
        join(markings_from_centers(&upper_centers)),
        join(markings_from_centers(&lower_centers)),
    ));
    fs::write(&meta_path, meta)?;

    let mut out = fs::File::create(&tracks_path)?;
    writeln!(
        out,
        "frame,id,x,y,width,height,xVelocity,yVelocity,xAcceleration,yAcceleration,laneId"
    )?;
    for track in rec.tracks.values() {
        for s in &track.states {
            let dir = rec.lane_directions[&s.lane_id];
            let (x_center_raw, vx_raw, ax_raw) = match dir {
                Direction::Positive => (s.x, s.vx, s.ax),
                Direction::Negative => (-s.x, -s.vx, -s.ax),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},0,{}",
                s.frame,
                track.vehicle_id,
                x_center_raw - track.length / 2.0,
                s.y - track.width / 2.0,
                track.length,
                track.width,
                vx_raw,
                s.vy_raw,
                ax_raw,
                s.lane_id,
            )?;
        }
    }
    Ok((tracks_path, meta_path))
}

/// Deterministic random scenario covering ramp, plateau, and composite
/// profiles with feasible parameter ranges.
pub fn random_scenario_spec(seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = LaneLayout::standard();
    let (origin_lane, target_lane) = if rng.random_bool(0.5) { (5, 6) } else { (6, 5) };

    let start = rng.random_range(5.3..8.0);
    let sample_shape = |rng: &mut ChaCha8Rng| -> Shape {
        if rng.random_bool(0.5) {
            Shape::Ramp { slope: rng.random_range(0.12..0.45) }
        } else {
            Shape::Plateau {
                v_lat: rng.random_range(0.35..1.1),
                rise: rng.random_range(0.4..1.2),
                fall: rng.random_range(0.4..1.2),
            }
        }
    };
    let span_of = |shape: &Shape| -> f64 {
        match *shape {
            Shape::Ramp { slope } => 2.0 * (4.0 / slope).sqrt(),
            Shape::Plateau { v_lat, rise, fall } => 4.0 / v_lat + (rise + fall) / 2.0,
        }
    };

    let kind = rng.random_range(0..3u8);
    let (profile, span) = match kind {
        0 | 1 => {
            let shape = sample_shape(&mut rng);
            let span = span_of(&shape);
            (LateralProfile::Single { start, shape }, span)
        }
        _ => {
            let out = sample_shape(&mut rng);
            let back = sample_shape(&mut rng);
            let pause = rng.random_range(2.6..4.0);
            let span = span_of(&out) + pause + span_of(&back);
            (LateralProfile::Composite { start, out, pause, back }, span)
        }
    };
    let duration = start + span + 3.6;

    let lcv_speed = rng.random_range(22.0..38.0);
    let lcv_speed_ramp = if rng.random_bool(0.4) {
        let t_begin = rng.random_range(0.5..2.5);
        Some(SpeedRamp {
            t_begin,
            t_end: t_begin + rng.random_range(3.0..6.0),
            delta: rng.random_range(-3.0..3.0),
        })
    } else {
        None
    };
    let initial_gap = rng.random_range(3.0f64..45.0);

    // Keep the TFV from closing the planted gap before the recording ends:
    // bound its speed surplus by the gap budget over the post-onset horizon.
    let lcv_drop = lcv_speed_ramp.map(|r| (-r.delta).max(0.0)).unwrap_or(0.0);
    let surplus_cap = ((initial_gap - 1.0) / (duration - 4.0) - lcv_drop).min(2.0);
    let tfv_delta = rng.random_range((surplus_cap - 2.5)..surplus_cap);
    let tfv_speed = (lcv_speed + tfv_delta).max(5.0);

    ScenarioSpec {
        recording_id: seed,
        lcv_speed,
        lcv_speed_ramp,
        tfv_speed,
        initial_gap,
        profile,
        layout,
        origin_lane,
        target_lane,
        duration,
        seed,
    }
}

/// Random scenario that is guaranteed feasible: retries derived seeds until
/// generation succeeds. Deterministic per seed.
pub fn random_feasible_scenario(
    seed: u64,
    params: &DetectionParams,
) -> (ScenarioSpec, Recording, GroundTruth) {
    for attempt in 0..64u64 {
        let spec = random_scenario_spec(seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        let spec = ScenarioSpec { recording_id: seed, seed, ..spec };
        if let Ok((rec, truth)) = make_lane_change_scenario(&spec, params) {
            return (spec, rec, truth);
        }
    }
    unreachable!("scenario sampling ranges are feasible by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::extract_events;

    fn base_spec(profile: LateralProfile, duration: f64) -> ScenarioSpec {
        ScenarioSpec {
            recording_id: 7,
            lcv_speed: 30.0,
            lcv_speed_ramp: None,
            tfv_speed: 29.0,
            initial_gap: 18.0,
            profile,
            layout: LaneLayout::standard(),
            origin_lane: 5,
            target_lane: 6,
            duration,
            seed: 7,
        }
    }

    #[test]
    fn plateau_ground_truth_matches_hand_derivation() {
        // v rises 0->0.5 over [5.0, 5.5], holds 7.45 s, falls over 0.6 s.
        // Onset: v crosses 0.15 at 5.15 s, so the earliest admissible window
        // start is 4.15 s -> first frame 104. Crossing: 2 m of displacement
        // at 9.25 s -> first frame in the new lane is 232. Settle: v falls
        // below 0.1 at 13.43 s -> frame 336.
        let spec = base_spec(
            LateralProfile::Single {
                start: 5.0,
                shape: Shape::Plateau { v_lat: 0.5, rise: 0.5, fall: 0.6 },
            },
            18.0,
        );
        let (rec, truth) = make_lane_change_scenario(&spec, &DetectionParams::default()).unwrap();
        let m = truth.primary();
        assert_eq!((m.t1, m.t2, m.t3), (104, 232, 336));

        let (events, _) = extract_events(&rec, &DetectionParams::default());
        assert_eq!(events.len(), 1);
        assert_eq!((events[0].t1, events[0].t2, events[0].t3), (104, 232, 336));
    }

    #[test]
    fn ramp_ground_truth_matches_hand_derivation() {
        // Triangle at slope 0.2: peak sqrt(0.8) at 9.47 s; v crosses 0.15 at
        // 5.75 s -> first window start at frame 119; the boundary sits at the
        // triangle's midpoint, crossed at 9.472 s -> frame 237; v falls below
        // 0.1 at 13.444 s -> frame 337.
        let spec = base_spec(
            LateralProfile::Single { start: 5.0, shape: Shape::Ramp { slope: 0.2 } },
            19.0,
        );
        let (rec, truth) = make_lane_change_scenario(&spec, &DetectionParams::default()).unwrap();
        let m = truth.primary();
        assert_eq!((m.t1, m.t2, m.t3), (119, 237, 337));

        let (events, _) = extract_events(&rec, &DetectionParams::default());
        assert_eq!(events.len(), 1);
        assert_eq!((events[0].t1, events[0].t2, events[0].t3), (119, 237, 337));
    }

    #[test]
    fn composite_produces_two_maneuvers() {
        let spec = base_spec(
            LateralProfile::Composite {
                start: 5.5,
                out: Shape::Plateau { v_lat: 0.8, rise: 0.5, fall: 0.5 },
                pause: 3.0,
                back: Shape::Ramp { slope: 0.3 },
            },
            30.0,
        );
        let (rec, truth) = make_lane_change_scenario(&spec, &DetectionParams::default()).unwrap();
        assert_eq!(truth.maneuvers.len(), 2);
        assert_eq!(truth.maneuvers[0].origin_lane, 5);
        assert_eq!(truth.maneuvers[1].origin_lane, 6);

        let (events, _) = extract_events(&rec, &DetectionParams::default());
        assert_eq!(events.len(), 2);
        for (e, m) in events.iter().zip(&truth.maneuvers) {
            assert_eq!((e.t1, e.t2, e.t3), (m.t1, m.t2, m.t3));
            assert!(m.t1 < m.t2 && m.t2 < m.t3);
        }
        // First maneuver fully settles before the second begins.
        assert!(truth.maneuvers[0].t3 < truth.maneuvers[1].t2);
    }

    #[test]
    fn zero_lateral_velocity_is_infeasible() {
        let spec = base_spec(
            LateralProfile::Single { start: 5.0, shape: Shape::Plateau { v_lat: 0.0, rise: 0.5, fall: 0.5 } },
            18.0,
        );
        assert!(matches!(
            make_lane_change_scenario(&spec, &DetectionParams::default()),
            Err(SynthError::InfeasibleSpec(_))
        ));
    }

    #[test]
    fn sub_threshold_peak_is_infeasible() {
        // Peak lateral velocity below v_s can cross the lane but the onset
        // predicate never fires.
        let spec = base_spec(
            LateralProfile::Single { start: 5.0, shape: Shape::Plateau { v_lat: 0.1, rise: 0.5, fall: 0.5 } },
            60.0,
        );
        assert!(matches!(
            make_lane_change_scenario(&spec, &DetectionParams::default()),
            Err(SynthError::InfeasibleSpec(_))
        ));
    }

    #[test]
    fn expected_classification_follows_gap() {
        let mut spec = base_spec(
            LateralProfile::Single { start: 5.0, shape: Shape::Plateau { v_lat: 0.5, rise: 0.5, fall: 0.6 } },
            18.0,
        );
        spec.initial_gap = 12.0;
        let (_, truth) = make_lane_change_scenario(&spec, &DetectionParams::default()).unwrap();
        let labels: Vec<Label> = truth
            .expected_classification
            .iter()
            .map(|(_, l)| *l)
            .collect();
        assert_eq!(
            labels,
            vec![
                Label::OtherLaneChange,
                Label::CutIn,
                Label::CutIn,
                Label::CutIn,
                Label::CutIn
            ]
        );
    }

    #[test]
    fn null_scenarios_have_no_transitions() {
        for speeds in [vec![30.0, 25.0], vec![28.0], (0..10).map(|i| 20.0 + i as f64).collect()] {
            let rec = make_null_scenario(60.0, &speeds);
            assert_eq!(rec.tracks.len(), speeds.len());
            let (events, report) = extract_events(&rec, &DetectionParams::default());
            assert!(events.is_empty());
            assert!(report.dropped.is_empty());
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let params = DetectionParams::default();
        let (spec_a, rec_a, truth_a) = random_feasible_scenario(42, &params);
        let (spec_b, rec_b, truth_b) = random_feasible_scenario(42, &params);
        assert_eq!(spec_a, spec_b);
        assert_eq!(rec_a, rec_b);
        assert_eq!(truth_a, truth_b);
    }

    #[test]
    fn lane_layout_assignment() {
        let layout = LaneLayout::standard();
        let lanes = layout.lanes();
        assert_eq!(lanes.len(), 4);
        assert_eq!(layout.lane_of(10.0), Some(2));
        assert_eq!(layout.lane_of(14.0), Some(3));
        assert_eq!(layout.lane_of(23.0), Some(5));
        assert_eq!(layout.lane_of(27.5), Some(6));
        // Boundary belongs to the lane it opens.
        assert_eq!(layout.lane_of(25.0), Some(6));
        assert_eq!(layout.lane_of(0.0), None);
    }
}
