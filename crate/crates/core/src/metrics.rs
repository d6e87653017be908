//! The five driving-characteristic metrics over an analysis window.
//!
//! Metrics read longitudinal components only: lateral kinematics are already
//! consumed by detection, and the comparison studies speed adjustments around
//! the maneuver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{window_to_frames, FrameIdx, MetricVector, VehicleTrack, WindowSpec};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("window [{start}, {end}] is outside track of vehicle {vehicle_id}")]
    WindowOffTrack {
        vehicle_id: u64,
        start: FrameIdx,
        end: FrameIdx,
    },
    #[error("window collapses to fewer than two samples")]
    DegenerateWindow,
    #[error("minimum longitudinal velocity {v_min} is not positive")]
    NonPositiveMinVelocity { v_min: f64 },
}

/// Longitudinal velocity/acceleration samples over one inclusive frame range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSeries {
    pub vx: Vec<f64>,
    pub ax: Vec<f64>,
    pub dt: f64,
}

impl WindowSeries {
    pub fn new(vx: Vec<f64>, ax: Vec<f64>, dt: f64) -> Result<Self, MetricsError> {
        if vx.len() < 2 || vx.len() != ax.len() {
            return Err(MetricsError::DegenerateWindow);
        }
        Ok(WindowSeries { vx, ax, dt })
    }

    pub fn n_samples(&self) -> usize {
        self.vx.len()
    }

    /// Number of time steps between consecutive samples.
    pub fn n_steps(&self) -> usize {
        self.vx.len() - 1
    }
}

/// Extracts the inclusive frame range of a window anchored at `anchor_frame`.
pub fn slice_window(
    track: &VehicleTrack,
    anchor_frame: FrameIdx,
    w: &WindowSpec,
    dt: f64,
) -> Result<WindowSeries, MetricsError> {
    let (start, end) = window_to_frames(w, anchor_frame, dt);
    if !track.covers(start, end) {
        return Err(MetricsError::WindowOffTrack {
            vehicle_id: track.vehicle_id,
            start,
            end,
        });
    }
    let lo = (start - track.first_frame()) as usize;
    let hi = (end - track.first_frame()) as usize;
    let states = &track.states[lo..=hi];
    WindowSeries::new(
        states.iter().map(|s| s.vx).collect(),
        states.iter().map(|s| s.ax).collect(),
        dt,
    )
}

/// Fraction of the window spent with strictly positive acceleration.
pub fn acceleration_percentage(s: &WindowSeries) -> f64 {
    let in_accel = s.ax.iter().filter(|&&a| a > 0.0).count();
    in_accel as f64 / s.n_samples() as f64
}

/// (v_max - v_min) / v_min over the window's longitudinal velocities.
pub fn velocity_change_ratio(s: &WindowSeries) -> Result<f64, MetricsError> {
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for &v in &s.vx {
        v_min = v_min.min(v);
        v_max = v_max.max(v);
    }
    if v_min <= 0.0 {
        // Signals an exclusion-rule leak upstream.
        return Err(MetricsError::NonPositiveMinVelocity { v_min });
    }
    Ok((v_max - v_min) / v_min)
}

/// Total variation of velocity: sum of |a_j * dt| over the window's steps.
///
/// Uses the accelerations between consecutive samples, dropping the final
/// sample's acceleration, so a window of n samples contributes n-1 steps.
/// The constant positive dt factors out of the absolute values.
pub fn cumulative_velocity_change(s: &WindowSeries) -> f64 {
    s.ax[..s.n_steps()].iter().map(|a| a.abs()).sum::<f64>() * s.dt
}

pub fn max_acceleration(s: &WindowSeries) -> f64 {
    s.ax.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Minimum of the signed accelerations; decelerations print as negatives.
pub fn min_deceleration(s: &WindowSeries) -> f64 {
    s.ax.iter().copied().fold(f64::INFINITY, f64::min)
}

/// All five metrics from a single slice.
pub fn metric_vector(
    track: &VehicleTrack,
    anchor_frame: FrameIdx,
    w: &WindowSpec,
    dt: f64,
) -> Result<MetricVector, MetricsError> {
    let s = slice_window(track, anchor_frame, w, dt)?;
    Ok(MetricVector {
        p_a: acceleration_percentage(&s),
        r_v: velocity_change_ratio(&s)?,
        dv: cumulative_velocity_change(&s),
        a_max: max_acceleration(&s),
        a_min: min_deceleration(&s),
    })
}
