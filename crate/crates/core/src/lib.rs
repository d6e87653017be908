//! Batch analytics for naturalistic highway trajectory recordings: extracts
//! lane-change events, classifies cut-ins against gap thresholds, computes
//! windowed driving-characteristic metrics for the lane-changing vehicle and
//! its target follower, and compares the two event populations with the
//! Wilcoxon rank-sum test.
//!
//! The pipeline stages are independent modules:
//!
//! - [`model`] — canonical recordings, tracks, events, and parameters
//! - [`ingest`] — highD-style CSV parsing with strict validation
//! - [`synth`] — synthetic scenarios with analytic ground truth
//! - [`detect`] — lane-change detection (T1 / T2 / T3)
//! - [`classify`] — TFV attachment, exclusion rules, gap thresholds
//! - [`metrics`] — the five windowed driving-characteristic metrics
//! - [`stats`] — rank-sum testing and group summaries
//! - [`pipeline`] / [`report`] — orchestration and table emission

pub mod classify;
pub mod detect;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod synth;
