//! Table rendering and file emission.
//!
//! Human-readable tables round means and stds to three decimals and print
//! p-values below 0.001 as "<0.001"; machine-readable CSVs carry full
//! precision plus group sizes, so a saved run can be re-analyzed exactly.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::classify::Label;
use crate::model::{Anchor, WindowSpec};
use crate::pipeline::{
    ComparisonGrid, EventRecord, OutputFormat, ReportBundle, Role, MetricKind, METRICS, ROLES,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed events file: {0}")]
    Malformed(String),
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn fmt_p_human(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// No counted events at any threshold.
fn table1_is_empty(bundle: &ReportBundle) -> bool {
    bundle
        .table1
        .cutin
        .iter()
        .zip(&bundle.table1.other)
        .all(|(c, o)| c + o == 0)
}

/// `table1` in machine form: exact integer counts per threshold.
/// An empty bundle produces a header-only file.
pub fn render_table1_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("events");
    for t in &bundle.thresholds {
        out.push(',');
        out.push_str(&fmt_num(*t));
    }
    out.push('\n');
    if table1_is_empty(bundle) {
        return out;
    }
    out.push_str("cut_in");
    for c in &bundle.table1.cutin {
        out.push_str(&format!(",{c}"));
    }
    out.push('\n');
    out.push_str("other");
    for o in &bundle.table1.other {
        out.push_str(&format!(",{o}"));
    }
    out.push('\n');
    out
}

pub fn render_table1_md(bundle: &ReportBundle) -> String {
    let mut out = String::new();
    out.push_str("# Number of cut-in and other lane-change events per extraction gap\n\n");
    out.push_str("| Lane-change events |");
    for t in &bundle.thresholds {
        out.push_str(&format!(" {} m |", fmt_num(*t)));
    }
    out.push('\n');
    out.push_str("| --- |");
    for _ in &bundle.thresholds {
        out.push_str(" ---: |");
    }
    out.push('\n');
    if table1_is_empty(bundle) {
        return out;
    }
    out.push_str("| Cut-in |");
    for c in &bundle.table1.cutin {
        out.push_str(&format!(" {c} |"));
    }
    out.push('\n');
    out.push_str("| Other lane change |");
    for o in &bundle.table1.other {
        out.push_str(&format!(" {o} |"));
    }
    out.push('\n');
    out
}

/// One comparison grid in machine form: full precision plus group sizes.
pub fn render_grid_csv(grid: &ComparisonGrid) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "threshold",
        "window",
        "cutin_n",
        "cutin_mean",
        "cutin_std",
        "other_n",
        "other_mean",
        "other_std",
        "u_statistic",
        "rank_sum",
        "z_value",
        "p_two_sided",
        "method",
    ])?;
    for cell in &grid.cells {
        let (c_mean, c_std, o_mean, o_std, u, rs, z, p, method) = match &cell.comparison {
            Some(cmp) => (
                format!("{}", cmp.cutin.mean),
                format!("{}", cmp.cutin.std),
                format!("{}", cmp.other.mean),
                format!("{}", cmp.other.std),
                format!("{}", cmp.test.u_statistic),
                format!("{}", cmp.test.rank_sum),
                format!("{}", cmp.test.z_value),
                format!("{}", cmp.test.p_two_sided),
                match cmp.test.method {
                    crate::stats::PMethod::Exact => "exact",
                    crate::stats::PMethod::NormalApprox => "normal_approx",
                }
                .to_string(),
            ),
            None => Default::default(),
        };
        w.write_record([
            fmt_num(cell.threshold),
            cell.window.label(),
            cell.cutin_n.to_string(),
            c_mean,
            c_std,
            cell.other_n.to_string(),
            o_mean,
            o_std,
            u,
            rs,
            z,
            p,
            method,
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Malformed(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One comparison grid in the published table layout.
pub fn render_grid_md(grid: &ComparisonGrid) -> String {
    let role = match grid.role {
        Role::Lcv => "LCV",
        Role::Tfv => "TFV",
    };
    let mut out = format!(
        "# Comparison of {} of the {} around {}\n\n",
        grid.metric.display_name(),
        role,
        grid.anchor.name()
    );
    if let Some(reference) = grid.reference {
        out.push_str(&format!("Reference: Table {reference}\n\n"));
    }
    out.push_str("| X-gap (m) | Time interval (s) | Cut-in | Other lane change | p-value |\n");
    out.push_str("| ---: | --- | --- | --- | --- |\n");
    let mut has_empty = false;
    let mut last_threshold = f64::NAN;
    for cell in &grid.cells {
        let gap_label = if cell.threshold == last_threshold {
            String::new()
        } else {
            last_threshold = cell.threshold;
            fmt_num(cell.threshold)
        };
        match &cell.comparison {
            Some(cmp) => {
                out.push_str(&format!(
                    "| {} | {} | {:.3} ({:.3}) | {:.3} ({:.3}) | {} |\n",
                    gap_label,
                    cell.window.label(),
                    cmp.cutin.mean,
                    cmp.cutin.std,
                    cmp.other.mean,
                    cmp.other.std,
                    fmt_p_human(cmp.test.p_two_sided),
                ));
            }
            None => {
                has_empty = true;
                out.push_str(&format!(
                    "| {} | {} | — | — | — |\n",
                    gap_label,
                    cell.window.label()
                ));
            }
        }
    }
    if has_empty {
        out.push_str("\nCells marked — have an empty comparison group.\n");
    }
    out
}

fn metric_column(role: Role, window: &WindowSpec, metric: MetricKind) -> String {
    format!("{}_{}_{}", role.name(), window.id(), metric.short_name())
}

/// One row per kept event: identity, key frames, gap, per-threshold labels,
/// and the full metric matrix at machine precision.
pub fn render_events_csv(bundle: &ReportBundle) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "recording_id".to_string(),
        "lcv_id".to_string(),
        "tfv_id".to_string(),
        "t1".to_string(),
        "t2".to_string(),
        "t3".to_string(),
        "origin_lane".to_string(),
        "target_lane".to_string(),
        "x_gap_at_t1".to_string(),
    ];
    for t in &bundle.thresholds {
        header.push(format!("label_{}", fmt_num(*t)));
    }
    for role in ROLES {
        for window in &bundle.windows {
            for metric in METRICS {
                header.push(metric_column(role, window, metric));
            }
        }
    }
    w.write_record(&header)?;

    for e in &bundle.events {
        let mut row = vec![
            e.recording_id.to_string(),
            e.lcv_id.to_string(),
            e.tfv_id.to_string(),
            e.t1.to_string(),
            e.t2.to_string(),
            e.t3.to_string(),
            e.origin_lane.to_string(),
            e.target_lane.to_string(),
            format!("{}", e.x_gap_at_t1),
        ];
        for (_, label) in &e.labels {
            row.push(label.name().to_string());
        }
        for value in &e.metrics {
            row.push(fmt_opt(*value));
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Malformed(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per dropped transition or event, with stage and reason.
pub fn render_drops_csv(bundle: &ReportBundle) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stage", "recording_id", "vehicle_id", "t2", "reason", "detail"])?;
    for d in &bundle.drop_audit.drops {
        w.write_record([
            d.stage.to_string(),
            d.recording_id.to_string(),
            d.vehicle_id.to_string(),
            d.t2.to_string(),
            d.reason.to_string(),
            d.detail.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Malformed(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })
}

/// Writes the complete report into `out_dir`; returns the files written.
///
/// Machine artifacts (events.csv, drops.csv, manifest.txt) are always
/// written; table files follow the selected formats.
pub fn write_report(
    bundle: &ReportBundle,
    out_dir: &Path,
    formats: &[OutputFormat],
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir)
        .map_err(|source| ReportError::Io { path: out_dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    let mut emit = |name: String, contents: String| -> Result<(), ReportError> {
        let path = out_dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };

    for format in formats {
        match format {
            OutputFormat::Csv => {
                emit("table1.csv".into(), render_table1_csv(bundle))?;
                for grid in &bundle.grids {
                    emit(format!("{}.csv", grid.file_stem()), render_grid_csv(grid)?)?;
                }
            }
            OutputFormat::Markdown => {
                emit("table1.md".into(), render_table1_md(bundle))?;
                for grid in &bundle.grids {
                    emit(format!("{}.md", grid.file_stem()), render_grid_md(grid))?;
                }
            }
        }
    }
    emit("events.csv".into(), render_events_csv(bundle)?)?;
    emit("drops.csv".into(), render_drops_csv(bundle)?)?;
    emit("manifest.txt".into(), bundle.run_manifest.clone())?;
    Ok(written)
}

/// A parsed events.csv: enough to re-run the statistics stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EventsFile {
    pub thresholds: Vec<f64>,
    pub windows: Vec<WindowSpec>,
    pub events: Vec<EventRecord>,
}

fn parse_window_id(id: &str) -> Option<WindowSpec> {
    let anchor = match &id[..2.min(id.len())] {
        "t1" => Anchor::T1,
        "t2" => Anchor::T2,
        _ => return None,
    };
    let rest = &id[2..];
    if rest.len() != 6 {
        return None;
    }
    let parse_offset = |s: &str| -> Option<f64> {
        let sign = match s.as_bytes()[0] {
            b'm' => -1.0,
            b'p' => 1.0,
            _ => return None,
        };
        let tenths: f64 = s[1..].parse().ok()?;
        Some(sign * tenths / 10.0)
    };
    let start = parse_offset(&rest[..3])?;
    let end = parse_offset(&rest[3..])?;
    (start < end).then(|| WindowSpec::new(anchor, start, end))
}

/// Reads an events.csv written by [`render_events_csv`].
pub fn read_events_csv(path: &Path) -> Result<EventsFile, ReportError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();

    const FIXED: [&str; 9] = [
        "recording_id",
        "lcv_id",
        "tfv_id",
        "t1",
        "t2",
        "t3",
        "origin_lane",
        "target_lane",
        "x_gap_at_t1",
    ];
    for (i, name) in FIXED.iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(ReportError::Malformed(format!("expected column {name} at index {i}")));
        }
    }

    let mut thresholds = Vec::new();
    let mut idx = FIXED.len();
    while let Some(h) = headers.get(idx) {
        let Some(raw) = h.strip_prefix("label_") else { break };
        let t: f64 = raw
            .parse()
            .map_err(|_| ReportError::Malformed(format!("bad label column {h}")))?;
        thresholds.push(t);
        idx += 1;
    }
    if thresholds.is_empty() {
        return Err(ReportError::Malformed("no label columns".into()));
    }

    // Metric columns: role_windowid_metric in role-major, window-minor order.
    let mut windows: Vec<WindowSpec> = Vec::new();
    let metric_start = idx;
    let mut metric_cols = 0usize;
    while let Some(h) = headers.get(idx) {
        let parts: Vec<&str> = h.splitn(3, '_').collect();
        if parts.len() != 3 {
            return Err(ReportError::Malformed(format!("unexpected column {h}")));
        }
        if parts[0] == "lcv" && parts[2] == METRICS[0].short_name() {
            let w = parse_window_id(parts[1])
                .ok_or_else(|| ReportError::Malformed(format!("bad window id in {h}")))?;
            windows.push(w);
        }
        metric_cols += 1;
        idx += 1;
    }
    let expected = ROLES.len() * windows.len() * METRICS.len();
    if windows.is_empty() || metric_cols != expected {
        return Err(ReportError::Malformed(format!(
            "metric column count {metric_cols} does not match {} windows",
            windows.len()
        )));
    }

    let mut events = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| record.get(i).unwrap_or("").trim();
        let parse = |i: usize| -> Result<f64, ReportError> {
            get(i)
                .parse()
                .map_err(|_| ReportError::Malformed(format!("bad number in column {i}")))
        };
        let labels = thresholds
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let label = match get(FIXED.len() + k) {
                    "cut_in" => Label::CutIn,
                    "other" => Label::OtherLaneChange,
                    other => {
                        return Err(ReportError::Malformed(format!("bad label value {other}")))
                    }
                };
                Ok((t, label))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let metrics = (0..expected)
            .map(|k| {
                let raw = get(metric_start + k);
                if raw.is_empty() {
                    Ok(None)
                } else {
                    raw.parse::<f64>()
                        .map(Some)
                        .map_err(|_| ReportError::Malformed(format!("bad metric value {raw}")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        events.push(EventRecord {
            recording_id: parse(0)? as u64,
            lcv_id: parse(1)? as u64,
            tfv_id: parse(2)? as u64,
            t1: parse(3)? as i64,
            t2: parse(4)? as i64,
            t3: parse(5)? as i64,
            origin_lane: parse(6)? as u32,
            target_lane: parse(7)? as u32,
            x_gap_at_t1: parse(8)?,
            labels,
            metrics,
        });
    }
    Ok(EventsFile { thresholds, windows, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_windows, DetectionParams};
    use crate::pipeline::{run_pipeline, InputSource, PipelineConfig};
    use crate::stats::{PMethod, RankSumResult, SampleSummary};
    use crate::pipeline::{GridCell, Table1};

    fn tiny_bundle() -> ReportBundle {
        let cell = |threshold: f64, p: f64| GridCell {
            threshold,
            window: WindowSpec::new(Anchor::T1, -1.0, 1.0),
            cutin_n: 3,
            other_n: 4,
            comparison: Some(crate::stats::GroupComparison {
                cutin: SampleSummary { n: 3, mean: 0.6691, std: 0.2923 },
                other: SampleSummary { n: 4, mean: 0.6138, std: 0.3704 },
                test: RankSumResult {
                    u_statistic: 4.0,
                    rank_sum: 10.0,
                    z_value: -0.7,
                    p_two_sided: p,
                    method: PMethod::Exact,
                    tie_groups: vec![],
                },
            }),
        };
        ReportBundle {
            thresholds: vec![10.0, 15.0],
            windows: vec![WindowSpec::new(Anchor::T1, -1.0, 1.0)],
            gap_mode: crate::model::GapMode::NetGap,
            table1: Table1 { thresholds: vec![10.0, 15.0], cutin: vec![3, 5], other: vec![9, 7] },
            grids: vec![ComparisonGrid {
                role: Role::Lcv,
                anchor: Anchor::T1,
                metric: MetricKind::CumulativeVelocityChange,
                reference: Some("II"),
                cells: vec![cell(10.0, 0.0004), cell(15.0, 0.0251)],
            }],
            events: vec![],
            drop_audit: Default::default(),
            ingest_report: Default::default(),
            run_manifest: "manifest\n".into(),
        }
    }

    #[test]
    fn table1_csv_has_exact_integers() {
        let text = render_table1_csv(&tiny_bundle());
        assert_eq!(text, "events,10,15\ncut_in,3,5\nother,9,7\n");
    }

    #[test]
    fn empty_bundle_gives_header_only_table1() {
        let mut bundle = tiny_bundle();
        bundle.table1.cutin = vec![0, 0];
        bundle.table1.other = vec![0, 0];
        assert_eq!(render_table1_csv(&bundle), "events,10,15\n");
        let md = render_table1_md(&bundle);
        assert!(!md.contains("Cut-in |"));
    }

    #[test]
    fn table1_columns_partition_total() {
        let b = tiny_bundle();
        for (c, o) in b.table1.cutin.iter().zip(&b.table1.other) {
            assert_eq!(c + o, 12);
        }
    }

    #[test]
    fn small_p_renders_below_threshold_marker() {
        let md = render_grid_md(&tiny_bundle().grids[0]);
        assert!(md.contains("<0.001"));
        assert!(md.contains("0.025"));
        assert!(md.contains("0.669 (0.292)"));
        assert!(md.contains("Reference: Table II"));
    }

    #[test]
    fn empty_cell_renders_dash_with_footnote() {
        let mut bundle = tiny_bundle();
        bundle.grids[0].cells[1].comparison = None;
        bundle.grids[0].cells[1].cutin_n = 0;
        let md = render_grid_md(&bundle.grids[0]);
        assert!(md.contains("| — | — | — |"));
        assert!(md.contains("empty comparison group"));
    }

    #[test]
    fn grid_csv_quotes_window_labels() {
        let csv_text = render_grid_csv(&tiny_bundle().grids[0]).unwrap();
        // The window label contains a comma, so it must be quoted.
        assert!(csv_text.contains("\"[T1-1,T1+1]\""));
        assert!(csv_text.contains("exact"));
    }

    #[test]
    fn events_csv_round_trips_through_reader() {
        let cfg = PipelineConfig {
            input: InputSource::Synthetic { scenarios: 14, nulls: 1, seed: 77 },
            params: DetectionParams::default(),
            windows: default_windows(),
            output_dir: PathBuf::from("unused"),
            formats: vec![OutputFormat::Csv],
            workers: Some(2),
        };
        let mut bundle = run_pipeline(&cfg).unwrap();
        assert!(!bundle.events.is_empty());
        // An uncomputable ratio metric round-trips as an empty field.
        bundle.events[0].metrics[1] = None;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        fs::write(&path, render_events_csv(&bundle).unwrap()).unwrap();
        let parsed = read_events_csv(&path).unwrap();

        assert_eq!(parsed.thresholds, bundle.thresholds);
        assert_eq!(parsed.windows, bundle.windows);
        assert_eq!(parsed.events, bundle.events);
    }

    #[test]
    fn window_id_parsing() {
        assert_eq!(
            parse_window_id("t1m40p10"),
            Some(WindowSpec::new(Anchor::T1, -4.0, 1.0))
        );
        assert_eq!(
            parse_window_id("t2m15p05"),
            Some(WindowSpec::new(Anchor::T2, -1.5, 0.5))
        );
        assert_eq!(
            parse_window_id("t2p00p20"),
            Some(WindowSpec::new(Anchor::T2, 0.0, 2.0))
        );
        assert_eq!(parse_window_id("t3m40p10"), None);
        assert_eq!(parse_window_id("t1p10m40"), None);
    }
}
