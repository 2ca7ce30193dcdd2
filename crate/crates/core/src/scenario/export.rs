//! Writes run results to a directory as CSV tables or one JSON document.
//!
//! CSV layout per report:
//! `trace_<node>.csv`, `power_<node>.csv`, `events_<node>.csv`,
//! `telemetry_<channel>.csv` and `summary.json`.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::{summarize, ArmSummary, Comparison, ScenarioError, SimReport};
use crate::clock::Epoch;
use crate::cloud::FIELD_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(ScenarioError::Invalid(format!(
                "unknown export format {other:?}, expected csv or json"
            ))),
        }
    }
}

/// Headline figures written next to the CSV tables.
#[derive(Debug, Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    seed: u64,
    ticks: u64,
    tick_ms: u64,
    automation_enabled: bool,
    crop_name: &'a str,
    threshold_sm: f64,
    release_sm: f64,
    uptime: f64,
    max_visibility_latency_ms: Option<u64>,
    images_uploaded: u64,
    predictions: usize,
    nodes: Vec<ArmSummary>,
}

fn summary(report: &SimReport) -> Summary<'_> {
    Summary {
        scenario: &report.scenario,
        seed: report.seed,
        ticks: report.ticks,
        tick_ms: report.tick_ms,
        automation_enabled: report.automation_enabled,
        crop_name: &report.crop_name,
        threshold_sm: report.threshold.threshold_sm,
        release_sm: report.threshold.release_sm,
        uptime: report.uptime,
        max_visibility_latency_ms: report.max_visibility_latency_ms,
        images_uploaded: report.images_uploaded,
        predictions: report.predictions.len(),
        nodes: report
            .nodes
            .iter()
            .map(|n| summarize(n, report.tick_ms, report.threshold, report.automation_enabled))
            .collect(),
    }
}

#[derive(Serialize)]
struct PowerRow<'a> {
    tick: u64,
    time_ms: u64,
    condition: &'a str,
    panel_v: f64,
    source: &'a str,
    charge_fraction: f64,
    rail_on: bool,
}

#[derive(Serialize)]
struct EventRow<'a> {
    timestamp: &'a str,
    time_ms: u64,
    action: &'a str,
    sm: f64,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), ScenarioError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn export_report(report: &SimReport, format: ExportFormat, dir: &Path) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir)?;
    if format == ExportFormat::Json {
        return write_json(&dir.join("report.json"), report);
    }
    let epoch = Epoch::default();
    for node in &report.nodes {
        let mut trace = csv::Writer::from_path(dir.join(format!("trace_{}.csv", node.id)))?;
        for row in &node.trace {
            trace.serialize(row)?;
        }
        trace.flush()?;

        let mut power = csv::Writer::from_path(dir.join(format!("power_{}.csv", node.id)))?;
        for r in &node.trace {
            power.serialize(PowerRow {
                tick: r.tick,
                time_ms: r.time_ms,
                condition: r.condition.as_str(),
                panel_v: r.panel_v,
                source: r.source.as_str(),
                charge_fraction: r.charge_fraction,
                rail_on: r.rail_on,
            })?;
        }
        power.flush()?;

        let mut events = csv::Writer::from_path(dir.join(format!("events_{}.csv", node.id)))?;
        if node.events.is_empty() {
            events.write_record(["timestamp", "time_ms", "action", "sm"])?;
        }
        for e in &node.events {
            events.serialize(EventRow {
                timestamp: &e.timestamp,
                time_ms: e.at.as_millis(),
                action: e.action.as_str(),
                sm: e.sm_at_event,
            })?;
        }
        events.flush()?;
    }

    for channel in &report.channels {
        let mut w = csv::Writer::from_path(dir.join(format!("telemetry_{}.csv", channel.channel)))?;
        let mut header = vec!["entry_id".to_string(), "created_at".into(), "time_ms".into()];
        header.extend((1..=FIELD_COUNT).map(|n| format!("field{n}")));
        header.extend(["status".into(), "stale_threshold".into()]);
        w.write_record(&header)?;
        for r in &channel.records {
            let mut row = vec![
                r.entry_id.to_string(),
                epoch.format(r.server_timestamp),
                r.server_timestamp.as_millis().to_string(),
            ];
            row.extend((1..=FIELD_COUNT).map(|n| r.fields.get(n).map(|v| v.to_string()).unwrap_or_default()));
            row.push(r.status.clone().unwrap_or_default());
            row.push(r.stale_threshold.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
    }

    write_json(&dir.join("summary.json"), &summary(report))
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    node_id: &'a str,
    arm: &'a str,
    peak_moisture: f64,
    min_moisture: f64,
    final_moisture: f64,
    first_actuation_ms: Option<u64>,
    first_pump_duration_ms: Option<u64>,
    pump_runs: u64,
    pump_on_ms: u64,
    min_after_first_actuation: Option<f64>,
    max_after_first_actuation: Option<f64>,
    time_in_band_after_first_actuation: Option<f64>,
    uptime: f64,
}

impl<'a> ComparisonRow<'a> {
    fn new(arm: &'a str, s: &'a ArmSummary) -> Self {
        Self {
            node_id: &s.node_id,
            arm,
            peak_moisture: s.peak_moisture,
            min_moisture: s.min_moisture,
            final_moisture: s.final_moisture,
            first_actuation_ms: s.first_actuation_ms,
            first_pump_duration_ms: s.first_pump_duration_ms,
            pump_runs: s.pump_runs,
            pump_on_ms: s.pump_on_ms,
            min_after_first_actuation: s.min_after_first_actuation,
            max_after_first_actuation: s.max_after_first_actuation,
            time_in_band_after_first_actuation: s.time_in_band_after_first_actuation,
            uptime: s.uptime,
        }
    }
}

/// Writes each arm under `automated/` and `baseline/`, plus a side-by-side table.
pub fn export_comparison(cmp: &Comparison, format: ExportFormat, dir: &Path) -> Result<(), ScenarioError> {
    export_report(&cmp.automated, format, &dir.join("automated"))?;
    export_report(&cmp.baseline, format, &dir.join("baseline"))?;
    let rows: Vec<ComparisonRow> = cmp
        .automated_summary
        .iter()
        .map(|s| ComparisonRow::new("automated", s))
        .chain(cmp.baseline_summary.iter().map(|s| ComparisonRow::new("baseline", s)))
        .collect();
    match format {
        ExportFormat::Json => write_json(&dir.join("comparison.json"), &rows),
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}
