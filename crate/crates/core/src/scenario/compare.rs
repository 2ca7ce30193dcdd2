use serde::{Deserialize, Serialize};

use super::{run_scenario, NodeReport, ScenarioConfig, ScenarioError, SimReport};
use crate::cloud::Threshold;

/// Per-node figures for one arm of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub node_id: String,
    pub automation_enabled: bool,
    pub peak_moisture: f64,
    pub min_moisture: f64,
    pub final_moisture: f64,
    /// Start of the first tick with the relay closed.
    pub first_actuation_ms: Option<u64>,
    /// Length of the first continuous pump run.
    pub first_pump_duration_ms: Option<u64>,
    pub pump_runs: u64,
    pub pump_on_ms: u64,
    /// Moisture extremes from the first actuation to the end of the run.
    pub min_after_first_actuation: Option<f64>,
    pub max_after_first_actuation: Option<f64>,
    /// Fraction of ticks after the first actuation with moisture inside the crop band.
    pub time_in_band_after_first_actuation: Option<f64>,
    pub uptime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub automated: SimReport,
    pub baseline: SimReport,
    pub automated_summary: Vec<ArmSummary>,
    pub baseline_summary: Vec<ArmSummary>,
}

/// Moisture is sampled at every tick boundary including the end of the run.
pub fn summarize(node: &NodeReport, tick_ms: u64, band: Threshold, automation_enabled: bool) -> ArmSummary {
    let levels: Vec<f64> = node
        .trace
        .iter()
        .map(|r| r.moisture)
        .chain(std::iter::once(node.final_moisture))
        .collect();
    let peak_moisture = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_moisture = levels.iter().copied().fold(f64::INFINITY, f64::min);

    let first = node.trace.iter().position(|r| r.relay_on);
    let mut pump_runs = 0;
    let mut prev = false;
    for r in &node.trace {
        if r.relay_on && !prev {
            pump_runs += 1;
        }
        prev = r.relay_on;
    }
    let pump_on_ms = node.trace.iter().filter(|r| r.relay_on).count() as u64 * tick_ms;
    let first_pump_duration_ms =
        first.map(|i| node.trace[i..].iter().take_while(|r| r.relay_on).count() as u64 * tick_ms);
    let after = first.map(|i| &levels[i..]);
    let min_after = after.map(|l| l.iter().copied().fold(f64::INFINITY, f64::min));
    let max_after = after.map(|l| l.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let in_band = after.map(|l| {
        let n = l
            .iter()
            .filter(|&&m| m >= band.threshold_sm && m <= band.release_sm)
            .count();
        n as f64 / l.len() as f64
    });

    ArmSummary {
        node_id: node.id.clone(),
        automation_enabled,
        peak_moisture,
        min_moisture,
        final_moisture: node.final_moisture,
        first_actuation_ms: first.map(|i| node.trace[i].time_ms),
        first_pump_duration_ms,
        pump_runs,
        pump_on_ms,
        min_after_first_actuation: min_after,
        max_after_first_actuation: max_after,
        time_in_band_after_first_actuation: in_band,
        uptime: node.uptime,
    }
}

fn summaries(report: &SimReport) -> Vec<ArmSummary> {
    report
        .nodes
        .iter()
        .map(|n| summarize(n, report.tick_ms, report.threshold, report.automation_enabled))
        .collect()
}

/// Runs the scenario twice from the same initial state: once with the
/// threshold controller, once on the fixed irrigation schedule.
pub fn compare_automation(config: &ScenarioConfig) -> Result<Comparison, ScenarioError> {
    let automated = run_scenario(&ScenarioConfig {
        automation_enabled: true,
        ..config.clone()
    })?;
    let baseline = run_scenario(&ScenarioConfig {
        automation_enabled: false,
        ..config.clone()
    })?;
    Ok(Comparison {
        automated_summary: summaries(&automated),
        baseline_summary: summaries(&baseline),
        automated,
        baseline,
    })
}
