use std::path::PathBuf;

use scrop_core::controller::PumpAction;
use scrop_core::scenario::{run_scenario, ScenarioConfig};

fn load(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"));
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn default_day_file_matches_builtin_default() {
    assert_eq!(load("default_day"), ScenarioConfig::default());
}

#[test]
fn every_shipped_scenario_is_valid() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(run_scenario(&cfg).unwrap().uptime, 1.0, "{}", path.display());
            count += 1;
        }
    }
    assert!(count >= 5);
}

#[test]
fn morning_slot_irrigates_once() {
    let report = run_scenario(&load("slot_morning")).unwrap();
    let events = &report.nodes[0].events;
    assert_eq!(events.len(), 2);
    assert_eq!(events[0].action, PumpAction::PumpOn);
    assert!(events[0].timestamp.starts_with("2021-03-01T06:"));
    let minutes = (events[1].at.as_millis() - events[0].at.as_millis()) as f64 / 60_000.0;
    assert!((40.0..=50.0).contains(&minutes));
}

#[test]
fn noon_slot_needs_no_irrigation_and_charges() {
    let report = run_scenario(&load("slot_noon")).unwrap();
    let node = &report.nodes[0];
    assert!(node.events.is_empty());
    assert!(node.trace.last().unwrap().charge_fraction > node.initial_charge);
}

#[test]
fn moderate_slot_irrigates_and_charges() {
    let report = run_scenario(&load("slot_moderate")).unwrap();
    let node = &report.nodes[0];
    assert_eq!(node.events.len(), 2);
    assert!(node.trace.last().unwrap().charge_fraction > node.initial_charge);
}
