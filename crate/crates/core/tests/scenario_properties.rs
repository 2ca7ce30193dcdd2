use proptest::prelude::*;
use scrop_core::controller::PumpAction;
use scrop_core::power::{PowerSource, WeatherCondition};
use scrop_core::scenario::{compare_automation, run_scenario, ScenarioConfig, SimReport, WeatherSegment};

const CHARGE_GATE_V: f64 = 12.9;

fn hours(h: f64) -> ScenarioConfig {
    ScenarioConfig {
        duration_hours: h,
        ..ScenarioConfig::default()
    }
}

fn condition() -> impl Strategy<Value = WeatherCondition> {
    prop::sample::select(WeatherCondition::ALL.to_vec())
}

/// Random contiguous timeline over `[0, total]` hours, built from cut points.
fn timeline(total: f64) -> impl Strategy<Value = Vec<WeatherSegment>> {
    (
        prop::collection::vec(0.05f64..0.95, 0..4),
        prop::collection::vec(condition(), 5),
    )
        .prop_map(move |(mut cuts, conds)| {
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let mut bounds = vec![0.0];
            bounds.extend(cuts.iter().map(|c| (c * total * 100.0).round() / 100.0));
            bounds.push(total);
            bounds.dedup();
            bounds
                .windows(2)
                .zip(conds)
                .map(|(w, condition)| WeatherSegment {
                    start_hour: w[0],
                    end_hour: w[1],
                    condition,
                })
                .collect()
        })
}

fn check_trace_invariants(report: &SimReport) -> Result<(), TestCaseError> {
    for node in &report.nodes {
        prop_assert_eq!(node.trace.len() as u64, report.ticks);
        let mut charge = node.initial_charge;
        for (i, row) in node.trace.iter().enumerate() {
            let next = node.trace.get(i + 1).map_or(node.final_moisture, |r| r.moisture);
            prop_assert!((next - (row.moisture + row.inflow - row.evapotranspiration)).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&row.moisture));
            prop_assert!(row.inflow >= 0.0 && row.evapotranspiration >= 0.0);
            if !row.relay_on {
                prop_assert_eq!(row.inflow, 0.0);
            }
            if row.panel_v < CHARGE_GATE_V {
                prop_assert!(row.charge_fraction <= charge);
            }
            if row.source == PowerSource::Panel {
                prop_assert!(row.charge_fraction >= charge);
            }
            prop_assert!((0.0..=1.0).contains(&row.charge_fraction));
            charge = row.charge_fraction;
        }
        let mut expected = PumpAction::PumpOn;
        for e in &node.events {
            prop_assert_eq!(e.action, expected);
            expected = match expected {
                PumpAction::PumpOn => PumpAction::PumpOff,
                PumpAction::PumpOff => PumpAction::PumpOn,
            };
            match e.action {
                PumpAction::PumpOn => prop_assert!(e.sm_at_event <= report.threshold.threshold_sm),
                PumpAction::PumpOff => prop_assert!(e.sm_at_event > report.threshold.release_sm),
            }
        }
    }
    prop_assert!((0.0..=1.0).contains(&report.uptime));
    for channel in &report.channels {
        for w in channel.observations.windows(2) {
            prop_assert!(w[1].written_ms - w[0].written_ms >= 15_000);
        }
        if let Some(latency) = channel.max_latency_ms {
            prop_assert!(latency <= 30_000, "{} latency {}", channel.channel, latency);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_scenarios_keep_invariants(
        weather in timeline(3.0),
        moisture in 0.0f64..=100.0,
        charge in 0.0f64..=1.0,
        seed in any::<u64>(),
        loop_secs in 1u64..=30,
        crop in prop::sample::select(vec!["default", "tomato", "potato", "maize", "wheat", "rice"]),
        automation in any::<bool>(),
    ) {
        let mut cfg = hours(3.0);
        cfg.weather = weather;
        cfg.seed = seed;
        cfg.loop_delay_ms = loop_secs * 1000;
        cfg.crop_name = crop.to_string();
        cfg.automation_enabled = automation;
        cfg.nodes[0].initial_moisture = moisture;
        cfg.nodes[0].initial_charge = charge;
        let report = run_scenario(&cfg).unwrap();
        check_trace_invariants(&report)?;
        if !automation {
            prop_assert_eq!(report.channels.iter().map(|c| c.accepted).sum::<u64>(), 0);
        }
    }

    #[test]
    fn iterations_respect_loop_delay(loop_secs in 1u64..=20, tick_ms in prop::sample::select(vec![250u64, 500, 1000])) {
        let mut cfg = hours(0.5);
        cfg.loop_delay_ms = loop_secs * 1000;
        cfg.tick_secs = tick_ms as f64 / 1000.0;
        let report = run_scenario(&cfg).unwrap();
        let node = &report.nodes[0];
        let runs = node.telemetry_writes.accepted + node.telemetry_writes.rate_limited;
        prop_assert_eq!(runs, node.iterations);
        let span = 1_800_000u64;
        let max_runs = span.div_ceil(cfg.loop_delay_ms);
        prop_assert!(node.iterations <= max_runs);
        let written: Vec<u64> = report.channels[0].observations.iter().map(|o| o.written_ms).collect();
        for w in written.windows(2) {
            prop_assert!(w[1] - w[0] >= cfg.loop_delay_ms.max(15_000));
        }
    }
}

#[test]
fn default_day_power_and_uptime() {
    let report = run_scenario(&ScenarioConfig::default()).unwrap();
    assert_eq!(report.ticks, 86_400);
    assert_eq!(report.uptime, 1.0);
    let node = &report.nodes[0];
    let mut charge = node.initial_charge;
    for row in &node.trace {
        let hour = row.time_ms as f64 / 3_600_000.0;
        if row.charge_fraction > charge {
            assert!((11.0..15.0).contains(&hour), "charge rose at hour {hour}");
        }
        charge = row.charge_fraction;
    }
}

#[test]
fn low_morning_moisture_triggers_slot_one_irrigation() {
    for start in [36.5, 37.5, 38.5] {
        let mut cfg = ScenarioConfig::default();
        cfg.nodes[0].initial_moisture = start;
        let report = run_scenario(&cfg).unwrap();
        let events = &report.nodes[0].events;
        let on = events[0].at.as_millis();
        let off = events[1].at.as_millis();
        let hour = on as f64 / 3_600_000.0;
        assert!((5.0..7.0).contains(&hour), "start {start}: first PumpOn at {hour}");
        let minutes = (off - on) as f64 / 60_000.0;
        assert!(
            (40.0..=50.0).contains(&minutes),
            "start {start}: pump ran {minutes} min"
        );
    }
}

#[test]
fn disabled_automation_in_both_arms_matches() {
    let cfg = ScenarioConfig {
        automation_enabled: false,
        duration_hours: 12.0,
        ..ScenarioConfig::default()
    };
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a.nodes[0].trace, b.nodes[0].trace);
    let cmp = compare_automation(&cfg).unwrap();
    assert_eq!(cmp.baseline.nodes[0].trace, a.nodes[0].trace);
}

#[test]
fn multiple_nodes_run_independently() {
    let mut cfg = hours(6.0);
    let mut second = cfg.nodes[0].clone();
    second.id = "node-2".into();
    second.initial_moisture = 60.0;
    cfg.nodes.push(second);
    let report = run_scenario(&cfg).unwrap();
    assert_eq!(report.nodes.len(), 2);
    assert_eq!(report.channels.len(), 4);
    let solo = run_scenario(&hours(6.0)).unwrap();
    assert_eq!(report.nodes[0].trace, solo.nodes[0].trace);
    assert_ne!(report.nodes[1].trace, solo.nodes[0].trace);
}

#[test]
fn invalid_timeline_rejected_before_start() {
    let mut cfg = hours(2.0);
    cfg.weather = vec![WeatherSegment {
        start_hour: 0.0,
        end_hour: 1.0,
        condition: WeatherCondition::Sunny,
    }];
    assert!(run_scenario(&cfg).is_err());
}
