use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ScenarioConfig, ScenarioError};
use crate::classifier::pipeline::PredictionPipeline;
use crate::classifier::ModelSpec;
use crate::clock::{Epoch, SimClock, SimTime};
use crate::cloud::{ChannelConfig, CloudStore, PredictionRecord, StoreOptions, TelemetryRecord, Threshold};
use crate::controller::{FaultRecord, IrrigationEvent, NodeConfig, NodeLoop, SensorReading, WriteCounts};
use crate::power::{step_power_with_flow, BatteryState, PowerSource, PowerState, WeatherCondition};
use crate::sensors::dht::{with_noise, HUMIDITY_TOLERANCE_PCT, TEMPERATURE_TOLERANCE_C};
use crate::sensors::{probe_reading, LeafCamera, MoistureCalibration, SoilColumnState};

/// State over one tick `[time_ms, time_ms + tick)`.
///
/// `moisture` and `measured_smps` are taken at the start of the tick;
/// `inflow` and `evapotranspiration` are applied during it, so the next
/// row's moisture is `moisture + inflow - evapotranspiration`. Power columns
/// describe the tick itself, with `charge_fraction` at its end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: u64,
    pub time_ms: u64,
    pub condition: WeatherCondition,
    pub moisture: f64,
    pub measured_smps: f64,
    pub adc: u16,
    pub temperature_c: f64,
    pub humidity_pct: f64,
    pub relay_on: bool,
    pub inflow: f64,
    pub evapotranspiration: f64,
    pub panel_v: f64,
    pub source: PowerSource,
    pub charge_fraction: f64,
    pub rail_on: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: String,
    pub initial_moisture: f64,
    pub initial_charge: f64,
    pub final_moisture: f64,
    pub trace: Vec<TraceRow>,
    pub events: Vec<IrrigationEvent>,
    pub faults: Vec<FaultRecord>,
    pub telemetry_writes: WriteCounts,
    pub event_writes: WriteCounts,
    /// Controller iterations that ran.
    pub iterations: u64,
    pub uptime: f64,
}

/// One accepted record and when the polling reader first saw it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub entry_id: u64,
    pub written_ms: u64,
    pub first_seen_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAudit {
    pub channel: String,
    pub accepted: u64,
    pub rate_limited: u64,
    pub observations: Vec<Observation>,
    pub records: Vec<TelemetryRecord>,
    pub min_spacing_ms: Option<u64>,
    pub max_latency_ms: Option<u64>,
    /// Records written too close to the end of the run to be polled.
    pub unobserved: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub seed: u64,
    pub tick_ms: u64,
    pub ticks: u64,
    pub automation_enabled: bool,
    pub crop_name: String,
    pub threshold: Threshold,
    pub nodes: Vec<NodeReport>,
    pub channels: Vec<ChannelAudit>,
    pub max_visibility_latency_ms: Option<u64>,
    /// Fraction of node-ticks with the 3.3 V rail up.
    pub uptime: f64,
    pub images_uploaded: u64,
    pub predictions: Vec<PredictionRecord>,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<SimReport, ScenarioError> {
    run_scenario_with(config, None)
}

struct NodeSim {
    soil: SoilColumnState,
    power: PowerState,
    control: NodeLoop,
    trace: Vec<TraceRow>,
    noise: ChaCha8Rng,
}

struct Reader {
    channel: String,
    seen_up_to: u64,
    first_seen: Vec<(u64, u64)>,
}

/// Runs the scenario; with a model and a leaf schedule, each uploaded leaf
/// image is classified and the prediction stored.
pub fn run_scenario_with(config: &ScenarioConfig, model: Option<&ModelSpec>) -> Result<SimReport, ScenarioError> {
    config.validate()?;
    let clock = Arc::new(SimClock::new());
    let store = CloudStore::open(
        clock.clone(),
        StoreOptions {
            visibility_delay_ms: config.visibility_delay_ms,
            ..StoreOptions::simulated()
        },
    )?;
    store.select_crop(&config.crop_name)?;
    let threshold = store.get_threshold();
    let epoch =
        Epoch(Epoch::default().0 + chrono::Duration::milliseconds((config.start_hour * 3_600_000.0).round() as i64));
    let cal = MoistureCalibration::default();
    let camera = LeafCamera::default();

    let mut nodes = Vec::with_capacity(config.nodes.len());
    let mut readers = Vec::new();
    for (i, placement) in config.nodes.iter().enumerate() {
        let mut node_cfg = NodeConfig::new(&placement.id, format!("key-{}", placement.id), threshold);
        node_cfg.loop_delay_ms = config.loop_delay_ms;
        for channel in [node_cfg.telemetry_channel(), node_cfg.events_channel()] {
            store.create_channel(ChannelConfig::new(&channel, &node_cfg.write_key))?;
            readers.push(Reader {
                channel,
                seen_up_to: 0,
                first_seen: Vec::new(),
            });
        }
        nodes.push(NodeSim {
            soil: SoilColumnState {
                moisture: placement.initial_moisture,
                ..SoilColumnState::default()
            },
            power: PowerState::initial(BatteryState::new(config.battery_capacity_mah, placement.initial_charge)),
            control: NodeLoop::new(node_cfg, epoch),
            trace: Vec::with_capacity(config.tick_count() as usize),
            noise: ChaCha8Rng::seed_from_u64(config.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        });
    }

    let tick_ms = config.tick_ms();
    let dt = tick_ms as f64 / 1000.0;
    let poll_ms = config.reader_poll_secs * 1000;
    let leaf_period_ms = config
        .leaf_capture
        .as_ref()
        .map(|l| (l.period_hours * 3_600_000.0).round() as u64);
    let mut images_uploaded = 0;
    let wall_start = Instant::now();

    for tick in 0..config.tick_count() {
        let t = tick * tick_ms;
        clock.set(SimTime(t));
        if let Some(speed) = config.speed {
            let target = Duration::from_secs_f64(t as f64 / 1000.0 / speed);
            if let Some(wait) = target.checked_sub(wall_start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let hours = t as f64 / 3_600_000.0;
        let hour_of_day = config.hour_of_day(hours);
        let condition = config.condition_at(hours);
        let (air_t, air_h) = config.air.at(hour_of_day);

        for (i, node) in nodes.iter_mut().enumerate() {
            node.soil.temperature_c = air_t;
            node.soil.humidity_pct = air_h;
            let (adc, smps) = probe_reading(node.soil.moisture, &cal);

            let relay_on = if config.automation_enabled {
                if node.power.rail_on && node.control.is_due(SimTime(t)) {
                    let dht = if config.dht_noise {
                        let te = node
                            .noise
                            .random_range(-TEMPERATURE_TOLERANCE_C..=TEMPERATURE_TOLERANCE_C);
                        let he = node
                            .noise
                            .random_range(-HUMIDITY_TOLERANCE_PCT..=HUMIDITY_TOLERANCE_PCT);
                        with_noise(&node.soil, te, he)
                    } else {
                        with_noise(&node.soil, 0.0, 0.0)
                    };
                    let reading = SensorReading { adc, smps, dht };
                    node.control.iteration(&store, SimTime(t), &node.power, Ok(reading));
                }
                node.control.relay_on()
            } else {
                config.fixed_schedule.pump_on(hour_of_day)
            };

            if let (Some(period), Some(leaf)) = (leaf_period_ms, &config.leaf_capture) {
                if t.is_multiple_of(period) && node.power.rail_on {
                    let seed = config.seed ^ (t / period) ^ ((i as u64) << 40);
                    if let Ok(image) = camera.capture(leaf.scene, seed) {
                        store.put_image(&config.nodes[i].id, image)?;
                        images_uploaded += 1;
                        if let Some(model) = model {
                            PredictionPipeline::new(&config.nodes[i].id).cycle(&store, model);
                        }
                    }
                }
            }

            let (soil, flux) = config.soil.step(&node.soil, relay_on, condition, dt);
            let (power, _) = step_power_with_flow(&config.panel, &node.power, condition, config.node_load_ma, dt);
            node.trace.push(TraceRow {
                tick,
                time_ms: t,
                condition,
                moisture: node.soil.moisture,
                measured_smps: smps,
                adc: adc.count(),
                temperature_c: air_t,
                humidity_pct: air_h,
                relay_on,
                inflow: flux.inflow,
                evapotranspiration: flux.evapotranspiration,
                panel_v: power.panel_voltage,
                source: power.source,
                charge_fraction: power.battery.charge_fraction,
                rail_on: power.rail_on,
            });
            node.soil = soil;
            node.power = power;
        }

        if t.is_multiple_of(poll_ms) {
            for reader in readers.iter_mut() {
                poll(&store, reader, t);
            }
        }
    }

    let end_ms = config.tick_count() * tick_ms;
    let mut channels = Vec::new();
    for reader in &readers {
        channels.push(audit(&store, reader, end_ms, config.visibility_delay_ms + poll_ms)?);
    }
    let max_visibility_latency_ms = channels.iter().filter_map(|c| c.max_latency_ms).max();

    let mut node_reports = Vec::new();
    let (mut up, mut total) = (0usize, 0usize);
    for (node, placement) in nodes.into_iter().zip(&config.nodes) {
        let rail = node.trace.iter().filter(|r| r.rail_on).count();
        up += rail;
        total += node.trace.len();
        node_reports.push(NodeReport {
            id: placement.id.clone(),
            initial_moisture: placement.initial_moisture,
            initial_charge: placement.initial_charge,
            final_moisture: node.soil.moisture,
            uptime: if node.trace.is_empty() {
                1.0
            } else {
                rail as f64 / node.trace.len() as f64
            },
            trace: node.trace,
            events: node.control.events,
            faults: node.control.faults,
            telemetry_writes: node.control.telemetry_writes,
            event_writes: node.control.event_writes,
            iterations: node.control.iterations,
        });
    }
    let predictions = config.nodes.iter().flat_map(|n| store.predictions(&n.id)).collect();

    Ok(SimReport {
        scenario: config.name.clone(),
        seed: config.seed,
        tick_ms,
        ticks: config.tick_count(),
        automation_enabled: config.automation_enabled,
        crop_name: config.crop_name.clone(),
        threshold,
        nodes: node_reports,
        channels,
        max_visibility_latency_ms,
        uptime: if total == 0 { 1.0 } else { up as f64 / total as f64 },
        images_uploaded,
        predictions,
    })
}

/// A dashboard-style read of the channel feed; notes when each record first appears.
fn poll(store: &CloudStore, reader: &mut Reader, now_ms: u64) {
    let Ok(records) = store.channel_feed(&reader.channel, 100) else {
        return;
    };
    for r in records {
        if r.entry_id > reader.seen_up_to {
            reader.first_seen.push((r.entry_id, now_ms));
            reader.seen_up_to = r.entry_id;
        }
    }
}

fn audit(store: &CloudStore, reader: &Reader, end_ms: u64, horizon_ms: u64) -> Result<ChannelAudit, ScenarioError> {
    let records = store.channel_records(&reader.channel)?;
    let stats = store.channel_stats(&reader.channel)?;
    let observations: Vec<Observation> = records
        .iter()
        .map(|r| Observation {
            entry_id: r.entry_id,
            written_ms: r.server_timestamp.as_millis(),
            first_seen_ms: reader
                .first_seen
                .iter()
                .find(|(id, _)| *id == r.entry_id)
                .map(|(_, t)| *t),
        })
        .collect();
    let min_spacing_ms = observations.windows(2).map(|w| w[1].written_ms - w[0].written_ms).min();
    let max_latency_ms = observations
        .iter()
        .filter_map(|o| o.first_seen_ms.map(|s| s - o.written_ms))
        .max();
    let unobserved = observations
        .iter()
        .filter(|o| o.first_seen_ms.is_none() && o.written_ms + horizon_ms > end_ms)
        .count() as u64;
    let never_seen = observations.iter().filter(|o| o.first_seen_ms.is_none()).count() as u64;
    // A record old enough to have been polled but never seen is a latency violation.
    let max_latency_ms = if never_seen > unobserved {
        Some(u64::MAX)
    } else {
        max_latency_ms
    };
    Ok(ChannelAudit {
        channel: reader.channel.clone(),
        accepted: stats.accepted,
        rate_limited: stats.rate_limited,
        observations,
        records,
        min_spacing_ms,
        max_latency_ms,
        unobserved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::WeatherSegment;
    use crate::sensors::LeafScene;

    fn short(hours: f64) -> ScenarioConfig {
        ScenarioConfig {
            duration_hours: hours,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn zero_duration_is_empty() {
        let r = run_scenario(&short(0.0)).unwrap();
        assert_eq!(r.ticks, 0);
        assert!(r.nodes[0].trace.is_empty());
        assert!(r.nodes[0].events.is_empty());
        assert_eq!(r.uptime, 1.0);
    }

    #[test]
    fn trace_length_and_conservation() {
        let r = run_scenario(&short(2.0)).unwrap();
        let trace = &r.nodes[0].trace;
        assert_eq!(trace.len(), 7200);
        for w in trace.windows(2) {
            let expected = w[0].moisture + w[0].inflow - w[0].evapotranspiration;
            assert!((w[1].moisture - expected).abs() < 1e-12);
        }
        let last = trace.last().unwrap();
        assert!((r.nodes[0].final_moisture - (last.moisture + last.inflow - last.evapotranspiration)).abs() < 1e-12);
    }

    #[test]
    fn one_hour_of_telemetry() {
        let r = run_scenario(&short(1.0)).unwrap();
        let n = &r.nodes[0];
        assert_eq!(n.iterations, 400);
        assert_eq!(n.telemetry_writes.accepted + n.telemetry_writes.rate_limited, 400);
        let telemetry = &r.channels[0];
        assert!(telemetry.min_spacing_ms.unwrap() >= 15_000);
        assert!(telemetry.max_latency_ms.unwrap() <= 30_000);
    }

    #[test]
    fn dead_battery_in_the_dark_is_silent() {
        let mut cfg = short(1.0);
        cfg.weather = vec![WeatherSegment {
            start_hour: 0.0,
            end_hour: 1.0,
            condition: WeatherCondition::ShadyDark,
        }];
        cfg.nodes[0].initial_charge = 0.0;
        let r = run_scenario(&cfg).unwrap();
        assert_eq!(r.uptime, 0.0);
        assert_eq!(r.nodes[0].iterations, 0);
        assert_eq!(r.channels[0].accepted, 0);
    }

    #[test]
    fn leaf_schedule_uploads_and_predicts() {
        let mut cfg = short(3.0);
        cfg.leaf_capture = Some(crate::scenario::LeafSchedule {
            period_hours: 1.0,
            scene: LeafScene::Diseased(1),
        });
        let model = ModelSpec::toy(vec!["diseased".into(), "healthy".into()], 32, 1).unwrap();
        let r = run_scenario_with(&cfg, Some(&model)).unwrap();
        assert_eq!(r.images_uploaded, 3);
        assert_eq!(r.predictions.len(), 3);
        assert!(run_scenario(&cfg).unwrap().predictions.is_empty());
    }

    #[test]
    fn speed_paces_against_the_wall_clock() {
        let cfg = ScenarioConfig {
            duration_hours: 0.01,
            speed: Some(360.0),
            ..ScenarioConfig::default()
        };
        let start = Instant::now();
        let paced = run_scenario(&cfg).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(95));
        let fast = run_scenario(&ScenarioConfig { speed: None, ..cfg }).unwrap();
        assert_eq!(paced.nodes, fast.nodes);
    }

    #[test]
    fn identical_config_identical_report() {
        let a = run_scenario(&short(1.0)).unwrap();
        let b = run_scenario(&short(1.0)).unwrap();
        assert_eq!(a, b);
    }
}
