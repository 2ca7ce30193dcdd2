//! Simulated field nodes driven in real time against the HTTP service.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use scrop_core::clock::{Epoch, SimTime, SystemClock};
use scrop_core::cloud::CropRegistry;
use scrop_core::controller::{run_loop, NodeConfig, NodeIo, NodeLoop, SensorReading};
use scrop_core::power::{step_power, BatteryState, PowerState};
use scrop_core::scenario::ScenarioConfig;
use scrop_core::sensors::dht::with_noise;
use scrop_core::sensors::{probe_reading, MoistureCalibration, SoilColumnState};
use scrop_server::HttpCloudClient;

const DAY_MS: u64 = 86_400_000;

pub fn node_key(node_id: &str) -> String {
    format!("key-{node_id}")
}

#[derive(Debug, Clone)]
pub struct LiveNodeOptions {
    /// Weather, soil and power models; the weather timeline is indexed by UTC hour.
    pub scenario: ScenarioConfig,
    pub loop_delay_ms: u64,
}

impl Default for LiveNodeOptions {
    fn default() -> Self {
        let scenario = ScenarioConfig::default();
        let loop_delay_ms = scenario.loop_delay_ms;
        Self {
            scenario,
            loop_delay_ms,
        }
    }
}

/// Field state advanced lazily to the wall-clock time of each query.
struct LiveField {
    cfg: ScenarioConfig,
    cal: MoistureCalibration,
    soil: SoilColumnState,
    power: PowerState,
    relay_on: bool,
    last: Option<SimTime>,
}

impl LiveField {
    fn new(cfg: ScenarioConfig) -> Self {
        let placement = &cfg.nodes[0];
        let soil = SoilColumnState {
            moisture: placement.initial_moisture,
            ..SoilColumnState::default()
        };
        let power = PowerState::initial(BatteryState::new(cfg.battery_capacity_mah, placement.initial_charge));
        Self {
            cal: MoistureCalibration::default(),
            soil,
            power,
            relay_on: false,
            last: None,
            cfg,
        }
    }

    fn advance(&mut self, now: SimTime) {
        let hour = (now.as_millis() % DAY_MS) as f64 / 3_600_000.0;
        let (t, h) = self.cfg.air.at(hour);
        self.soil.temperature_c = t;
        self.soil.humidity_pct = h;
        let dt = self.last.map_or(0.0, |last| now.saturating_sub(last) as f64 / 1000.0);
        let condition = self.cfg.condition_at(hour);
        self.soil = self.cfg.soil.step(&self.soil, self.relay_on, condition, dt).0;
        self.power = step_power(&self.cfg.panel, &self.power, condition, self.cfg.node_load_ma, dt);
        self.last = Some(now);
    }
}

impl NodeIo for LiveField {
    fn sense(&mut self, now: SimTime) -> Result<SensorReading, String> {
        self.advance(now);
        let (adc, smps) = probe_reading(self.soil.moisture, &self.cal);
        Ok(SensorReading {
            adc,
            smps,
            dht: with_noise(&self.soil, 0.0, 0.0),
        })
    }

    fn power(&mut self, now: SimTime) -> PowerState {
        self.advance(now);
        self.power
    }

    fn set_relay(&mut self, on: bool) {
        self.relay_on = on;
    }
}

/// Handles of running node threads.
pub struct LiveNodes {
    stop: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
}

impl LiveNodes {
    pub fn stop(self) {
        self.stop.store(true, Ordering::SeqCst);
        for h in self.handles {
            let _ = h.join();
        }
    }
}

/// Starts one control-loop thread per node id, each writing to `base_url`.
pub fn spawn_nodes(base_url: &str, ids: &[String], opts: LiveNodeOptions) -> LiveNodes {
    let stop = Arc::new(AtomicBool::new(false));
    let fallback = CropRegistry::default().threshold();
    let handles = ids
        .iter()
        .map(|id| {
            let stop = Arc::clone(&stop);
            let client = HttpCloudClient::new(base_url);
            let mut config = NodeConfig::new(id, node_key(id), fallback);
            config.loop_delay_ms = opts.loop_delay_ms;
            let mut io = LiveField::new(opts.scenario.clone());
            std::thread::spawn(move || {
                let mut node = NodeLoop::new(config, Epoch::unix());
                let sleeper = Arc::clone(&stop);
                run_loop(
                    &mut node,
                    &client,
                    &mut io,
                    &SystemClock,
                    |ms| sleep_unless_stopped(ms, &sleeper),
                    |_| !stop.load(Ordering::SeqCst),
                );
            })
        })
        .collect();
    LiveNodes { stop, handles }
}

fn sleep_unless_stopped(ms: u64, stop: &AtomicBool) {
    let step = Duration::from_millis(50);
    let mut left = Duration::from_millis(ms);
    while !left.is_zero() && !stop.load(Ordering::SeqCst) {
        let d = left.min(step);
        std::thread::sleep(d);
        left -= d;
    }
}
