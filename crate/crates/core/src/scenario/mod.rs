//! Deterministic end-to-end runs: weather timeline, soil and power
//! dynamics, node control loops, the in-process cloud and a polling reader.
//!
//! Scenario files are JSON. Every field except `name` has a default, so a
//! file only needs the parts it changes:
//!
//! ```json
//! {
//!   "name": "default_day",
//!   "duration_hours": 24,
//!   "tick_secs": 1,
//!   "seed": 1,
//!   "crop_name": "tomato",
//!   "automation_enabled": true,
//!   "weather": [
//!     {"start_hour": 0, "end_hour": 5, "condition": "ShadyDark"},
//!     {"start_hour": 5, "end_hour": 11, "condition": "Overcast"}
//!   ],
//!   "nodes": [{"id": "node-1", "x_m": 25, "y_m": 25, "initial_moisture": 37.5}]
//! }
//! ```
//!
//! Weather hours count from the start of the run; `start_hour` sets the
//! clock time of day at that point (air model, fixed schedule, timestamps). See [`ScenarioConfig`]
//! for the remaining fields.

mod compare;
mod engine;
mod export;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::default_catalogue;
use crate::cloud::VISIBILITY_DELAY_MS;
use crate::controller::DEFAULT_LOOP_DELAY_MS;
use crate::power::{SolarPanelModel, WeatherCondition};
use crate::sensors::{AirModel, LeafScene, SoilDynamics};

pub use compare::{compare_automation, summarize, ArmSummary, Comparison};
pub use engine::{run_scenario, run_scenario_with, ChannelAudit, NodeReport, Observation, SimReport, TraceRow};
pub use export::{export_comparison, export_report, ExportFormat};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("export failed: {0}")]
    Export(String),
    #[error("cloud: {0}")]
    Cloud(#[from] crate::cloud::CloudError),
}

impl From<csv::Error> for ScenarioError {
    fn from(e: csv::Error) -> Self {
        ScenarioError::Export(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherSegment {
    pub start_hour: f64,
    pub end_hour: f64,
    pub condition: WeatherCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePlacement {
    pub id: String,
    pub x_m: f64,
    pub y_m: f64,
    /// True soil moisture at the start, calibration units.
    #[serde(default = "default_initial_moisture")]
    pub initial_moisture: f64,
    #[serde(default = "default_initial_charge")]
    pub initial_charge: f64,
}

fn default_initial_moisture() -> f64 {
    37.5
}

fn default_initial_charge() -> f64 {
    0.5
}

/// Irrigation used when automation is off: fixed pump runs each day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedSchedule {
    /// Hours of the day at which the pump starts.
    pub start_hours: Vec<f64>,
    pub duration_minutes: f64,
}

impl Default for FixedSchedule {
    fn default() -> Self {
        Self {
            start_hours: vec![6.0, 11.0],
            duration_minutes: 45.0,
        }
    }
}

impl FixedSchedule {
    pub fn pump_on(&self, hour_of_day: f64) -> bool {
        let span = self.duration_minutes / 60.0;
        self.start_hours.iter().any(|&s| {
            let since = (hour_of_day - s).rem_euclid(24.0);
            since < span
        })
    }
}

/// Periodic leaf photos uploaded by every node, plus predictions when a
/// model is supplied to [`run_scenario_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafSchedule {
    pub period_hours: f64,
    pub scene: LeafScene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Clock time of day at which the run starts, in hours.
    pub start_hour: f64,
    pub duration_hours: f64,
    pub tick_secs: f64,
    pub seed: u64,
    pub weather: Vec<WeatherSegment>,
    pub field_size_m: [f64; 2],
    pub crop_name: String,
    pub nodes: Vec<NodePlacement>,
    pub soil: SoilDynamics,
    pub air: AirModel,
    pub panel: SolarPanelModel,
    pub battery_capacity_mah: f64,
    /// Node electronics draw, milliamps.
    pub node_load_ma: f64,
    pub automation_enabled: bool,
    pub fixed_schedule: FixedSchedule,
    pub loop_delay_ms: u64,
    pub visibility_delay_ms: u64,
    /// Cadence of the simulated dashboard reading each channel feed.
    pub reader_poll_secs: u64,
    /// Add DHT-class noise to temperature and humidity readings.
    pub dht_noise: bool,
    pub leaf_capture: Option<LeafSchedule>,
    /// Simulated seconds per wall-clock second; absent runs as fast as possible.
    pub speed: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default_day".into(),
            start_hour: 0.0,
            duration_hours: 24.0,
            tick_secs: 1.0,
            seed: 1,
            weather: default_day_weather(),
            field_size_m: [50.0, 50.0],
            crop_name: "tomato".into(),
            nodes: vec![NodePlacement {
                id: "node-1".into(),
                x_m: 25.0,
                y_m: 25.0,
                initial_moisture: default_initial_moisture(),
                initial_charge: default_initial_charge(),
            }],
            soil: SoilDynamics::default(),
            air: AirModel::default(),
            panel: SolarPanelModel::default(),
            battery_capacity_mah: 7000.0,
            node_load_ma: 120.0,
            automation_enabled: true,
            fixed_schedule: FixedSchedule::default(),
            loop_delay_ms: DEFAULT_LOOP_DELAY_MS,
            visibility_delay_ms: VISIBILITY_DELAY_MS,
            reader_poll_secs: 15,
            dht_noise: true,
            leaf_capture: None,
            speed: None,
        }
    }
}

/// Dark night, overcast morning and evening, full sun from 11:00 to 15:00.
pub fn default_day_weather() -> Vec<WeatherSegment> {
    use WeatherCondition::*;
    [
        (0.0, 5.0, ShadyDark),
        (5.0, 11.0, Overcast),
        (11.0, 15.0, Sunny),
        (15.0, 18.5, Overcast),
        (18.5, 24.0, ShadyDark),
    ]
    .into_iter()
    .map(|(start_hour, end_hour, condition)| WeatherSegment {
        start_hour,
        end_hour,
        condition,
    })
    .collect()
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn tick_ms(&self) -> u64 {
        (self.tick_secs * 1000.0).round() as u64
    }

    pub fn duration_ms(&self) -> u64 {
        (self.duration_hours * 3_600_000.0).round() as u64
    }

    pub fn tick_count(&self) -> u64 {
        self.duration_ms() / self.tick_ms()
    }

    /// Clock time of day `hours` after the start.
    pub fn hour_of_day(&self, hours: f64) -> f64 {
        (self.start_hour + hours).rem_euclid(24.0)
    }

    /// Condition in force `hours` after the start.
    pub fn condition_at(&self, hours: f64) -> WeatherCondition {
        self.weather
            .iter()
            .find(|s| hours >= s.start_hour && hours < s.end_hour)
            .or(self.weather.last())
            .map_or(WeatherCondition::ShadyDark, |s| s.condition)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Invalid(msg));
        if !(self.duration_hours.is_finite() && self.duration_hours >= 0.0) {
            return bad(format!(
                "duration_hours must be non-negative, got {}",
                self.duration_hours
            ));
        }
        if !(0.0..24.0).contains(&self.start_hour) {
            return bad(format!("start_hour must be within 0..24, got {}", self.start_hour));
        }
        if !(self.tick_secs.is_finite() && self.tick_secs > 0.0) || self.tick_ms() == 0 {
            return bad(format!("tick_secs must be at least 1 ms, got {}", self.tick_secs));
        }
        if (self.tick_secs * 1000.0 - self.tick_ms() as f64).abs() > 1e-6 {
            return bad("tick_secs must be a whole number of milliseconds".into());
        }
        if self.loop_delay_ms == 0 || self.tick_ms() > self.loop_delay_ms {
            return bad(format!(
                "tick ({} ms) must not exceed the controller loop delay ({} ms)",
                self.tick_ms(),
                self.loop_delay_ms
            ));
        }
        if !self.duration_ms().is_multiple_of(self.tick_ms()) {
            return bad("duration must be a whole number of ticks".into());
        }
        if self.reader_poll_secs == 0 {
            return bad("reader_poll_secs must be positive".into());
        }
        self.validate_weather()?;
        let [fw, fh] = self.field_size_m;
        if !(fw > 0.0 && fh > 0.0 && fw.is_finite() && fh.is_finite()) {
            return bad(format!("field size must be positive, got {fw} x {fh}"));
        }
        if self.nodes.is_empty() {
            return bad("at least one node is required".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.is_empty() || !n.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return bad(format!("node id {:?} must be non-empty [A-Za-z0-9_-]", n.id));
            }
            if self.nodes[..i].iter().any(|m| m.id == n.id) {
                return bad(format!("duplicate node id {:?}", n.id));
            }
            if !(0.0..=fw).contains(&n.x_m) || !(0.0..=fh).contains(&n.y_m) {
                return bad(format!("node {:?} lies outside the {fw} x {fh} m field", n.id));
            }
            if !(0.0..=100.0).contains(&n.initial_moisture) {
                return bad(format!("node {:?} initial moisture must be within 0..=100", n.id));
            }
            if !(0.0..=1.0).contains(&n.initial_charge) {
                return bad(format!("node {:?} initial charge must be within 0..=1", n.id));
            }
        }
        if !default_catalogue().iter().any(|c| c.crop_name == self.crop_name) {
            return bad(format!("unknown crop {:?}", self.crop_name));
        }
        let s = &self.soil;
        let rates = [
            s.pump_rate,
            s.et_sunny,
            s.et_moderately_sunny,
            s.et_overcast,
            s.et_shady_dark,
            s.et_min,
            s.et_max,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || s.et_min > s.et_max {
            return bad("soil rates must be finite, non-negative, with et_min <= et_max".into());
        }
        if !(self.battery_capacity_mah.is_finite() && self.battery_capacity_mah > 0.0) {
            return bad("battery capacity must be positive".into());
        }
        if !(self.node_load_ma.is_finite() && self.node_load_ma >= 0.0) {
            return bad("node load must be non-negative".into());
        }
        let sched = &self.fixed_schedule;
        if !(sched.duration_minutes.is_finite() && sched.duration_minutes >= 0.0)
            || sched.start_hours.iter().any(|h| !(0.0..24.0).contains(h))
        {
            return bad("fixed schedule needs start hours in 0..24 and a non-negative duration".into());
        }
        if self.speed.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
            return bad("speed must be positive".into());
        }
        if let Some(leaf) = &self.leaf_capture {
            if !(leaf.period_hours.is_finite() && leaf.period_hours > 0.0) {
                return bad("leaf capture period must be positive".into());
            }
            if let LeafScene::Diseased(c) = leaf.scene {
                if !crate::sensors::DiseaseCatalog::default().classes.contains_key(&c) {
                    return bad(format!("unknown disease class {c}"));
                }
            }
        }
        Ok(())
    }

    /// Segments must start at 0, be contiguous and reach the end of the run.
    fn validate_weather(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.weather.is_empty() {
            return if self.duration_hours == 0.0 {
                Ok(())
            } else {
                bad("weather timeline is empty".into())
            };
        }
        let mut expected = 0.0;
        for s in &self.weather {
            if !(s.start_hour.is_finite() && s.end_hour.is_finite()) || s.end_hour <= s.start_hour {
                return bad(format!(
                    "weather segment {}..{} is empty or reversed",
                    s.start_hour, s.end_hour
                ));
            }
            if s.start_hour != expected {
                return bad(format!(
                    "weather segment starts at {} but the previous one ends at {expected} (gap or overlap)",
                    s.start_hour
                ));
            }
            expected = s.end_hour;
        }
        if expected < self.duration_hours {
            return bad(format!(
                "weather timeline ends at {expected} h, before the {} h run ends",
                self.duration_hours
            ));
        }
        Ok(())
    }
}
