//! Threshold irrigation: a pure hysteresis step plus the per-node loop that
//! senses, fetches the crop threshold, actuates the relay and reports.

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Epoch, SimTime};
use crate::cloud::{CloudClient, CloudError, Fields, TelemetryWrite, Threshold, WriteOutcome};
use crate::power::PowerState;
use crate::sensors::{AnalogReading, DhtReading};

pub const DEFAULT_LOOP_DELAY_MS: u64 = 9_000;
/// Release offset used when only a threshold is known.
pub const DEFAULT_RELEASE_OFFSET: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("release {release} is below threshold {threshold}")]
    InvertedBand { threshold: f64, release: f64 },
    #[error("loop delay must be positive")]
    ZeroDelay,
    #[error("threshold values must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub threshold_sm: f64,
    pub release_sm: f64,
    pub loop_delay_ms: u64,
}

impl ControllerConfig {
    pub fn new(threshold_sm: f64, release_sm: f64, loop_delay_ms: u64) -> Result<Self, ControllerError> {
        if !(threshold_sm.is_finite() && release_sm.is_finite()) {
            return Err(ControllerError::NonFinite);
        }
        if release_sm < threshold_sm {
            return Err(ControllerError::InvertedBand {
                threshold: threshold_sm,
                release: release_sm,
            });
        }
        if loop_delay_ms == 0 {
            return Err(ControllerError::ZeroDelay);
        }
        Ok(Self {
            threshold_sm,
            release_sm,
            loop_delay_ms,
        })
    }

    pub fn with_threshold(threshold_sm: f64) -> Result<Self, ControllerError> {
        Self::new(
            threshold_sm,
            threshold_sm + DEFAULT_RELEASE_OFFSET,
            DEFAULT_LOOP_DELAY_MS,
        )
    }

    pub fn from_threshold(t: Threshold, loop_delay_ms: u64) -> Result<Self, ControllerError> {
        Self::new(t.threshold_sm, t.release_sm, loop_delay_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub relay_on: bool,
    pub last_event: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PumpAction {
    PumpOn,
    PumpOff,
}

impl PumpAction {
    pub fn as_str(self) -> &'static str {
        match self {
            PumpAction::PumpOn => "PumpOn",
            PumpAction::PumpOff => "PumpOff",
        }
    }

    /// Wire value on the event channel.
    pub fn code(self) -> f64 {
        match self {
            PumpAction::PumpOn => 1.0,
            PumpAction::PumpOff => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrigationEvent {
    /// ISO-8601, second resolution.
    pub timestamp: String,
    pub at: SimTime,
    pub action: PumpAction,
    pub sm_at_event: f64,
}

/// Switches the relay on at or below the threshold and off above the
/// release level; anything in between holds the current state.
pub fn control_step(
    current_sm: f64,
    cfg: &ControllerConfig,
    state: &ControllerState,
    now: SimTime,
    epoch: &Epoch,
) -> (ControllerState, Option<IrrigationEvent>) {
    let action = if !state.relay_on && current_sm <= cfg.threshold_sm {
        PumpAction::PumpOn
    } else if state.relay_on && current_sm > cfg.release_sm {
        PumpAction::PumpOff
    } else {
        return (*state, None);
    };
    let next = ControllerState {
        relay_on: action == PumpAction::PumpOn,
        last_event: Some(now),
    };
    let event = IrrigationEvent {
        timestamp: epoch.format(now),
        at: now,
        action,
        sm_at_event: current_sm,
    };
    (next, Some(event))
}

/// One sensing pass: the probe and the DHT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub adc: AnalogReading,
    pub smps: f64,
    pub dht: DhtReading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub at: SimTime,
    pub reason: String,
}

/// Channel names and credentials for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: String,
    pub write_key: String,
    pub loop_delay_ms: u64,
    /// Used until the first successful threshold read.
    pub fallback: Threshold,
}

impl NodeConfig {
    pub fn new(node_id: impl Into<String>, write_key: impl Into<String>, fallback: Threshold) -> Self {
        Self {
            node_id: node_id.into(),
            write_key: write_key.into(),
            loop_delay_ms: DEFAULT_LOOP_DELAY_MS,
            fallback,
        }
    }

    pub fn telemetry_channel(&self) -> String {
        self.node_id.clone()
    }

    pub fn events_channel(&self) -> String {
        events_channel(&self.node_id)
    }
}

pub fn events_channel(node_id: &str) -> String {
    format!("{node_id}-events")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WriteCounts {
    pub accepted: u64,
    pub rate_limited: u64,
    pub unauthorized: u64,
    pub failed: u64,
}

impl WriteCounts {
    fn count(&mut self, outcome: &Result<WriteOutcome, CloudError>) {
        match outcome {
            Ok(WriteOutcome::Accepted { .. }) => self.accepted += 1,
            Ok(WriteOutcome::RateLimited) => self.rate_limited += 1,
            Ok(WriteOutcome::Unauthorized) => self.unauthorized += 1,
            Err(_) => self.failed += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Iteration {
    /// Rail is down; nothing happens and state is kept.
    Suspended,
    /// Called again before the loop delay elapsed.
    NotDue,
    /// Sensor read failed; the iteration is skipped.
    Fault(FaultRecord),
    Ran(IterationRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub at: SimTime,
    pub threshold: Threshold,
    pub stale_threshold: bool,
    pub telemetry: TelemetryWrite,
    pub telemetry_outcome: Result<WriteOutcome, CloudError>,
    pub event: Option<IrrigationEvent>,
}

/// State of one node's control loop across iterations.
#[derive(Debug, Clone)]
pub struct NodeLoop {
    pub config: NodeConfig,
    pub epoch: Epoch,
    pub state: ControllerState,
    cached: Option<Threshold>,
    last_run: Option<SimTime>,
    pub events: Vec<IrrigationEvent>,
    pub faults: Vec<FaultRecord>,
    pub telemetry_writes: WriteCounts,
    pub event_writes: WriteCounts,
    pub iterations: u64,
}

impl NodeLoop {
    pub fn new(config: NodeConfig, epoch: Epoch) -> Self {
        Self {
            config,
            epoch,
            state: ControllerState::default(),
            cached: None,
            last_run: None,
            events: Vec::new(),
            faults: Vec::new(),
            telemetry_writes: WriteCounts::default(),
            event_writes: WriteCounts::default(),
            iterations: 0,
        }
    }

    pub fn relay_on(&self) -> bool {
        self.state.relay_on
    }

    pub fn is_due(&self, now: SimTime) -> bool {
        self.last_run
            .is_none_or(|last| now.saturating_sub(last) >= self.config.loop_delay_ms)
    }

    /// Reads the crop band from the cloud, falling back to the last good value.
    fn threshold(&mut self, client: &impl CloudClient) -> (Threshold, bool) {
        let fresh = client
            .threshold()
            .ok()
            .filter(|t| ControllerConfig::from_threshold(*t, self.config.loop_delay_ms).is_ok());
        match fresh {
            Some(t) => {
                self.cached = Some(t);
                (t, false)
            }
            None => (self.cached.unwrap_or(self.config.fallback), true),
        }
    }

    pub fn iteration(
        &mut self,
        client: &impl CloudClient,
        now: SimTime,
        power: &PowerState,
        reading: Result<SensorReading, String>,
    ) -> Iteration {
        if !power.rail_on {
            return Iteration::Suspended;
        }
        if !self.is_due(now) {
            return Iteration::NotDue;
        }
        self.last_run = Some(now);
        let reading = match reading {
            Ok(r) => r,
            Err(reason) => {
                tracing::warn!(node = %self.config.node_id, %reason, "sensor fault, skipping iteration");
                let fault = FaultRecord { at: now, reason };
                self.faults.push(fault.clone());
                return Iteration::Fault(fault);
            }
        };
        self.iterations += 1;
        let (threshold, stale) = self.threshold(client);
        let cfg = ControllerConfig::from_threshold(threshold, self.config.loop_delay_ms)
            .expect("thresholds are validated before use");
        let (next, event) = control_step(reading.smps, &cfg, &self.state, now, &self.epoch);
        self.state = next;

        let telemetry = TelemetryWrite {
            fields: Fields::from_slice(&[
                Some(reading.smps),
                Some(reading.dht.temperature_c),
                Some(reading.dht.humidity_pct),
                Some(if self.state.relay_on { 1.0 } else { 0.0 }),
                Some(power.panel_voltage),
                Some(power.battery.charge_fraction),
            ]),
            status: None,
            stale_threshold: stale,
        };
        let telemetry_outcome = client.write(&self.config.telemetry_channel(), &self.config.write_key, &telemetry);
        self.telemetry_writes.count(&telemetry_outcome);

        if let Some(e) = &event {
            let write = TelemetryWrite {
                fields: Fields::from_slice(&[Some(e.action.code()), Some(e.sm_at_event)]),
                status: Some(e.timestamp.clone()),
                stale_threshold: stale,
            };
            let outcome = client.write(&self.config.events_channel(), &self.config.write_key, &write);
            self.event_writes.count(&outcome);
            self.events.push(e.clone());
        }
        Iteration::Ran(IterationRecord {
            at: now,
            threshold,
            stale_threshold: stale,
            telemetry,
            telemetry_outcome,
            event,
        })
    }
}

/// Hardware seen by a running node.
pub trait NodeIo {
    fn sense(&mut self, now: SimTime) -> Result<SensorReading, String>;
    fn power(&mut self, now: SimTime) -> PowerState;
    fn set_relay(&mut self, _on: bool) {}
}

/// Runs the loop until `keep_running` returns false: iterate, drive the
/// relay, then `sleep` for the loop delay. `sleep` advances a simulated
/// clock or blocks in real time.
pub fn run_loop(
    node: &mut NodeLoop,
    client: &impl CloudClient,
    io: &mut impl NodeIo,
    clock: &dyn Clock,
    mut sleep: impl FnMut(u64),
    mut keep_running: impl FnMut(&NodeLoop) -> bool,
) {
    while keep_running(node) {
        let now = clock.now();
        let power = io.power(now);
        let reading = if power.rail_on {
            io.sense(now)
        } else {
            Err("unpowered".into())
        };
        if let Iteration::Ran(_) = node.iteration(client, now, &power, reading) {
            io.set_relay(node.relay_on());
        }
        sleep(node.config.loop_delay_ms);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::cloud::{ChannelConfig, CloudStore};
    use crate::power::BatteryState;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn cfg() -> ControllerConfig {
        ControllerConfig::new(30.0, 35.0, DEFAULT_LOOP_DELAY_MS).unwrap()
    }

    fn off() -> ControllerState {
        ControllerState::default()
    }

    fn on() -> ControllerState {
        ControllerState {
            relay_on: true,
            last_event: None,
        }
    }

    #[test]
    fn below_threshold_switches_on() {
        let (s, e) = control_step(29.0, &cfg(), &off(), SimTime::from_secs(60), &Epoch::default());
        assert!(s.relay_on);
        let e = e.unwrap();
        assert_eq!(e.action, PumpAction::PumpOn);
        assert_eq!(e.sm_at_event, 29.0);
        assert_eq!(e.timestamp, "2021-03-01T00:01:00Z");
    }

    #[test]
    fn above_release_switches_off() {
        let (s, e) = control_step(36.0, &cfg(), &on(), SimTime::ZERO, &Epoch::default());
        assert!(!s.relay_on);
        assert_eq!(e.unwrap().action, PumpAction::PumpOff);
    }

    #[test]
    fn dead_band_holds() {
        for state in [on(), off()] {
            for sm in [30.0, 32.0, 35.0] {
                let (s, e) = control_step(sm, &cfg(), &state, SimTime::ZERO, &Epoch::default());
                if sm == 30.0 && !state.relay_on {
                    continue;
                }
                assert_eq!(s, state);
                assert!(e.is_none());
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ControllerConfig::new(30.0, 29.0, 9000).is_err());
        assert!(ControllerConfig::new(30.0, 30.0, 9000).is_ok());
        assert!(ControllerConfig::new(30.0, 35.0, 0).is_err());
        assert_eq!(ControllerConfig::with_threshold(30.0).unwrap().release_sm, 35.0);
    }

    proptest! {
        #[test]
        fn events_alternate_and_respect_band(trace in prop::collection::vec(0.0f64..100.0, 1..200)) {
            let c = cfg();
            let mut state = off();
            let mut last: Option<PumpAction> = None;
            for (i, sm) in trace.iter().enumerate() {
                let (next, event) = control_step(*sm, &c, &state, SimTime::from_secs(9 * i as u64), &Epoch::default());
                if let Some(e) = event {
                    prop_assert_ne!(Some(e.action), last);
                    match e.action {
                        PumpAction::PumpOn => prop_assert!(*sm <= c.threshold_sm),
                        PumpAction::PumpOff => prop_assert!(*sm > c.release_sm),
                    }
                    last = Some(e.action);
                } else {
                    prop_assert_eq!(next.relay_on, state.relay_on);
                }
                prop_assert_eq!(next.relay_on, last == Some(PumpAction::PumpOn));
                state = next;
            }
        }

        #[test]
        fn replay_is_identical(trace in prop::collection::vec(20.0f64..45.0, 1..100)) {
            let run = || {
                let mut state = off();
                let mut events = Vec::new();
                for (i, sm) in trace.iter().enumerate() {
                    let (next, e) = control_step(*sm, &cfg(), &state, SimTime::from_secs(9 * i as u64), &Epoch::default());
                    state = next;
                    events.extend(e);
                }
                events
            };
            prop_assert_eq!(run(), run());
        }
    }

    struct FakeIo {
        smps: f64,
        power: PowerState,
        fail: bool,
    }

    impl NodeIo for FakeIo {
        fn sense(&mut self, _now: SimTime) -> Result<SensorReading, String> {
            if self.fail {
                return Err("probe disconnected".into());
            }
            Ok(SensorReading {
                adc: AnalogReading::new(500).unwrap(),
                smps: self.smps,
                dht: DhtReading {
                    temperature_c: 25.0,
                    humidity_pct: 60.0,
                },
            })
        }

        fn power(&mut self, _now: SimTime) -> PowerState {
            self.power
        }
    }

    fn setup() -> (Arc<SimClock>, CloudStore, NodeLoop) {
        let clock = Arc::new(SimClock::new());
        let store = CloudStore::in_memory(clock.clone());
        store.create_channel(ChannelConfig::new("n1", "k")).unwrap();
        store.create_channel(ChannelConfig::new("n1-events", "k")).unwrap();
        let node = NodeLoop::new(NodeConfig::new("n1", "k", store.get_threshold()), Epoch::default());
        (clock, store, node)
    }

    fn powered() -> PowerState {
        PowerState::initial(BatteryState::new(7000.0, 0.5))
    }

    fn run_for(node: &mut NodeLoop, store: &CloudStore, io: &mut FakeIo, clock: &Arc<SimClock>, ms: u64) {
        let end = clock.now().plus_millis(ms);
        let c = clock.clone();
        run_loop(
            node,
            store,
            io,
            clock.as_ref(),
            |d| c.advance_millis(d),
            |_| clock.now() < end,
        );
    }

    #[test]
    fn one_hour_is_four_hundred_records() {
        let (clock, store, mut node) = setup();
        let mut io = FakeIo {
            smps: 40.0,
            power: powered(),
            fail: false,
        };
        run_for(&mut node, &store, &mut io, &clock, 3_600_000);
        assert_eq!(node.iterations, 400);
        let w = node.telemetry_writes;
        assert_eq!(w.accepted + w.rate_limited, 400);
        assert_eq!(w.accepted, 200);
    }

    #[test]
    fn unpowered_node_is_silent() {
        let (clock, store, mut node) = setup();
        let mut dead = powered();
        dead.rail_on = false;
        let mut io = FakeIo {
            smps: 10.0,
            power: dead,
            fail: false,
        };
        run_for(&mut node, &store, &mut io, &clock, 3_600_000);
        assert_eq!(node.iterations, 0);
        assert_eq!(store.channel_stats("n1").unwrap().accepted, 0);
        assert!(!node.relay_on());
    }

    #[test]
    fn threshold_change_is_used_next_iteration() {
        let (clock, store, mut node) = setup();
        let reading = |smps| {
            Ok(SensorReading {
                adc: AnalogReading::new(500).unwrap(),
                smps,
                dht: DhtReading {
                    temperature_c: 25.0,
                    humidity_pct: 60.0,
                },
            })
        };
        let r = node.iteration(&store, clock.now(), &powered(), reading(31.0));
        assert!(matches!(r, Iteration::Ran(ref rec) if rec.event.is_none()));
        store.select_crop("potato").unwrap();
        clock.advance_millis(DEFAULT_LOOP_DELAY_MS);
        let Iteration::Ran(rec) = node.iteration(&store, clock.now(), &powered(), reading(31.0)) else {
            panic!("expected a run");
        };
        assert_eq!(rec.threshold.threshold_sm, 32.0);
        assert_eq!(rec.event.unwrap().action, PumpAction::PumpOn);
    }

    #[test]
    fn not_due_before_loop_delay() {
        let (clock, store, mut node) = setup();
        let mut io = FakeIo {
            smps: 40.0,
            power: powered(),
            fail: false,
        };
        let reading = io.sense(clock.now());
        assert!(matches!(
            node.iteration(&store, clock.now(), &powered(), reading.clone()),
            Iteration::Ran(_)
        ));
        clock.advance_millis(DEFAULT_LOOP_DELAY_MS - 1);
        assert_eq!(
            node.iteration(&store, clock.now(), &powered(), reading),
            Iteration::NotDue
        );
    }

    #[test]
    fn sensor_fault_skips_and_logs() {
        let (clock, store, mut node) = setup();
        let mut io = FakeIo {
            smps: 10.0,
            power: powered(),
            fail: true,
        };
        run_for(&mut node, &store, &mut io, &clock, 90_000);
        assert_eq!(node.faults.len(), 10);
        assert_eq!(node.iterations, 0);
        assert!(!node.relay_on());
    }

    struct Offline<'a>(&'a CloudStore);

    impl CloudClient for Offline<'_> {
        fn write(&self, c: &str, k: &str, w: &TelemetryWrite) -> Result<WriteOutcome, CloudError> {
            self.0.write(c, k, w)
        }
        fn feed(&self, c: &str, n: usize) -> Result<Vec<crate::cloud::TelemetryRecord>, CloudError> {
            self.0.feed(c, n)
        }
        fn threshold(&self) -> Result<Threshold, CloudError> {
            Err(CloudError::Unavailable("link down".into()))
        }
        fn put_image(&self, n: &str, i: &crate::sensors::LeafImage) -> Result<u64, CloudError> {
            CloudClient::put_image(self.0, n, i)
        }
        fn latest_image(&self, n: &str) -> Result<crate::cloud::ImageRecord, CloudError> {
            self.0.latest_image(n)
        }
        fn put_prediction(&self, n: &str, p: &crate::cloud::NewPrediction) -> Result<u64, CloudError> {
            self.0.put_prediction(n, p)
        }
        fn latest_prediction(&self, n: &str) -> Result<crate::cloud::PredictionRecord, CloudError> {
            self.0.latest_prediction(n)
        }
    }

    #[test]
    fn cloud_outage_uses_cached_threshold_and_flags_stale() {
        let (clock, store, mut node) = setup();
        let mut io = FakeIo {
            smps: 33.0,
            power: powered(),
            fail: false,
        };
        store.select_crop("potato").unwrap();
        let reading = io.sense(clock.now());
        node.iteration(&store, clock.now(), &powered(), reading.clone());
        store.select_crop("wheat").unwrap();
        clock.advance_millis(20_000);
        let Iteration::Ran(rec) = node.iteration(&Offline(&store), clock.now(), &powered(), reading) else {
            panic!("expected a run");
        };
        assert!(rec.stale_threshold);
        assert!(rec.telemetry.stale_threshold);
        assert_eq!(rec.threshold.threshold_sm, 32.0);
        let last = store.channel_records("n1").unwrap().pop().unwrap();
        assert!(last.stale_threshold);
    }

    #[test]
    fn events_reach_the_event_channel() {
        let (clock, store, mut node) = setup();
        let mut io = FakeIo {
            smps: 20.0,
            power: powered(),
            fail: false,
        };
        run_for(&mut node, &store, &mut io, &clock, 30_000);
        io.smps = 60.0;
        run_for(&mut node, &store, &mut io, &clock, 30_000);
        let events = store.channel_records("n1-events").unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].fields.field1, Some(1.0));
        assert_eq!(events[0].fields.field2, Some(20.0));
        assert_eq!(events[0].status.as_deref(), Some("2021-03-01T00:00:00Z"));
        assert_eq!(events[1].fields.field1, Some(0.0));
        assert_eq!(node.events.len(), 2);
    }
}
