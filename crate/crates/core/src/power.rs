//! Solar panel, diode charge gate, backup battery and 3.3 V regulator.
//!
//! Every function here is a pure state transition; a node's power state is
//! advanced by [`step_power`] once per simulation tick.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Minimum panel voltage at which the diode gate lets current into the 12 V battery.
pub const CHARGE_GATE_VOLTS: f64 = 12.9;
/// Regulated rail voltage feeding the microcontroller and sensors.
pub const RAIL_VOLTS: f64 = 3.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeatherCondition {
    Sunny,
    ModeratelySunny,
    Overcast,
    ShadyDark,
}

impl WeatherCondition {
    pub const ALL: [WeatherCondition; 4] = [
        WeatherCondition::Sunny,
        WeatherCondition::ModeratelySunny,
        WeatherCondition::Overcast,
        WeatherCondition::ShadyDark,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeatherCondition::Sunny => "sunny",
            WeatherCondition::ModeratelySunny => "moderately_sunny",
            WeatherCondition::Overcast => "overcast",
            WeatherCondition::ShadyDark => "shady_dark",
        }
    }
}

impl fmt::Display for WeatherCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Output voltage of one panel per weather condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolarPanelModel {
    pub rated_voltage: f64,
    pub rated_power: f64,
    pub sunny_volts: f64,
    pub moderately_sunny_volts: f64,
    pub overcast_volts: f64,
    pub shady_dark_volts: f64,
}

impl Default for SolarPanelModel {
    /// 12 V / 15 W panel with the field-measured output per condition.
    fn default() -> Self {
        Self {
            rated_voltage: 12.0,
            rated_power: 15.0,
            sunny_volts: 16.3,
            moderately_sunny_volts: 14.4,
            overcast_volts: 8.33,
            shady_dark_volts: 0.89,
        }
    }
}

impl SolarPanelModel {
    /// Current the panel can push into a 12 V battery at full rating, in milliamps.
    pub fn rated_current_ma(&self, battery_volts: f64) -> f64 {
        self.rated_power / battery_volts * 1000.0
    }
}

pub fn panel_voltage(model: &SolarPanelModel, condition: WeatherCondition) -> f64 {
    match condition {
        WeatherCondition::Sunny => model.sunny_volts,
        WeatherCondition::ModeratelySunny => model.moderately_sunny_volts,
        WeatherCondition::Overcast => model.overcast_volts,
        WeatherCondition::ShadyDark => model.shady_dark_volts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub nominal_voltage: f64,
    pub capacity_mah: f64,
    pub charge_fraction: f64,
}

impl BatteryState {
    /// A 12 V battery; only ratios matter to the gate logic, 7 Ah is a common sealed unit.
    pub fn new(capacity_mah: f64, charge_fraction: f64) -> Self {
        Self {
            nominal_voltage: 12.0,
            capacity_mah: capacity_mah.max(f64::MIN_POSITIVE),
            charge_fraction: charge_fraction.clamp(0.0, 1.0),
        }
    }

    pub fn charge_mah(&self) -> f64 {
        self.charge_fraction * self.capacity_mah
    }
}

impl Default for BatteryState {
    fn default() -> Self {
        Self::new(7000.0, 0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PowerSource {
    Panel,
    Battery,
    None,
}

impl PowerSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PowerSource::Panel => "panel",
            PowerSource::Battery => "battery",
            PowerSource::None => "none",
        }
    }
}

impl fmt::Display for PowerSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerState {
    pub panel_voltage: f64,
    pub battery: BatteryState,
    pub rail_on: bool,
    pub rail_voltage: f64,
    pub source: PowerSource,
}

impl PowerState {
    /// State before the first step: panel dark, rail fed from the battery if it holds charge.
    pub fn initial(battery: BatteryState) -> Self {
        let rail_on = battery.charge_fraction > 0.0;
        Self {
            panel_voltage: 0.0,
            battery,
            rail_on,
            rail_voltage: if rail_on { RAIL_VOLTS } else { 0.0 },
            source: if rail_on {
                PowerSource::Battery
            } else {
                PowerSource::None
            },
        }
    }
}

/// Charge moved in or out of the battery during one step, in milliamp-hours.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyFlow {
    pub charged_mah: f64,
    pub drawn_mah: f64,
}

/// Returns the regulated rail voltage, or `None` when the input is below dropout.
pub fn regulate(input_voltage: f64) -> Option<f64> {
    (input_voltage >= RAIL_VOLTS).then_some(RAIL_VOLTS)
}

/// Advances the power state by `dt_secs` seconds under a constant load.
pub fn step_power(
    panel: &SolarPanelModel,
    state: &PowerState,
    condition: WeatherCondition,
    load_current_ma: f64,
    dt_secs: f64,
) -> PowerState {
    step_power_with_flow(panel, state, condition, load_current_ma, dt_secs).0
}

/// Same as [`step_power`], also reporting the applied battery flow.
pub fn step_power_with_flow(
    panel: &SolarPanelModel,
    state: &PowerState,
    condition: WeatherCondition,
    load_current_ma: f64,
    dt_secs: f64,
) -> (PowerState, EnergyFlow) {
    let load = load_current_ma.max(0.0);
    let dt_hours = dt_secs.max(0.0) / 3600.0;
    let pv = panel_voltage(panel, condition);
    let mut battery = state.battery;
    let mut flow = EnergyFlow::default();

    let source = if pv >= CHARGE_GATE_VOLTS {
        let charge_ma = (panel.rated_current_ma(battery.nominal_voltage) - load).max(0.0);
        let room = battery.capacity_mah - battery.charge_mah();
        let added = (charge_ma * dt_hours).min(room).max(0.0);
        battery.charge_fraction = ((battery.charge_mah() + added) / battery.capacity_mah).min(1.0);
        flow.charged_mah = added;
        PowerSource::Panel
    } else if regulate(pv).is_some() {
        PowerSource::Panel
    } else if battery.charge_fraction > 0.0 {
        let drawn = (load * dt_hours).min(battery.charge_mah());
        battery.charge_fraction = ((battery.charge_mah() - drawn) / battery.capacity_mah).max(0.0);
        flow.drawn_mah = drawn;
        PowerSource::Battery
    } else {
        PowerSource::None
    };

    let rail_on = source != PowerSource::None;
    let next = PowerState {
        panel_voltage: pv,
        battery,
        rail_on,
        rail_voltage: if rail_on { RAIL_VOLTS } else { 0.0 },
        source,
    };
    (next, flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(charge: f64) -> PowerState {
        PowerState::initial(BatteryState::new(7000.0, charge))
    }

    #[test]
    fn panel_voltage_matches_measured_table() {
        let m = SolarPanelModel::default();
        assert_eq!(panel_voltage(&m, WeatherCondition::Sunny), 16.3);
        assert_eq!(panel_voltage(&m, WeatherCondition::ModeratelySunny), 14.4);
        assert_eq!(panel_voltage(&m, WeatherCondition::Overcast), 8.33);
        assert_eq!(panel_voltage(&m, WeatherCondition::ShadyDark), 0.89);
    }

    #[test]
    fn regulator_dropout() {
        assert_eq!(regulate(16.3), Some(3.3));
        assert_eq!(regulate(3.3), Some(3.3));
        assert_eq!(regulate(0.89), None);
    }

    #[test]
    fn sunny_hour_charges_battery() {
        let m = SolarPanelModel::default();
        let next = step_power(&m, &state(0.5), WeatherCondition::Sunny, 120.0, 3600.0);
        assert_eq!(next.source, PowerSource::Panel);
        assert!(next.battery.charge_fraction > 0.5);
        assert!(next.rail_on);
        assert_eq!(next.rail_voltage, 3.3);
    }

    #[test]
    fn dark_runs_on_battery() {
        let m = SolarPanelModel::default();
        let next = step_power(&m, &state(0.5), WeatherCondition::ShadyDark, 120.0, 3600.0);
        assert_eq!(next.source, PowerSource::Battery);
        assert!(next.battery.charge_fraction < 0.5);
        assert!(next.rail_on);
    }

    #[test]
    fn dark_with_empty_battery_drops_rail() {
        let m = SolarPanelModel::default();
        let next = step_power(&m, &state(0.0), WeatherCondition::ShadyDark, 120.0, 1.0);
        assert_eq!(next.source, PowerSource::None);
        assert!(!next.rail_on);
        assert_eq!(next.rail_voltage, 0.0);
    }

    #[test]
    fn overcast_powers_without_charging() {
        let m = SolarPanelModel::default();
        let next = step_power(&m, &state(0.3), WeatherCondition::Overcast, 120.0, 3600.0);
        assert_eq!(next.source, PowerSource::Panel);
        assert_eq!(next.battery.charge_fraction, 0.3);
    }

    #[test]
    fn charge_caps_at_full() {
        let m = SolarPanelModel::default();
        let next = step_power(&m, &state(0.999), WeatherCondition::Sunny, 0.0, 36_000.0);
        assert_eq!(next.battery.charge_fraction, 1.0);
    }

    #[test]
    fn load_above_panel_rating_gives_zero_charge_current() {
        let m = SolarPanelModel::default();
        let next = step_power(&m, &state(0.4), WeatherCondition::Sunny, 5000.0, 3600.0);
        assert_eq!(next.battery.charge_fraction, 0.4);
        assert_eq!(next.source, PowerSource::Panel);
    }

    fn condition() -> impl Strategy<Value = WeatherCondition> {
        prop::sample::select(WeatherCondition::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn gate_and_diode_properties(
            start in 0.0f64..=1.0,
            steps in prop::collection::vec((condition(), 0.0f64..400.0, 0.1f64..7200.0), 1..60),
        ) {
            let m = SolarPanelModel::default();
            let mut s = state(start);
            let start_mah = s.battery.charge_mah();
            let (mut added, mut drawn) = (0.0, 0.0);
            for (cond, load, dt) in steps {
                let before = s.battery.charge_fraction;
                let (next, flow) = step_power_with_flow(&m, &s, cond, load, dt);
                let pv = panel_voltage(&m, cond);
                if pv < CHARGE_GATE_VOLTS {
                    prop_assert!(next.battery.charge_fraction <= before);
                }
                if next.source == PowerSource::Panel {
                    prop_assert!(next.battery.charge_fraction >= before);
                }
                if pv >= RAIL_VOLTS || before > 0.0 {
                    prop_assert!(next.rail_on);
                }
                if next.rail_on {
                    prop_assert_eq!(next.rail_voltage, RAIL_VOLTS);
                }
                prop_assert!((0.0..=1.0).contains(&next.battery.charge_fraction));
                added += flow.charged_mah;
                drawn += flow.drawn_mah;
                s = next;
            }
            let net = s.battery.charge_mah() - start_mah;
            let scale = s.battery.capacity_mah;
            prop_assert!(((added - drawn) - net).abs() <= 1e-9 * scale);
        }
    }
}
