//! Ground-truth soil column and ambient air model driven by the simulator.

use serde::{Deserialize, Serialize};

use crate::power::WeatherCondition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoilColumnState {
    /// True moisture at the probe, in calibration units.
    pub moisture: f64,
    pub temperature_c: f64,
    pub humidity_pct: f64,
    pub depth_cm: f64,
}

impl Default for SoilColumnState {
    fn default() -> Self {
        Self {
            moisture: 40.0,
            temperature_c: 25.0,
            humidity_pct: 60.0,
            depth_cm: 30.0,
        }
    }
}

/// Moisture change over one step, split by cause.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MoistureFlux {
    pub inflow: f64,
    pub evapotranspiration: f64,
}

/// First-order water balance: pump inflow while the relay is closed, minus
/// evapotranspiration that depends on sky condition and air temperature.
/// Rates are in calibration units per minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoilDynamics {
    pub pump_rate: f64,
    pub et_sunny: f64,
    pub et_moderately_sunny: f64,
    pub et_overcast: f64,
    pub et_shady_dark: f64,
    /// Fractional change in evapotranspiration per °C away from `et_reference_c`.
    pub et_temperature_coeff: f64,
    pub et_reference_c: f64,
    pub et_min: f64,
    pub et_max: f64,
}

impl Default for SoilDynamics {
    fn default() -> Self {
        Self {
            pump_rate: 0.5,
            et_sunny: 0.04,
            et_moderately_sunny: 0.03,
            et_overcast: 0.025,
            et_shady_dark: 0.02,
            et_temperature_coeff: 0.02,
            et_reference_c: 25.0,
            et_min: 0.02,
            et_max: 0.12,
        }
    }
}

impl SoilDynamics {
    pub fn et_rate(&self, condition: WeatherCondition, temperature_c: f64) -> f64 {
        let base = match condition {
            WeatherCondition::Sunny => self.et_sunny,
            WeatherCondition::ModeratelySunny => self.et_moderately_sunny,
            WeatherCondition::Overcast => self.et_overcast,
            WeatherCondition::ShadyDark => self.et_shady_dark,
        };
        let factor = 1.0 + self.et_temperature_coeff * (temperature_c - self.et_reference_c);
        (base * factor).clamp(self.et_min, self.et_max)
    }

    /// Advances moisture by `dt_secs`. Moisture is bounded to [0, 100]; the
    /// returned flux is what was actually applied.
    pub fn step(
        &self,
        soil: &SoilColumnState,
        pump_on: bool,
        condition: WeatherCondition,
        dt_secs: f64,
    ) -> (SoilColumnState, MoistureFlux) {
        let minutes = dt_secs / 60.0;
        let inflow = if pump_on {
            (self.pump_rate * minutes).min(100.0 - soil.moisture).max(0.0)
        } else {
            0.0
        };
        let et = (self.et_rate(condition, soil.temperature_c) * minutes)
            .min(soil.moisture + inflow)
            .max(0.0);
        let next = SoilColumnState {
            moisture: soil.moisture + inflow - et,
            ..*soil
        };
        (
            next,
            MoistureFlux {
                inflow,
                evapotranspiration: et,
            },
        )
    }
}

/// Diurnal air temperature and relative humidity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AirModel {
    pub mean_temperature_c: f64,
    pub temperature_amplitude_c: f64,
    pub peak_hour: f64,
    pub mean_humidity_pct: f64,
    pub humidity_amplitude_pct: f64,
}

impl Default for AirModel {
    fn default() -> Self {
        Self {
            mean_temperature_c: 26.0,
            temperature_amplitude_c: 6.0,
            peak_hour: 14.0,
            mean_humidity_pct: 60.0,
            humidity_amplitude_pct: 15.0,
        }
    }
}

impl AirModel {
    /// (temperature °C, humidity %) at a given hour of day.
    pub fn at(&self, hour_of_day: f64) -> (f64, f64) {
        let phase = (hour_of_day - self.peak_hour) / 24.0 * std::f64::consts::TAU;
        let c = phase.cos();
        let t = self.mean_temperature_c + self.temperature_amplitude_c * c;
        let h = (self.mean_humidity_pct - self.humidity_amplitude_pct * c).clamp(0.0, 100.0);
        (t, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pump_inflow_and_et_balance() {
        let d = SoilDynamics::default();
        let s = SoilColumnState::default();
        let (next, flux) = d.step(&s, true, WeatherCondition::Overcast, 60.0);
        assert_eq!(flux.inflow, 0.5);
        assert!((next.moisture - (s.moisture + flux.inflow - flux.evapotranspiration)).abs() < 1e-12);
        let (dry, flux) = d.step(&s, false, WeatherCondition::Sunny, 60.0);
        assert_eq!(flux.inflow, 0.0);
        assert!(dry.moisture < s.moisture);
    }

    #[test]
    fn et_rate_bounded() {
        let d = SoilDynamics::default();
        for c in WeatherCondition::ALL {
            for t in [-20.0, 0.0, 25.0, 45.0, 200.0] {
                let r = d.et_rate(c, t);
                assert!((0.02..=0.12).contains(&r), "{c} {t} {r}");
            }
        }
        assert!(d.et_rate(WeatherCondition::Sunny, 30.0) > d.et_rate(WeatherCondition::ShadyDark, 30.0));
    }

    #[test]
    fn moisture_stays_in_range() {
        let d = SoilDynamics::default();
        let wet = SoilColumnState {
            moisture: 99.9,
            ..Default::default()
        };
        let (next, _) = d.step(&wet, true, WeatherCondition::ShadyDark, 3600.0);
        assert!(next.moisture <= 100.0);
        let dry = SoilColumnState {
            moisture: 0.01,
            ..Default::default()
        };
        let (next, flux) = d.step(&dry, false, WeatherCondition::Sunny, 3600.0);
        assert_eq!(next.moisture, 0.0);
        assert_eq!(flux.evapotranspiration, 0.01);
    }

    #[test]
    fn air_peaks_at_peak_hour() {
        let air = AirModel::default();
        let (t_peak, h_peak) = air.at(14.0);
        let (t_night, h_night) = air.at(2.0);
        assert_eq!(t_peak, 32.0);
        assert!(t_night < t_peak && h_night > h_peak);
    }
}
