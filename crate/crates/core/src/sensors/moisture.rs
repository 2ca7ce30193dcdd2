//! Soil-moisture probe calibration.
//!
//! Readings and controller thresholds share the probe's calibration unit
//! (`Smps`), which is what [`analog_to_moisture`] returns.

use serde::{Deserialize, Serialize};

use super::SensorError;

pub const ADC_MAX: u16 = 1023;

/// One 10-bit ADC count from the probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct AnalogReading(u16);

impl AnalogReading {
    pub fn new(count: u16) -> Result<Self, SensorError> {
        if count > ADC_MAX {
            return Err(SensorError::AdcOutOfRange(count as i64));
        }
        Ok(Self(count))
    }

    pub fn count(self) -> u16 {
        self.0
    }
}

impl TryFrom<u16> for AnalogReading {
    type Error = SensorError;

    fn try_from(value: u16) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AnalogReading> for u16 {
    fn from(r: AnalogReading) -> u16 {
        r.0
    }
}

/// `Smps = k² (slope · MV + intercept)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoistureCalibration {
    pub slope: f64,
    pub intercept: f64,
    pub k: f64,
    k_squared: f64,
}

impl Default for MoistureCalibration {
    /// `k` is the rounded published value, not `std::f64::consts::E`.
    #[allow(clippy::approx_constant)]
    fn default() -> Self {
        Self::new(0.008985, 0.207762, 2.718282)
    }
}

impl MoistureCalibration {
    pub fn new(slope: f64, intercept: f64, k: f64) -> Self {
        Self {
            slope,
            intercept,
            k,
            k_squared: k * k,
        }
    }

    pub fn k_squared(&self) -> f64 {
        self.k_squared
    }

    /// Size of one ADC count in calibration units.
    pub fn step(&self) -> f64 {
        self.k_squared * self.slope
    }

    pub fn min_reading(&self) -> f64 {
        analog_to_moisture(AnalogReading(0), self)
    }

    pub fn max_reading(&self) -> f64 {
        analog_to_moisture(AnalogReading(ADC_MAX), self)
    }
}

/// Oven-dry reference weighing used to calibrate the probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravimetricSample {
    pub wet_weight_g: f64,
    pub dry_weight_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravimetricMoisture {
    /// Water mass over dry soil mass.
    pub ratio: f64,
    pub percent: f64,
}

pub fn gravimetric_moisture(sample: &GravimetricSample) -> Result<GravimetricMoisture, SensorError> {
    let GravimetricSample {
        wet_weight_g: wet,
        dry_weight_g: dry,
    } = *sample;
    if !dry.is_finite() || dry <= 0.0 {
        return Err(SensorError::NonPositiveDryWeight(dry));
    }
    if !wet.is_finite() || wet < dry {
        return Err(SensorError::WetLighterThanDry { wet, dry });
    }
    let ratio = (wet - dry) / dry;
    Ok(GravimetricMoisture {
        ratio,
        percent: 100.0 * ratio,
    })
}

pub fn analog_to_moisture(mv: AnalogReading, cal: &MoistureCalibration) -> f64 {
    cal.k_squared * (cal.slope * f64::from(mv.0) + cal.intercept)
}

/// Inverse of [`analog_to_moisture`], rounded to the nearest count and clamped to the ADC range.
pub fn moisture_to_analog(smps: f64, cal: &MoistureCalibration) -> AnalogReading {
    let count = (smps / cal.k_squared - cal.intercept) / cal.slope;
    if !count.is_finite() {
        return AnalogReading(if count > 0.0 { ADC_MAX } else { 0 });
    }
    AnalogReading(count.round().clamp(0.0, f64::from(ADC_MAX)) as u16)
}

/// What the probe reports for a given true moisture: the ADC quantizes it.
pub fn probe_reading(true_smps: f64, cal: &MoistureCalibration) -> (AnalogReading, f64) {
    let mv = moisture_to_analog(true_smps, cal);
    (mv, analog_to_moisture(mv, cal))
}
