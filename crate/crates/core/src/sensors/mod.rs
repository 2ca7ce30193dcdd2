//! Node sensors: soil-moisture probe calibration, DHT air sensor, the soil
//! column they observe, and the leaf camera.

pub mod dht;
pub mod leaf;
pub mod moisture;
pub mod pnm;
pub mod soil;

pub use dht::{read_dht, DhtReading};
pub use leaf::{capture_leaf, DiseaseCatalog, LeafCamera, LeafImage, LeafScene};
pub use moisture::{
    analog_to_moisture, gravimetric_moisture, moisture_to_analog, probe_reading, AnalogReading, GravimetricMoisture,
    GravimetricSample, MoistureCalibration,
};
pub use soil::{AirModel, MoistureFlux, SoilColumnState, SoilDynamics};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SensorError {
    #[error("ADC reading {0} outside 0..=1023")]
    AdcOutOfRange(i64),
    #[error("dry weight must be positive, got {0}")]
    NonPositiveDryWeight(f64),
    #[error("wet weight {wet} is below dry weight {dry}")]
    WetLighterThanDry { wet: f64, dry: f64 },
    #[error("unknown disease class {0}")]
    UnknownDiseaseClass(u8),
    #[error("image buffer holds {actual} bytes, expected {expected}")]
    PixelCount { expected: usize, actual: usize },
    #[error("unsupported channel count {0}")]
    Channels(u8),
    #[error("malformed PNM data: {0}")]
    Pnm(String),
}
