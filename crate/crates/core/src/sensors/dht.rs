//! DHT11-class temperature/humidity sensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::soil::SoilColumnState;

pub const TEMPERATURE_TOLERANCE_C: f64 = 2.0;
pub const HUMIDITY_TOLERANCE_PCT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhtReading {
    pub temperature_c: f64,
    pub humidity_pct: f64,
}

/// Reads the sensor. `None` is a noiseless sensor; a seed draws one bounded
/// error per channel, the same error for the same seed.
pub fn read_dht(soil: &SoilColumnState, noise_seed: Option<u64>) -> DhtReading {
    let (dt, dh) = match noise_seed {
        None => (0.0, 0.0),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (
                rng.random_range(-TEMPERATURE_TOLERANCE_C..=TEMPERATURE_TOLERANCE_C),
                rng.random_range(-HUMIDITY_TOLERANCE_PCT..=HUMIDITY_TOLERANCE_PCT),
            )
        }
    };
    with_noise(soil, dt, dh)
}

/// Applies explicit errors, clamped to the sensor tolerance; humidity saturates at 0 and 100 %.
pub fn with_noise(soil: &SoilColumnState, temperature_err: f64, humidity_err: f64) -> DhtReading {
    let dt = temperature_err.clamp(-TEMPERATURE_TOLERANCE_C, TEMPERATURE_TOLERANCE_C);
    let dh = humidity_err.clamp(-HUMIDITY_TOLERANCE_PCT, HUMIDITY_TOLERANCE_PCT);
    DhtReading {
        temperature_c: soil.temperature_c + dt,
        humidity_pct: (soil.humidity_pct + dh).clamp(0.0, 100.0),
    }
}
