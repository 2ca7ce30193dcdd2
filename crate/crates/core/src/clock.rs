//! Simulated and wall-clock time sources.
//!
//! All simulation time is kept as integer milliseconds since the scenario
//! epoch so that traces are bit-reproducible.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

/// Milliseconds since the clock's epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs(secs: u64) -> Self {
        SimTime(secs * 1000)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime((secs * 1000.0).round().max(0.0) as u64)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }

    pub fn plus_millis(self, ms: u64) -> SimTime {
        SimTime(self.0 + ms)
    }
}

/// Source of server-side timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> SimTime;
}

/// Manually advanced clock shared between the scenario engine and the
/// in-process cloud store.
#[derive(Debug, Clone, Default)]
pub struct SimClock {
    millis: Arc<AtomicU64>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, t: SimTime) {
        self.millis.store(t.0, Ordering::SeqCst);
    }

    pub fn advance_millis(&self, ms: u64) {
        self.millis.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now(&self) -> SimTime {
        SimTime(self.millis.load(Ordering::SeqCst))
    }
}

/// Real time as milliseconds since the Unix epoch; pair with [`Epoch::unix`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> SimTime {
        let since = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        SimTime(since.as_millis() as u64)
    }
}

/// Maps simulation time onto calendar time for DATE_TIME_S style stamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epoch(pub DateTime<Utc>);

impl Default for Epoch {
    fn default() -> Self {
        Epoch(Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap())
    }
}

impl Epoch {
    pub fn unix() -> Self {
        Epoch(DateTime::<Utc>::UNIX_EPOCH)
    }

    /// ISO-8601 timestamp with second resolution, e.g. `2021-03-01T05:47:12Z`.
    pub fn format(&self, t: SimTime) -> String {
        let at = self.0 + Duration::milliseconds(t.0 as i64);
        at.format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }
}
