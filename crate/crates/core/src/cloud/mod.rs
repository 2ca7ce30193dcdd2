//! Channel-based telemetry store: rate-limited channel writes, the crop
//! threshold registry, and per-node leaf images and predictions.
//!
//! [`CloudStore`] is the server side; the simulator calls it in-process and
//! the HTTP service wraps it. Nodes and pipelines only see the
//! [`CloudClient`] trait so they can be pointed at either.

mod crops;
mod persist;
mod store;

use serde::{Deserialize, Serialize};

use crate::classifier::BoundingBox;
use crate::clock::SimTime;
use crate::sensors::LeafImage;

pub use crops::{default_catalogue, CropProfile, CropRegistry, Threshold, DEFAULT_CROP};
pub use store::{ChannelStats, CloudStore, StoreOptions};

pub const FIELD_COUNT: usize = 8;
/// Minimum spacing between accepted writes on one channel.
pub const MIN_WRITE_INTERVAL_MS: u64 = 15_000;
/// Delay before an accepted write shows up in the feed, under the scenario clock.
pub const VISIBILITY_DELAY_MS: u64 = 15_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CloudError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cloud unavailable: {0}")]
    Unavailable(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl From<std::io::Error> for CloudError {
    fn from(e: std::io::Error) -> Self {
        CloudError::Storage(e.to_string())
    }
}

impl From<serde_json::Error> for CloudError {
    fn from(e: serde_json::Error) -> Self {
        CloudError::Storage(e.to_string())
    }
}

/// The eight numeric slots of a channel.
///
/// Node telemetry channels use field1 soil moisture (calibration units),
/// field2 air temperature, field3 humidity, field4 relay state (1/0),
/// field5 panel voltage and field6 battery charge fraction. Event channels
/// use field1 for the action (1 pump on, 0 pump off) and field2 for the
/// moisture at the event, with the event time in `status`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Fields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field4: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field5: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field6: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field7: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field8: Option<f64>,
}

impl Fields {
    pub fn from_slice(values: &[Option<f64>]) -> Self {
        let mut f = Fields::default();
        for (i, v) in values.iter().take(FIELD_COUNT).enumerate() {
            f.set(i + 1, *v);
        }
        f
    }

    /// 1-based access, matching the wire names.
    pub fn get(&self, n: usize) -> Option<f64> {
        match n {
            1 => self.field1,
            2 => self.field2,
            3 => self.field3,
            4 => self.field4,
            5 => self.field5,
            6 => self.field6,
            7 => self.field7,
            8 => self.field8,
            _ => None,
        }
    }

    pub fn set(&mut self, n: usize, value: Option<f64>) {
        let slot = match n {
            1 => &mut self.field1,
            2 => &mut self.field2,
            3 => &mut self.field3,
            4 => &mut self.field4,
            5 => &mut self.field5,
            6 => &mut self.field6,
            7 => &mut self.field7,
            8 => &mut self.field8,
            _ => return,
        };
        *slot = value;
    }

    pub fn is_empty(&self) -> bool {
        (1..=FIELD_COUNT).all(|n| self.get(n).is_none())
    }
}

/// Payload a client submits to a channel.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TelemetryWrite {
    #[serde(flatten)]
    pub fields: Fields,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    /// Set when the node fell back to a cached threshold for this iteration.
    #[serde(default)]
    pub stale_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub entry_id: u64,
    pub server_timestamp: SimTime,
    #[serde(flatten)]
    pub fields: Fields,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default)]
    pub stale_threshold: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum WriteOutcome {
    Accepted { entry_id: u64 },
    RateLimited,
    Unauthorized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub id: String,
    pub write_key: String,
    #[serde(default)]
    pub field_names: Vec<String>,
    #[serde(default = "default_interval")]
    pub min_write_interval_ms: u64,
}

fn default_interval() -> u64 {
    MIN_WRITE_INTERVAL_MS
}

impl ChannelConfig {
    pub fn new(id: impl Into<String>, write_key: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            write_key: write_key.into(),
            field_names: Vec::new(),
            min_write_interval_ms: MIN_WRITE_INTERVAL_MS,
        }
    }

    pub fn with_fields(mut self, names: &[&str]) -> Self {
        self.field_names = names.iter().map(|s| s.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub node_id: String,
    pub timestamp: SimTime,
    pub image: LeafImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewPrediction {
    pub label: String,
    pub confidence: f64,
    pub image_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_box: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u64,
    pub node_id: String,
    pub timestamp: SimTime,
    pub label: String,
    pub confidence: f64,
    pub image_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_box: Option<BoundingBox>,
}

/// What a node, pipeline or dashboard can ask of the cloud.
pub trait CloudClient {
    fn write(&self, channel: &str, write_key: &str, write: &TelemetryWrite) -> Result<WriteOutcome, CloudError>;
    fn feed(&self, channel: &str, results: usize) -> Result<Vec<TelemetryRecord>, CloudError>;
    fn threshold(&self) -> Result<Threshold, CloudError>;
    fn put_image(&self, node_id: &str, image: &LeafImage) -> Result<u64, CloudError>;
    fn latest_image(&self, node_id: &str) -> Result<ImageRecord, CloudError>;
    fn put_prediction(&self, node_id: &str, prediction: &NewPrediction) -> Result<u64, CloudError>;
    fn latest_prediction(&self, node_id: &str) -> Result<PredictionRecord, CloudError>;
}

impl<T: CloudClient + ?Sized> CloudClient for &T {
    fn write(&self, channel: &str, write_key: &str, write: &TelemetryWrite) -> Result<WriteOutcome, CloudError> {
        (**self).write(channel, write_key, write)
    }
    fn feed(&self, channel: &str, results: usize) -> Result<Vec<TelemetryRecord>, CloudError> {
        (**self).feed(channel, results)
    }
    fn threshold(&self) -> Result<Threshold, CloudError> {
        (**self).threshold()
    }
    fn put_image(&self, node_id: &str, image: &LeafImage) -> Result<u64, CloudError> {
        (**self).put_image(node_id, image)
    }
    fn latest_image(&self, node_id: &str) -> Result<ImageRecord, CloudError> {
        (**self).latest_image(node_id)
    }
    fn put_prediction(&self, node_id: &str, prediction: &NewPrediction) -> Result<u64, CloudError> {
        (**self).put_prediction(node_id, prediction)
    }
    fn latest_prediction(&self, node_id: &str) -> Result<PredictionRecord, CloudError> {
        (**self).latest_prediction(node_id)
    }
}

impl<T: CloudClient + ?Sized> CloudClient for std::sync::Arc<T> {
    fn write(&self, channel: &str, write_key: &str, write: &TelemetryWrite) -> Result<WriteOutcome, CloudError> {
        (**self).write(channel, write_key, write)
    }
    fn feed(&self, channel: &str, results: usize) -> Result<Vec<TelemetryRecord>, CloudError> {
        (**self).feed(channel, results)
    }
    fn threshold(&self) -> Result<Threshold, CloudError> {
        (**self).threshold()
    }
    fn put_image(&self, node_id: &str, image: &LeafImage) -> Result<u64, CloudError> {
        (**self).put_image(node_id, image)
    }
    fn latest_image(&self, node_id: &str) -> Result<ImageRecord, CloudError> {
        (**self).latest_image(node_id)
    }
    fn put_prediction(&self, node_id: &str, prediction: &NewPrediction) -> Result<u64, CloudError> {
        (**self).put_prediction(node_id, prediction)
    }
    fn latest_prediction(&self, node_id: &str) -> Result<PredictionRecord, CloudError> {
        (**self).latest_prediction(node_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_body_uses_thingspeak_field_names() {
        let w = TelemetryWrite {
            fields: Fields::from_slice(&[Some(31.5), None, Some(60.0)]),
            status: None,
            stale_threshold: false,
        };
        let json = serde_json::to_value(&w).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"field1": 31.5, "field3": 60.0, "stale_threshold": false})
        );
        let back: TelemetryWrite = serde_json::from_value(serde_json::json!({"field2": 1.0})).unwrap();
        assert_eq!(back.fields.get(2), Some(1.0));
        assert!(!back.stale_threshold);
    }

    #[test]
    fn field_indexing() {
        let mut f = Fields::default();
        assert!(f.is_empty());
        f.set(8, Some(2.0));
        f.set(9, Some(3.0));
        assert_eq!(f.get(8), Some(2.0));
        assert_eq!(f.get(9), None);
        assert!(!f.is_empty());
    }
}
