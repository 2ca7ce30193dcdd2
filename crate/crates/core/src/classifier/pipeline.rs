//! Periodic leaf check: fetch the node's latest image from the cloud,
//! classify it and store the prediction next to it.

use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::clock::{Clock, SimClock, SimTime};
use crate::cloud::{CloudClient, CloudError, NewPrediction};

pub const DEFAULT_PERIOD_MS: u64 = 24 * 3600 * 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CycleOutcome {
    Stored {
        prediction_id: u64,
        image_id: u64,
        label: String,
        confidence: f64,
    },
    /// No image uploaded yet; the cycle is skipped.
    NoImage,
    /// Cloud or model failure; the next cycle tries again.
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPipeline {
    pub node_id: String,
    pub period_ms: u64,
}

impl PredictionPipeline {
    pub fn new(node_id: impl Into<String>) -> Self {
        Self {
            node_id: node_id.into(),
            period_ms: DEFAULT_PERIOD_MS,
        }
    }

    pub fn cycle(&self, client: &impl CloudClient, model: &ModelSpec) -> CycleOutcome {
        let image = match client.latest_image(&self.node_id) {
            Ok(r) => r,
            Err(CloudError::NotFound(_)) => {
                tracing::info!(node = %self.node_id, "no leaf image yet, skipping cycle");
                return CycleOutcome::NoImage;
            }
            Err(e) => return self.failed(e.to_string()),
        };
        let result = match model.classify(&image.image) {
            Ok(p) => p,
            Err(e) => return self.failed(e.to_string()),
        };
        let prediction = NewPrediction {
            label: result.label.clone(),
            confidence: result.confidence,
            image_id: image.id,
            lesion_box: result.lesion_box,
        };
        match client.put_prediction(&self.node_id, &prediction) {
            Ok(prediction_id) => CycleOutcome::Stored {
                prediction_id,
                image_id: image.id,
                label: result.label,
                confidence: result.confidence,
            },
            Err(e) => self.failed(e.to_string()),
        }
    }

    fn failed(&self, reason: String) -> CycleOutcome {
        tracing::warn!(node = %self.node_id, %reason, "prediction cycle failed");
        CycleOutcome::Failed { reason }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub cycles: Vec<(SimTime, CycleOutcome)>,
}

impl PipelineReport {
    pub fn stored(&self) -> usize {
        self.cycles
            .iter()
            .filter(|(_, o)| matches!(o, CycleOutcome::Stored { .. }))
            .count()
    }
}

/// Advances `clock` from its current time through `duration_ms`, running a
/// cycle at the end of every full period.
pub fn predict_pipeline(
    client: &impl CloudClient,
    model: &ModelSpec,
    pipeline: &PredictionPipeline,
    clock: &SimClock,
    duration_ms: u64,
) -> PipelineReport {
    let mut report = PipelineReport::default();
    if pipeline.period_ms == 0 {
        return report;
    }
    for _ in 0..duration_ms / pipeline.period_ms {
        clock.advance_millis(pipeline.period_ms);
        report.cycles.push((clock.now(), pipeline.cycle(client, model)));
    }
    report
}
