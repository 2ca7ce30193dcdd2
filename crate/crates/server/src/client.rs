//! Blocking HTTP client for the service, usable wherever a [`CloudClient`] is expected.

use std::time::Duration;

use serde::de::DeserializeOwned;
use ureq::http::Response;
use ureq::{Agent, Body};

use crate::api::{
    ChannelCreated, ErrorBody, Feed, ImageStored, PredictionBody, PredictionStored, SelectCrop, ThresholdBody,
    UpdateAccepted, UpdateBody, IMAGE_CONTENT_TYPE, IMAGE_ID_HEADER, TIMESTAMP_HEADER,
};
use scrop_core::cloud::{
    ChannelConfig, CloudClient, CloudError, CropProfile, ImageRecord, NewPrediction, PredictionRecord, TelemetryRecord,
    TelemetryWrite, Threshold, WriteOutcome,
};
use scrop_core::sensors::LeafImage;

#[derive(Debug, Clone)]
pub struct HttpCloudClient {
    base: String,
    agent: Agent,
}

fn transport(e: ureq::Error) -> CloudError {
    CloudError::Unavailable(e.to_string())
}

/// Maps a non-2xx response onto the error the in-process store would return.
fn status_error(mut resp: Response<Body>) -> CloudError {
    let status = resp.status().as_u16();
    let msg = resp
        .body_mut()
        .read_json::<ErrorBody>()
        .map(|b| b.error)
        .unwrap_or_else(|_| format!("HTTP {status}"));
    match status {
        404 => CloudError::NotFound(msg),
        400 | 401 | 413 | 415 | 422 | 429 => CloudError::InvalidRequest(msg),
        500 => CloudError::Storage(msg),
        _ => CloudError::Unavailable(msg),
    }
}

fn json<T: DeserializeOwned>(mut resp: Response<Body>) -> Result<T, CloudError> {
    if !resp.status().is_success() {
        return Err(status_error(resp));
    }
    resp.body_mut()
        .read_json()
        .map_err(|e| CloudError::Unavailable(format!("malformed response: {e}")))
}

impl HttpCloudClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self::with_timeout(base, Duration::from_secs(10))
    }

    pub fn with_timeout(base: impl Into<String>, timeout: Duration) -> Self {
        let config = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            agent: Agent::new_with_config(config),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn health(&self) -> Result<(), CloudError> {
        let resp = self.agent.get(self.url("/health")).call().map_err(transport)?;
        json::<serde_json::Value>(resp).map(|_| ())
    }

    pub fn create_channel(&self, config: &ChannelConfig) -> Result<(), CloudError> {
        let resp = self
            .agent
            .post(self.url("/channels"))
            .send_json(config)
            .map_err(transport)?;
        json::<ChannelCreated>(resp).map(|_| ())
    }

    pub fn catalogue(&self) -> Result<Vec<CropProfile>, CloudError> {
        json(self.agent.get(self.url("/crops")).call().map_err(transport)?)
    }

    pub fn select_crop(&self, crop_name: &str) -> Result<CropProfile, CloudError> {
        let body = SelectCrop {
            crop_name: crop_name.to_string(),
        };
        json(
            self.agent
                .post(self.url("/crops/select"))
                .send_json(&body)
                .map_err(transport)?,
        )
    }

    pub fn active_threshold(&self) -> Result<ThresholdBody, CloudError> {
        json(self.agent.get(self.url("/crops/threshold")).call().map_err(transport)?)
    }
}

impl CloudClient for HttpCloudClient {
    fn write(&self, channel: &str, write_key: &str, write: &TelemetryWrite) -> Result<WriteOutcome, CloudError> {
        let body = UpdateBody {
            write_key: write_key.to_string(),
            write: write.clone(),
        };
        let resp = self
            .agent
            .post(self.url(&format!("/channels/{channel}/update")))
            .send_json(&body)
            .map_err(transport)?;
        match resp.status().as_u16() {
            429 => Ok(WriteOutcome::RateLimited),
            401 => Ok(WriteOutcome::Unauthorized),
            _ => json::<UpdateAccepted>(resp).map(|a| WriteOutcome::Accepted { entry_id: a.entry_id }),
        }
    }

    fn feed(&self, channel: &str, results: usize) -> Result<Vec<TelemetryRecord>, CloudError> {
        let resp = self
            .agent
            .get(self.url(&format!("/channels/{channel}/feed")))
            .query("results", results.to_string())
            .call()
            .map_err(transport)?;
        Ok(json::<Feed>(resp)?.records.into_iter().map(|r| r.record).collect())
    }

    fn threshold(&self) -> Result<Threshold, CloudError> {
        let t = self.active_threshold()?;
        Ok(Threshold {
            threshold_sm: t.threshold_sm,
            release_sm: t.release_sm,
        })
    }

    fn put_image(&self, node_id: &str, image: &LeafImage) -> Result<u64, CloudError> {
        let resp = self
            .agent
            .post(self.url(&format!("/nodes/{node_id}/images")))
            .header("content-type", IMAGE_CONTENT_TYPE)
            .send(&image.to_pnm()[..])
            .map_err(transport)?;
        Ok(json::<ImageStored>(resp)?.image_id)
    }

    fn latest_image(&self, node_id: &str) -> Result<ImageRecord, CloudError> {
        let mut resp = self
            .agent
            .get(self.url(&format!("/nodes/{node_id}/images/latest")))
            .call()
            .map_err(transport)?;
        if !resp.status().is_success() {
            return Err(status_error(resp));
        }
        let header = |name: &str| {
            resp.headers()
                .get(name)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .ok_or_else(|| CloudError::Unavailable(format!("response lacks {name}")))
        };
        let id = header(IMAGE_ID_HEADER)?;
        let timestamp = header(TIMESTAMP_HEADER)?;
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(crate::api::MAX_IMAGE_BYTES as u64)
            .read_to_vec()
            .map_err(transport)?;
        let image =
            LeafImage::from_pnm(&bytes).map_err(|e| CloudError::Unavailable(format!("malformed image: {e}")))?;
        Ok(ImageRecord {
            id,
            node_id: node_id.to_string(),
            timestamp: scrop_core::clock::SimTime(timestamp),
            image,
        })
    }

    fn put_prediction(&self, node_id: &str, prediction: &NewPrediction) -> Result<u64, CloudError> {
        let resp = self
            .agent
            .post(self.url(&format!("/nodes/{node_id}/predictions")))
            .send_json(prediction)
            .map_err(transport)?;
        Ok(json::<PredictionStored>(resp)?.prediction_id)
    }

    fn latest_prediction(&self, node_id: &str) -> Result<PredictionRecord, CloudError> {
        let resp = self
            .agent
            .get(self.url(&format!("/nodes/{node_id}/predictions/latest")))
            .call()
            .map_err(transport)?;
        Ok(json::<PredictionBody>(resp)?.record)
    }
}
