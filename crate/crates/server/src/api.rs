//! Route table and JSON shapes of the HTTP service.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use scrop_core::clock::Epoch;
use scrop_core::cloud::{
    ChannelConfig, CloudError, CloudStore, CropProfile, NewPrediction, PredictionRecord, TelemetryRecord,
    TelemetryWrite, WriteOutcome,
};
use scrop_core::sensors::LeafImage;

pub const DEFAULT_FEED_RESULTS: usize = 100;
pub const MAX_FEED_RESULTS: usize = 8000;
pub const IMAGE_CONTENT_TYPE: &str = "image/x-portable-anymap";
pub const IMAGE_ID_HEADER: &str = "x-image-id";
pub const TIMESTAMP_HEADER: &str = "x-timestamp-ms";
/// Largest accepted upload; a 640×480 RGB PPM is about 0.9 MB.
pub const MAX_IMAGE_BYTES: usize = 16 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<CloudStore>,
    pub epoch: Epoch,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/channels", get(list_channels).post(create_channel))
        .route("/channels/{id}/update", post(update))
        .route("/channels/{id}/feed", get(feed))
        .route("/crops", get(crops))
        .route("/crops/select", post(select_crop))
        .route("/crops/threshold", get(threshold))
        .route("/nodes/{id}/images", post(put_image))
        .route("/nodes/{id}/images/latest", get(latest_image))
        .route("/nodes/{id}/predictions", post(put_prediction))
        .route("/nodes/{id}/predictions/latest", get(latest_prediction))
        .layer(axum::extract::DefaultBodyLimit::max(MAX_IMAGE_BYTES))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub error: String,
    pub code: String,
}

pub struct ApiError(StatusCode, String);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError(status, msg.into())
    }
}

impl From<CloudError> for ApiError {
    fn from(e: CloudError) -> Self {
        let (status, msg) = match e {
            CloudError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            CloudError::InvalidRequest(m) => (StatusCode::BAD_REQUEST, m),
            CloudError::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, m),
            CloudError::Storage(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        ApiError(status, msg)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = match self.0 {
            StatusCode::NOT_FOUND => "not_found",
            StatusCode::BAD_REQUEST => "invalid_request",
            StatusCode::UNAUTHORIZED => "unauthorized",
            StatusCode::TOO_MANY_REQUESTS => "rate_limited",
            StatusCode::SERVICE_UNAVAILABLE => "unavailable",
            _ => "internal",
        };
        let body = ErrorBody {
            error: self.1,
            code: code.into(),
        };
        (self.0, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn list_channels(State(s): State<AppState>) -> Json<Vec<String>> {
    Json(s.store.channel_ids())
}

async fn create_channel(
    State(s): State<AppState>,
    Json(cfg): Json<ChannelConfig>,
) -> ApiResult<(StatusCode, Json<ChannelCreated>)> {
    let id = cfg.id.clone();
    s.store.create_channel(cfg)?;
    Ok((StatusCode::CREATED, Json(ChannelCreated { id })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChannelCreated {
    pub id: String,
}

/// Body of `POST /channels/{id}/update`; `api_key` is accepted as an alias.
#[derive(Debug, Serialize, Deserialize)]
pub struct UpdateBody {
    #[serde(alias = "api_key")]
    pub write_key: String,
    #[serde(flatten)]
    pub write: TelemetryWrite,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct UpdateAccepted {
    pub entry_id: u64,
}

async fn update(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<UpdateBody>,
) -> ApiResult<Json<UpdateAccepted>> {
    match s.store.channel_write(&id, &body.write_key, &body.write)? {
        WriteOutcome::Accepted { entry_id } => Ok(Json(UpdateAccepted { entry_id })),
        WriteOutcome::RateLimited => Err(ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            format!("channel {id:?} accepts one write per 15 s"),
        )),
        WriteOutcome::Unauthorized => Err(ApiError::new(StatusCode::UNAUTHORIZED, "write key does not match")),
    }
}

#[derive(Debug, Deserialize)]
struct FeedQuery {
    results: Option<usize>,
}

/// A stored record with its server time rendered as ISO-8601.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeedRecord {
    pub created_at: String,
    #[serde(flatten)]
    pub record: TelemetryRecord,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Feed {
    pub channel: String,
    pub records: Vec<FeedRecord>,
}

async fn feed(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<FeedQuery>) -> ApiResult<Json<Feed>> {
    let n = q.results.unwrap_or(DEFAULT_FEED_RESULTS).min(MAX_FEED_RESULTS);
    let records = s
        .store
        .channel_feed(&id, n)?
        .into_iter()
        .map(|record| FeedRecord {
            created_at: s.epoch.format(record.server_timestamp),
            record,
        })
        .collect();
    Ok(Json(Feed { channel: id, records }))
}

async fn crops(State(s): State<AppState>) -> Json<Vec<CropProfile>> {
    Json(s.store.catalogue())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectCrop {
    pub crop_name: String,
}

async fn select_crop(State(s): State<AppState>, Json(body): Json<SelectCrop>) -> ApiResult<Json<CropProfile>> {
    Ok(Json(s.store.select_crop(&body.crop_name)?))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ThresholdBody {
    pub crop_name: String,
    pub threshold_sm: f64,
    pub release_sm: f64,
}

async fn threshold(State(s): State<AppState>) -> Json<ThresholdBody> {
    let active = s.store.active_crop();
    Json(ThresholdBody {
        crop_name: active.crop_name,
        threshold_sm: active.threshold_sm,
        release_sm: active.release_sm,
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ImageStored {
    pub image_id: u64,
}

async fn put_image(
    State(s): State<AppState>,
    Path(node): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<ImageStored>)> {
    let image = LeafImage::from_pnm(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let image_id = s.store.put_image(&node, image)?;
    Ok((StatusCode::CREATED, Json(ImageStored { image_id })))
}

async fn latest_image(State(s): State<AppState>, Path(node): Path<String>) -> ApiResult<(HeaderMap, Vec<u8>)> {
    let record = s.store.get_latest_image(&node)?;
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static(IMAGE_CONTENT_TYPE));
    headers.insert(IMAGE_ID_HEADER, HeaderValue::from(record.id));
    headers.insert(TIMESTAMP_HEADER, HeaderValue::from(record.timestamp.as_millis()));
    Ok((headers, record.image.to_pnm()))
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct PredictionStored {
    pub prediction_id: u64,
}

async fn put_prediction(
    State(s): State<AppState>,
    Path(node): Path<String>,
    Json(p): Json<NewPrediction>,
) -> ApiResult<(StatusCode, Json<PredictionStored>)> {
    let prediction_id = s.store.put_prediction(&node, &p)?;
    Ok((StatusCode::CREATED, Json(PredictionStored { prediction_id })))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PredictionBody {
    pub created_at: String,
    #[serde(flatten)]
    pub record: PredictionRecord,
}

async fn latest_prediction(State(s): State<AppState>, Path(node): Path<String>) -> ApiResult<Json<PredictionBody>> {
    let record = s.store.get_latest_prediction(&node)?;
    Ok(Json(PredictionBody {
        created_at: s.epoch.format(record.timestamp),
        record,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_errors_map_to_status_codes() {
        let cases = [
            (CloudError::NotFound("x".into()), StatusCode::NOT_FOUND),
            (CloudError::InvalidRequest("x".into()), StatusCode::BAD_REQUEST),
            (CloudError::Unavailable("x".into()), StatusCode::SERVICE_UNAVAILABLE),
            (CloudError::Storage("x".into()), StatusCode::INTERNAL_SERVER_ERROR),
        ];
        for (err, status) in cases {
            assert_eq!(ApiError::from(err).into_response().status(), status);
        }
    }

    #[test]
    fn update_body_reads_flat_fields_and_key_alias() {
        let body: UpdateBody =
            serde_json::from_str(r#"{"api_key": "k", "field1": 31.5, "field4": 1, "status": "2021-03-01T06:00:00Z"}"#)
                .unwrap();
        assert_eq!(body.write_key, "k");
        assert_eq!(body.write.fields.get(1), Some(31.5));
        assert_eq!(body.write.fields.get(4), Some(1.0));
        assert_eq!(body.write.fields.get(2), None);
        assert_eq!(body.write.status.as_deref(), Some("2021-03-01T06:00:00Z"));
    }

    #[test]
    fn error_body_round_trips() {
        let body = ErrorBody {
            error: "nope".into(),
            code: "not_found".into(),
        };
        let json = serde_json::to_string(&body).unwrap();
        assert_eq!(json, r#"{"error":"nope","code":"not_found"}"#);
    }
}
