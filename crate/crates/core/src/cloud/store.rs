use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};

use super::crops::{default_catalogue, CropProfile, CropRegistry, Threshold};
use super::persist::{append, replay, CropSelection, DataDir, ImageMeta};
use super::{
    ChannelConfig, CloudClient, CloudError, ImageRecord, NewPrediction, PredictionRecord, TelemetryRecord,
    TelemetryWrite, WriteOutcome, FIELD_COUNT, VISIBILITY_DELAY_MS,
};
use crate::clock::{Clock, SimTime};
use crate::sensors::LeafImage;

#[derive(Debug, Clone)]
pub struct StoreOptions {
    /// How long an accepted write stays invisible to feed readers.
    pub visibility_delay_ms: u64,
    pub data_dir: Option<PathBuf>,
    pub catalogue: Vec<CropProfile>,
}

impl StoreOptions {
    /// Scenario mode: writes become readable after the modelled upload latency.
    pub fn simulated() -> Self {
        Self {
            visibility_delay_ms: VISIBILITY_DELAY_MS,
            data_dir: None,
            catalogue: default_catalogue(),
        }
    }

    /// Live service mode: writes are readable immediately; only the rate limit applies.
    pub fn live(data_dir: Option<PathBuf>) -> Self {
        Self {
            visibility_delay_ms: 0,
            data_dir,
            catalogue: default_catalogue(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelStats {
    pub accepted: u64,
    pub rate_limited: u64,
    pub unauthorized: u64,
}

#[derive(Debug)]
struct ChannelState {
    config: ChannelConfig,
    records: Vec<TelemetryRecord>,
    last_accepted: Option<SimTime>,
    stats: ChannelStats,
}

pub struct CloudStore {
    clock: Arc<dyn Clock>,
    visibility_delay_ms: u64,
    channels: RwLock<BTreeMap<String, Arc<RwLock<ChannelState>>>>,
    crops: RwLock<CropRegistry>,
    images: RwLock<Vec<ImageRecord>>,
    predictions: RwLock<Vec<PredictionRecord>>,
    next_image_id: AtomicU64,
    next_prediction_id: AtomicU64,
    disk: Option<DataDir>,
}

impl std::fmt::Debug for CloudStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CloudStore")
            .field("visibility_delay_ms", &self.visibility_delay_ms)
            .field("channels", &self.channel_ids())
            .finish_non_exhaustive()
    }
}

fn read<T>(lock: &RwLock<T>) -> RwLockReadGuard<'_, T> {
    lock.read().unwrap_or_else(|e| e.into_inner())
}

fn write<T>(lock: &RwLock<T>) -> RwLockWriteGuard<'_, T> {
    lock.write().unwrap_or_else(|e| e.into_inner())
}

impl CloudStore {
    /// Opens a store; with a data directory the logs found there are replayed.
    pub fn open(clock: Arc<dyn Clock>, options: StoreOptions) -> Result<Self, CloudError> {
        let crops = CropRegistry::new(options.catalogue)?;
        let disk = options.data_dir.as_deref().map(DataDir::open).transpose()?;
        let store = Self {
            clock,
            visibility_delay_ms: options.visibility_delay_ms,
            channels: RwLock::new(BTreeMap::new()),
            crops: RwLock::new(crops),
            images: RwLock::new(Vec::new()),
            predictions: RwLock::new(Vec::new()),
            next_image_id: AtomicU64::new(1),
            next_prediction_id: AtomicU64::new(1),
            disk,
        };
        if store.disk.is_some() {
            store.replay_logs()?;
        }
        Ok(store)
    }

    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self::open(clock, StoreOptions::simulated()).expect("in-memory store cannot fail to open")
    }

    fn replay_logs(&self) -> Result<(), CloudError> {
        let disk = self.disk.as_ref().expect("replay requires a data directory");
        let mut channels = write(&self.channels);
        for config in replay::<ChannelConfig>(&disk.channels())? {
            let records: Vec<TelemetryRecord> = replay(&disk.channel(&config.id))?;
            let state = ChannelState {
                last_accepted: records.last().map(|r| r.server_timestamp),
                stats: ChannelStats {
                    accepted: records.len() as u64,
                    ..Default::default()
                },
                records,
                config,
            };
            channels.insert(state.config.id.clone(), Arc::new(RwLock::new(state)));
        }
        let mut crops = write(&self.crops);
        for sel in replay::<CropSelection>(&disk.crops())? {
            // A catalogue change between runs may drop a crop; keep the previous selection then.
            if crops.select(&sel.crop_name).is_err() {
                tracing::warn!(crop = %sel.crop_name, "logged crop selection not in catalogue");
            }
        }
        let mut images = write(&self.images);
        for meta in replay::<ImageMeta>(&disk.images())? {
            let bytes = std::fs::read(disk.image_file(meta.id))?;
            let image = LeafImage::from_pnm(&bytes).map_err(|e| CloudError::Storage(e.to_string()))?;
            self.next_image_id.fetch_max(meta.id + 1, Ordering::SeqCst);
            images.push(ImageRecord {
                id: meta.id,
                node_id: meta.node_id,
                timestamp: meta.timestamp,
                image,
            });
        }
        let mut predictions = write(&self.predictions);
        for p in replay::<PredictionRecord>(&disk.predictions())? {
            self.next_prediction_id.fetch_max(p.id + 1, Ordering::SeqCst);
            predictions.push(p);
        }
        Ok(())
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn visibility_delay_ms(&self) -> u64 {
        self.visibility_delay_ms
    }

    /// Creates a channel. Re-creating an identical channel is a no-op.
    pub fn create_channel(&self, config: ChannelConfig) -> Result<(), CloudError> {
        if config.id.is_empty() || config.write_key.is_empty() {
            return Err(CloudError::InvalidRequest(
                "channel id and write key are required".into(),
            ));
        }
        if config.field_names.len() > FIELD_COUNT {
            return Err(CloudError::InvalidRequest(format!(
                "a channel has at most {FIELD_COUNT} fields"
            )));
        }
        let mut channels = write(&self.channels);
        if let Some(existing) = channels.get(&config.id) {
            return if read(existing).config == config {
                Ok(())
            } else {
                Err(CloudError::InvalidRequest(format!(
                    "channel {:?} already exists",
                    config.id
                )))
            };
        }
        if let Some(disk) = &self.disk {
            append(&disk.channels(), &config)?;
        }
        let state = ChannelState {
            config,
            records: Vec::new(),
            last_accepted: None,
            stats: ChannelStats::default(),
        };
        channels.insert(state.config.id.clone(), Arc::new(RwLock::new(state)));
        Ok(())
    }

    pub fn channel_ids(&self) -> Vec<String> {
        read(&self.channels).keys().cloned().collect()
    }

    fn channel(&self, id: &str) -> Result<Arc<RwLock<ChannelState>>, CloudError> {
        read(&self.channels)
            .get(id)
            .cloned()
            .ok_or_else(|| CloudError::NotFound(format!("channel {id:?}")))
    }

    /// Accepts a write iff the key matches and the channel's minimum interval
    /// has passed since the last accepted write. Rejected writes are dropped.
    pub fn channel_write(
        &self,
        id: &str,
        write_key: &str,
        payload: &TelemetryWrite,
    ) -> Result<WriteOutcome, CloudError> {
        let channel = self.channel(id)?;
        let mut ch = write(&channel);
        if ch.config.write_key != write_key {
            ch.stats.unauthorized += 1;
            return Ok(WriteOutcome::Unauthorized);
        }
        if payload.fields.is_empty() {
            return Err(CloudError::InvalidRequest("at least one field is required".into()));
        }
        let now = self.clock.now();
        if let Some(last) = ch.last_accepted {
            if now.saturating_sub(last) < ch.config.min_write_interval_ms {
                ch.stats.rate_limited += 1;
                return Ok(WriteOutcome::RateLimited);
            }
        }
        let record = TelemetryRecord {
            entry_id: ch.records.last().map_or(1, |r| r.entry_id + 1),
            server_timestamp: now,
            fields: payload.fields,
            status: payload.status.clone(),
            stale_threshold: payload.stale_threshold,
        };
        if let Some(disk) = &self.disk {
            append(&disk.channel(id), &record)?;
        }
        let entry_id = record.entry_id;
        ch.records.push(record);
        ch.last_accepted = Some(now);
        ch.stats.accepted += 1;
        Ok(WriteOutcome::Accepted { entry_id })
    }

    /// The newest `results` readable records, oldest first.
    pub fn channel_feed(&self, id: &str, results: usize) -> Result<Vec<TelemetryRecord>, CloudError> {
        if results == 0 {
            return Err(CloudError::InvalidRequest("results must be at least 1".into()));
        }
        let channel = self.channel(id)?;
        let ch = read(&channel);
        let now = self.clock.now();
        let visible = ch
            .records
            .partition_point(|r| r.server_timestamp.as_millis() + self.visibility_delay_ms <= now.as_millis());
        let start = visible.saturating_sub(results);
        Ok(ch.records[start..visible].to_vec())
    }

    /// Every accepted record regardless of visibility; for audits.
    pub fn channel_records(&self, id: &str) -> Result<Vec<TelemetryRecord>, CloudError> {
        let channel = self.channel(id)?;
        let records = read(&channel).records.clone();
        Ok(records)
    }

    pub fn channel_stats(&self, id: &str) -> Result<ChannelStats, CloudError> {
        let channel = self.channel(id)?;
        let stats = read(&channel).stats;
        Ok(stats)
    }

    pub fn catalogue(&self) -> Vec<CropProfile> {
        read(&self.crops).catalogue().to_vec()
    }

    pub fn active_crop(&self) -> CropProfile {
        read(&self.crops).active().clone()
    }

    pub fn select_crop(&self, crop_name: &str) -> Result<CropProfile, CloudError> {
        let mut crops = write(&self.crops);
        // Validate before logging so a rejected name never reaches the log.
        let mut next = crops.clone();
        let profile = next.select(crop_name)?.clone();
        if let Some(disk) = &self.disk {
            append(
                &disk.crops(),
                &CropSelection {
                    crop_name: crop_name.to_string(),
                },
            )?;
        }
        *crops = next;
        Ok(profile)
    }

    pub fn get_threshold(&self) -> Threshold {
        read(&self.crops).threshold()
    }

    pub fn put_image(&self, node_id: &str, image: LeafImage) -> Result<u64, CloudError> {
        let mut images = write(&self.images);
        let id = self.next_image_id.fetch_add(1, Ordering::SeqCst);
        let timestamp = self.clock.now();
        if let Some(disk) = &self.disk {
            std::fs::write(disk.image_file(id), image.to_pnm())?;
            append(
                &disk.images(),
                &ImageMeta {
                    id,
                    node_id: node_id.to_string(),
                    timestamp,
                },
            )?;
        }
        images.push(ImageRecord {
            id,
            node_id: node_id.to_string(),
            timestamp,
            image,
        });
        Ok(id)
    }

    pub fn get_latest_image(&self, node_id: &str) -> Result<ImageRecord, CloudError> {
        read(&self.images)
            .iter()
            .filter(|r| r.node_id == node_id)
            .max_by_key(|r| (r.timestamp, r.id))
            .cloned()
            .ok_or_else(|| CloudError::NotFound(format!("no image for node {node_id:?}")))
    }

    pub fn get_image(&self, id: u64) -> Result<ImageRecord, CloudError> {
        read(&self.images)
            .iter()
            .find(|r| r.id == id)
            .cloned()
            .ok_or_else(|| CloudError::NotFound(format!("image {id}")))
    }

    pub fn put_prediction(&self, node_id: &str, p: &NewPrediction) -> Result<u64, CloudError> {
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(CloudError::InvalidRequest(format!(
                "confidence {} outside [0, 1]",
                p.confidence
            )));
        }
        if !read(&self.images).iter().any(|r| r.id == p.image_id) {
            return Err(CloudError::NotFound(format!("image {}", p.image_id)));
        }
        let mut predictions = write(&self.predictions);
        let record = PredictionRecord {
            id: self.next_prediction_id.fetch_add(1, Ordering::SeqCst),
            node_id: node_id.to_string(),
            timestamp: self.clock.now(),
            label: p.label.clone(),
            confidence: p.confidence,
            image_id: p.image_id,
            lesion_box: p.lesion_box,
        };
        if let Some(disk) = &self.disk {
            append(&disk.predictions(), &record)?;
        }
        let id = record.id;
        predictions.push(record);
        Ok(id)
    }

    pub fn get_latest_prediction(&self, node_id: &str) -> Result<PredictionRecord, CloudError> {
        read(&self.predictions)
            .iter()
            .filter(|r| r.node_id == node_id)
            .max_by_key(|r| (r.timestamp, r.id))
            .cloned()
            .ok_or_else(|| CloudError::NotFound(format!("no prediction for node {node_id:?}")))
    }

    pub fn predictions(&self, node_id: &str) -> Vec<PredictionRecord> {
        read(&self.predictions)
            .iter()
            .filter(|r| r.node_id == node_id)
            .cloned()
            .collect()
    }
}

impl CloudClient for CloudStore {
    fn write(&self, channel: &str, write_key: &str, write: &TelemetryWrite) -> Result<WriteOutcome, CloudError> {
        self.channel_write(channel, write_key, write)
    }

    fn feed(&self, channel: &str, results: usize) -> Result<Vec<TelemetryRecord>, CloudError> {
        self.channel_feed(channel, results)
    }

    fn threshold(&self) -> Result<Threshold, CloudError> {
        Ok(self.get_threshold())
    }

    fn put_image(&self, node_id: &str, image: &LeafImage) -> Result<u64, CloudError> {
        CloudStore::put_image(self, node_id, image.clone())
    }

    fn latest_image(&self, node_id: &str) -> Result<ImageRecord, CloudError> {
        self.get_latest_image(node_id)
    }

    fn put_prediction(&self, node_id: &str, prediction: &NewPrediction) -> Result<u64, CloudError> {
        CloudStore::put_prediction(self, node_id, prediction)
    }

    fn latest_prediction(&self, node_id: &str) -> Result<PredictionRecord, CloudError> {
        self.get_latest_prediction(node_id)
    }
}
