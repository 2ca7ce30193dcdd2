//! Append-only JSON-lines logs backing a [`super::CloudStore`].
//!
//! Layout under the data directory:
//!
//! ```text
//! channels.jsonl            one ChannelConfig per created channel
//! channel-<id>.jsonl        accepted TelemetryRecords, in order
//! crops.jsonl               {"crop_name": ...} per selection
//! images.jsonl              image metadata; pixels in images/<id>.pnm
//! predictions.jsonl         PredictionRecords
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::CloudError;
use crate::clock::SimTime;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct CropSelection {
    pub crop_name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ImageMeta {
    pub id: u64,
    pub node_id: String,
    pub timestamp: SimTime,
}

#[derive(Debug)]
pub(crate) struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn open(root: &Path) -> Result<Self, CloudError> {
        fs::create_dir_all(root.join("images"))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn channels(&self) -> PathBuf {
        self.root.join("channels.jsonl")
    }

    pub fn channel(&self, id: &str) -> PathBuf {
        // Channel ids come from clients; keep the file name tame.
        let safe: String = id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.root.join(format!("channel-{safe}.jsonl"))
    }

    pub fn crops(&self) -> PathBuf {
        self.root.join("crops.jsonl")
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("images.jsonl")
    }

    pub fn image_file(&self, id: u64) -> PathBuf {
        self.root.join("images").join(format!("{id}.pnm"))
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }
}

pub(crate) fn append<T: Serialize>(path: &Path, value: &T) -> Result<(), CloudError> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    Ok(())
}

pub(crate) fn replay<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CloudError> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
