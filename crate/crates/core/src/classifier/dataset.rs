//! Labelled image sets: loading a class-per-folder directory, synthetic
//! leaves from the camera stub, and stratified train/validation splits.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::preprocess::preprocess;
use super::{ClassifierError, Tensor};
use crate::sensors::{LeafCamera, LeafImage, LeafScene};

/// Train/validation percentages offered for experiments.
pub const STANDARD_SPLITS: [(u8, u8); 4] = [(80, 20), (60, 40), (40, 60), (20, 80)];

/// Sorted, so a directory written by [`write_synthetic_dir`] loads with the same indices.
pub const SYNTHETIC_LABELS: [&str; 2] = ["diseased", "healthy"];
const HEALTHY: usize = 1;
const DISEASED: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(labels: Vec<String>, samples: Vec<Sample>) -> Result<Self, ClassifierError> {
        if let Some(s) = samples.iter().find(|s| s.label >= labels.len()) {
            return Err(ClassifierError::Label(format!(
                "sample label {} out of range for {} classes",
                s.label,
                labels.len()
            )));
        }
        Ok(Self { labels, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Reads `root/<label>/*.{pgm,ppm,pnm}`; labels are the sorted folder names.
    pub fn load_dir(root: &Path, input_size: usize) -> Result<Self, ClassifierError> {
        let mut labels: Vec<String> = fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        labels.sort();
        let mut samples = Vec::new();
        for (label, name) in labels.iter().enumerate() {
            let mut files: Vec<_> = fs::read_dir(root.join(name))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    p.extension()
                        .and_then(|x| x.to_str())
                        .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
                })
                .collect();
            files.sort();
            for path in files {
                let image = LeafImage::from_pnm(&fs::read(&path)?)?;
                samples.push(Sample {
                    input: preprocess(&image, input_size)?,
                    label,
                });
            }
        }
        if samples.is_empty() {
            return Err(ClassifierError::EmptyDataset);
        }
        Self::new(labels, samples)
    }

    /// `count` synthetic leaves alternating healthy and diseased; the diseased
    /// half cycles through the catalogue's classes.
    pub fn synthetic(count: usize, seed: u64, input_size: usize) -> Result<Self, ClassifierError> {
        let samples = synthetic_scenes(count, seed)
            .map(|(label, scene, s)| {
                let image = LeafCamera::default().capture(scene, s)?;
                Ok(Sample {
                    input: preprocess(&image, input_size)?,
                    label,
                })
            })
            .collect::<Result<Vec<_>, ClassifierError>>()?;
        Self::new(SYNTHETIC_LABELS.iter().map(|s| s.to_string()).collect(), samples)
    }

    /// Stratified split: each class contributes `round(n_c · train_percent / 100)`
    /// samples to the training side, chosen by a seeded shuffle.
    pub fn split(&self, train_percent: u8, seed: u64) -> Result<(Dataset, Dataset), ClassifierError> {
        if !(1..=99).contains(&train_percent) {
            return Err(ClassifierError::Config(format!(
                "train percentage must be within 1..=99, got {train_percent}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for class in 0..self.labels.len() {
            let mut idx: Vec<usize> = (0..self.samples.len())
                .filter(|&i| self.samples[i].label == class)
                .collect();
            idx.shuffle(&mut rng);
            let n_train = (idx.len() * usize::from(train_percent) + 50) / 100;
            for (k, i) in idx.into_iter().enumerate() {
                let side = if k < n_train { &mut train } else { &mut val };
                side.push(self.samples[i].clone());
            }
        }
        Ok((
            Dataset::new(self.labels.clone(), train)?,
            Dataset::new(self.labels.clone(), val)?,
        ))
    }
}

/// (label index, scene, capture seed) for the synthetic set.
fn synthetic_scenes(count: usize, seed: u64) -> impl Iterator<Item = (usize, LeafScene, u64)> {
    let classes: Vec<u8> = LeafCamera::default().catalog.classes.keys().copied().collect();
    (0..count).map(move |i| {
        let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        if i % 2 == 0 {
            (HEALTHY, LeafScene::Healthy, s)
        } else {
            (DISEASED, LeafScene::Diseased(classes[(i / 2) % classes.len()]), s)
        }
    })
}

/// Writes the synthetic set as `root/healthy/*.ppm` and `root/diseased/*.ppm`.
pub fn write_synthetic_dir(root: &Path, count: usize, seed: u64) -> Result<(), ClassifierError> {
    for label in SYNTHETIC_LABELS {
        fs::create_dir_all(root.join(label))?;
    }
    for (i, (label, scene, s)) in synthetic_scenes(count, seed).enumerate() {
        let image = LeafCamera::default().capture(scene, s)?;
        let path = root.join(SYNTHETIC_LABELS[label]).join(format!("leaf{i:05}.ppm"));
        fs::write(path, image.to_pnm())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(labels: &[usize]) -> Dataset {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Sample {
                input: Tensor::from_vec(vec![i as f64]),
                label,
            })
            .collect();
        Dataset::new(vec!["a".into(), "b".into()], samples).unwrap()
    }

    #[test]
    fn split_is_stratified_and_complete() {
        let d = toy(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        for (train_pct, _) in STANDARD_SPLITS {
            let (train, val) = d.split(train_pct, 3).unwrap();
            assert_eq!(train.len() + val.len(), d.len());
            let expected = (10 * usize::from(train_pct) + 50) / 100;
            assert_eq!(train.class_counts(), vec![expected, expected]);
            let mut ids: Vec<f64> = train
                .samples
                .iter()
                .chain(&val.samples)
                .map(|s| s.input.data()[0])
                .collect();
            ids.sort_by(f64::total_cmp);
            assert_eq!(ids, (0..20).map(f64::from).collect::<Vec<_>>());
        }
        assert_eq!(d.split(80, 3).unwrap(), d.split(80, 3).unwrap());
        assert!(d.split(0, 3).is_err());
        assert!(d.split(100, 3).is_err());
    }

    #[test]
    fn out_of_range_label_rejected() {
        let s = vec![Sample {
            input: Tensor::from_vec(vec![0.0]),
            label: 2,
        }];
        assert!(Dataset::new(vec!["a".into(), "b".into()], s).is_err());
    }

    #[test]
    fn synthetic_round_trips_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_dir(dir.path(), 4, 9).unwrap();
        let loaded = Dataset::load_dir(dir.path(), 16).unwrap();
        let direct = Dataset::synthetic(4, 9, 16).unwrap();
        assert_eq!(loaded.labels, direct.labels);
        assert_eq!(loaded.class_counts(), vec![2, 2]);
        let mut a: Vec<_> = loaded
            .samples
            .iter()
            .map(|s| (s.label, s.input.data().to_vec()))
            .collect();
        let mut b: Vec<_> = direct
            .samples
            .iter()
            .map(|s| (s.label, s.input.data().to_vec()))
            .collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_directory_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Dataset::load_dir(dir.path(), 16),
            Err(ClassifierError::EmptyDataset)
        ));
    }
}
