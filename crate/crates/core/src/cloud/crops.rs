use serde::{Deserialize, Serialize};

use super::CloudError;

/// Moisture band for one crop, in probe calibration units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropProfile {
    pub crop_name: String,
    pub threshold_sm: f64,
    pub release_sm: f64,
}

impl CropProfile {
    pub fn new(name: &str, threshold_sm: f64, release_sm: f64) -> Self {
        Self {
            crop_name: name.to_string(),
            threshold_sm,
            release_sm,
        }
    }

    pub fn threshold(&self) -> Threshold {
        Threshold {
            threshold_sm: self.threshold_sm,
            release_sm: self.release_sm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub threshold_sm: f64,
    pub release_sm: f64,
}

pub const DEFAULT_CROP: &str = "default";

/// Synthetic catalogue; the values are configuration, not agronomy.
pub fn default_catalogue() -> Vec<CropProfile> {
    vec![
        CropProfile::new(DEFAULT_CROP, 30.0, 35.0),
        CropProfile::new("tomato", 30.0, 50.0),
        CropProfile::new("potato", 32.0, 48.0),
        CropProfile::new("maize", 28.0, 45.0),
        CropProfile::new("wheat", 25.0, 40.0),
        CropProfile::new("rice", 45.0, 62.0),
    ]
}

/// Crop catalogue plus the currently active profile.
#[derive(Debug, Clone, PartialEq)]
pub struct CropRegistry {
    catalogue: Vec<CropProfile>,
    active: usize,
}

impl Default for CropRegistry {
    fn default() -> Self {
        Self::new(default_catalogue()).expect("built-in catalogue is valid")
    }
}

impl CropRegistry {
    /// The first entry is active until a crop is selected.
    pub fn new(catalogue: Vec<CropProfile>) -> Result<Self, CloudError> {
        if catalogue.is_empty() {
            return Err(CloudError::InvalidRequest("crop catalogue is empty".into()));
        }
        for (i, p) in catalogue.iter().enumerate() {
            if p.threshold_sm.is_nan() || p.release_sm.is_nan() || p.threshold_sm < 0.0 || p.release_sm < p.threshold_sm
            {
                return Err(CloudError::InvalidRequest(format!(
                    "crop {:?} needs 0 <= threshold <= release",
                    p.crop_name
                )));
            }
            if catalogue[..i].iter().any(|q| q.crop_name == p.crop_name) {
                return Err(CloudError::InvalidRequest(format!("duplicate crop {:?}", p.crop_name)));
            }
        }
        Ok(Self { catalogue, active: 0 })
    }

    pub fn catalogue(&self) -> &[CropProfile] {
        &self.catalogue
    }

    pub fn active(&self) -> &CropProfile {
        &self.catalogue[self.active]
    }

    pub fn select(&mut self, crop_name: &str) -> Result<&CropProfile, CloudError> {
        let idx = self
            .catalogue
            .iter()
            .position(|p| p.crop_name == crop_name)
            .ok_or_else(|| CloudError::NotFound(format!("crop {crop_name:?}")))?;
        self.active = idx;
        Ok(&self.catalogue[idx])
    }

    pub fn threshold(&self) -> Threshold {
        self.active().threshold()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_then_read_back() {
        let mut reg = CropRegistry::default();
        assert_eq!(reg.active().crop_name, "default");
        reg.select("tomato").unwrap();
        assert_eq!(
            reg.threshold(),
            Threshold {
                threshold_sm: 30.0,
                release_sm: 50.0
            }
        );
        let again = reg.clone();
        reg.select("tomato").unwrap();
        assert_eq!(reg, again);
    }

    #[test]
    fn unknown_crop_leaves_active_profile() {
        let mut reg = CropRegistry::default();
        reg.select("rice").unwrap();
        assert!(matches!(reg.select("xyz"), Err(CloudError::NotFound(_))));
        assert_eq!(reg.active().crop_name, "rice");
    }

    #[test]
    fn invalid_catalogues_rejected() {
        assert!(CropRegistry::new(vec![]).is_err());
        assert!(CropRegistry::new(vec![CropProfile::new("a", 40.0, 30.0)]).is_err());
        assert!(CropRegistry::new(vec![CropProfile::new("a", -1.0, 30.0)]).is_err());
        assert!(CropRegistry::new(vec![CropProfile::new("a", 1.0, 3.0), CropProfile::new("a", 1.0, 3.0)]).is_err());
    }
}
