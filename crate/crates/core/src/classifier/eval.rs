use serde::{Deserialize, Serialize};

use super::{ClassifierError, Dataset, ModelSpec};

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_pairs(labels: Vec<String>, pairs: &[(usize, usize)]) -> Result<Self, ClassifierError> {
        let mut m = Self::new(labels);
        for &(actual, predicted) in pairs {
            m.record(actual, predicted)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<(), ClassifierError> {
        let n = self.labels.len();
        if actual >= n || predicted >= n {
            return Err(ClassifierError::Label(format!(
                "class pair ({actual}, {predicted}) out of range for {n} classes"
            )));
        }
        self.counts[actual][predicted] += 1;
        Ok(())
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.row_sums().iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`; zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    pub fn misclassified(&self) -> u64 {
        self.total() - self.trace()
    }
}

pub fn evaluate(model: &ModelSpec, testset: &Dataset) -> Result<(ConfusionMatrix, f64), ClassifierError> {
    if testset.labels != model.labels() {
        return Err(ClassifierError::Label(
            "test set labels differ from model labels".into(),
        ));
    }
    let mut m = ConfusionMatrix::new(testset.labels.clone());
    for s in &testset.samples {
        let p = model.forward(&s.input)?;
        m.record(s.label, p.class_index)?;
    }
    let acc = m.accuracy();
    Ok((m, acc))
}
