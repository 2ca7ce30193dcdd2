use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, Dataset, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Seeds the per-epoch sample order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 0.003,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelSpec,
    /// Mean cross-entropy over the training set before any update, then the
    /// mean over each epoch's SGD steps.
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace holds the initial loss")
    }
}

/// Per-sample stochastic gradient descent with a fixed learning rate.
pub fn train(model: &ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if data.labels != model.labels() {
        return Err(ClassifierError::Label(format!(
            "dataset labels {:?} differ from model labels {:?}",
            data.labels,
            model.labels()
        )));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(ClassifierError::Config(format!(
            "learning rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let initial = data
        .samples
        .iter()
        .map(|s| model.network().loss(&s.input, s.label))
        .sum::<Result<f64, _>>()?
        / data.len() as f64;
    let mut loss_trace = vec![initial];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let s = &data.samples[i];
            let (loss, grads) = model.network().loss_and_gradients(&s.input, s.label)?;
            model.network_mut().apply_gradients(&grads, cfg.learning_rate);
            total += loss;
        }
        let mean = total / data.len() as f64;
        tracing::debug!(epoch, loss = mean, "epoch complete");
        loss_trace.push(mean);
    }
    Ok(TrainOutcome { model, loss_trace })
}
