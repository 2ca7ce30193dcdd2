use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{ConvKernel, ConvMode, Padding};
use super::layers::{softmax, Affine, ConvLayer, DenseLayer, Layer, ResidualBlock};
use super::preprocess::preprocess;
use super::{BoundingBox, ClassifierError, Tensor};
use crate::sensors::LeafImage;

pub const HEALTHY_LABEL: &str = "healthy";

/// Per-layer parameter gradients, aligned with [`Network::layers`].
pub type Gradients = Vec<Vec<Tensor>>;

/// An ordered stack of layers producing logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self, ClassifierError> {
        let net = Self { input_shape, layers };
        net.shapes()?;
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Shape entering each layer, followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, ClassifierError> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| ClassifierError::Shape(format!("layer {i} ({}): {e}", layer.name())))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shapes()
            .expect("validated at construction")
            .pop()
            .expect("non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(Tensor::len).sum()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn layer_params_mut(&mut self, layer: usize) -> Vec<&mut Tensor> {
        self.layers[layer].params_mut()
    }

    fn check_input(&self, x: &Tensor) -> Result<(), ClassifierError> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(ClassifierError::Shape(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Input followed by every layer's output.
    pub fn forward_trace(&self, x: &Tensor) -> Result<Vec<Tensor>, ClassifierError> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty"))?;
            if !next.is_finite() {
                return Err(ClassifierError::NonFinite(layer.name()));
            }
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor, ClassifierError> {
        Ok(self.forward_trace(x)?.pop().expect("non-empty"))
    }

    /// Softmax cross-entropy against `target` and its gradient for every parameter.
    pub fn loss_and_gradients(&self, x: &Tensor, target: usize) -> Result<(f64, Gradients), ClassifierError> {
        let acts = self.forward_trace(x)?;
        let logits = acts.last().expect("non-empty");
        let (loss, mut grad) = cross_entropy(logits, target)?;
        let mut grads = vec![Vec::new(); self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (grad_in, layer_grads) = layer.backward(&acts[i], &grad)?;
            grads[i] = layer_grads;
            grad = grad_in;
        }
        Ok((loss, grads))
    }

    pub fn loss(&self, x: &Tensor, target: usize) -> Result<f64, ClassifierError> {
        cross_entropy(&self.logits(x)?, target).map(|(l, _)| l)
    }

    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) {
        for (layer, layer_grads) in self.layers.iter_mut().zip(grads) {
            for (param, grad) in layer.params_mut().into_iter().zip(layer_grads) {
                for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
                    *p -= learning_rate * g;
                }
            }
        }
    }
}

/// `-log softmax(logits)[target]` and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, target: usize) -> Result<(f64, Tensor), ClassifierError> {
    if target >= logits.len() {
        return Err(ClassifierError::Label(format!(
            "target class {target} out of range for {} outputs",
            logits.len()
        )));
    }
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = max + logits.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = log_sum - logits.data()[target];
    let mut grad = softmax(logits);
    grad.data_mut()[target] -= 1.0;
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub label: String,
    pub class_index: usize,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
    /// In model-input pixel coordinates; present for non-healthy labels.
    pub lesion_box: Option<BoundingBox>,
}

impl PredictionResult {
    /// Rescales the lesion box from model-input coordinates to an image of the given size.
    pub fn scaled_to(mut self, input: (usize, usize), image: (u32, u32)) -> Self {
        if let Some(b) = self.lesion_box {
            let sx = f64::from(image.0) / input.0 as f64;
            let sy = f64::from(image.1) / input.1 as f64;
            self.lesion_box = Some(BoundingBox {
                x: (f64::from(b.x) * sx).round() as u32,
                y: (f64::from(b.y) * sy).round() as u32,
                width: (f64::from(b.width) * sx).round() as u32,
                height: (f64::from(b.height) * sy).round() as u32,
            });
        }
        self
    }
}

/// A classifier: feature layers, exactly three fully connected layers, and
/// a softmax head over `labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    network: Network,
    labels: Vec<String>,
}

impl ModelSpec {
    pub fn new(network: Network, labels: Vec<String>) -> Result<Self, ClassifierError> {
        if labels.len() < 2 {
            return Err(ClassifierError::Label("a classifier needs at least two labels".into()));
        }
        let layers = network.layers();
        let dense_count = layers.iter().filter(|l| matches!(l, Layer::Dense(_))).count();
        if dense_count != 3 {
            return Err(ClassifierError::Shape(format!(
                "classifier head needs exactly three fully connected layers, found {dense_count}"
            )));
        }
        let first_dense = layers
            .iter()
            .position(|l| matches!(l, Layer::Dense(_)))
            .expect("three dense layers");
        if layers[first_dense..]
            .iter()
            .any(|l| !matches!(l, Layer::Dense(_) | Layer::Relu))
        {
            return Err(ClassifierError::Shape(
                "only activations may follow the first fully connected layer".into(),
            ));
        }
        if network.output_shape() != [labels.len()] {
            return Err(ClassifierError::Shape(format!(
                "network emits {:?} but there are {} labels",
                network.output_shape(),
                labels.len()
            )));
        }
        Ok(Self { network, labels })
    }

    /// Two 3x3 conv blocks with 2x2 max pooling, one conv residual block and
    /// a three-layer fully connected head, initialised with a seeded uniform
    /// Glorot scheme.
    pub fn toy(labels: Vec<String>, input_size: usize, seed: u64) -> Result<Self, ClassifierError> {
        let mut init = Initializer::new(seed);
        let classes = labels.len();
        let pooled = input_size / 4;
        let layers = vec![
            Layer::Conv(init.conv(1, 4)),
            Layer::Relu,
            Layer::MaxPool { size: 2 },
            Layer::Conv(init.conv(4, 8)),
            Layer::Relu,
            Layer::MaxPool { size: 2 },
            Layer::Residual(ResidualBlock::new(
                Affine::Conv(init.conv(8, 8)),
                Affine::Conv(init.conv(8, 8)),
            )),
            Layer::Flatten,
            Layer::Dense(init.dense(8 * pooled * pooled, 32)),
            Layer::Relu,
            Layer::Dense(init.dense(32, 16)),
            Layer::Relu,
            Layer::Dense(init.dense(16, classes)),
        ];
        Self::new(Network::new(vec![1, input_size, input_size], layers)?, labels)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn input_shape(&self) -> &[usize] {
        self.network.input_shape()
    }

    pub fn forward(&self, image: &Tensor) -> Result<PredictionResult, ClassifierError> {
        let acts = self.network.forward_trace(image)?;
        let probs = softmax(acts.last().expect("non-empty"));
        let class_index = probs
            .argmax()
            .ok_or_else(|| ClassifierError::Shape("empty output".into()))?;
        let label = self.labels[class_index].clone();
        let lesion_box = if label.eq_ignore_ascii_case(HEALTHY_LABEL) {
            None
        } else {
            self.lesion_box(&acts)
        };
        Ok(PredictionResult {
            label,
            class_index,
            confidence: probs.data()[class_index].clamp(0.0, 1.0),
            probabilities: probs.into_data(),
            lesion_box,
        })
    }

    /// Preprocesses a square-input model's image and classifies it; the
    /// lesion box is returned in image pixel coordinates.
    pub fn classify(&self, image: &LeafImage) -> Result<PredictionResult, ClassifierError> {
        let shape = self.input_shape();
        if shape.len() != 3 || shape[0] != 1 || shape[1] != shape[2] {
            return Err(ClassifierError::Shape(format!(
                "model input {shape:?} is not a square grayscale image"
            )));
        }
        let x = preprocess(image, shape[1])?;
        Ok(self
            .forward(&x)?
            .scaled_to((shape[2], shape[1]), (image.width(), image.height())))
    }

    /// Bounding rectangle of the top-decile cells of the last spatial
    /// feature map (summed over channels), in input pixel coordinates.
    fn lesion_box(&self, acts: &[Tensor]) -> Option<BoundingBox> {
        let fmap = acts.iter().rev().find(|a| a.shape().len() == 3 && a.shape()[1] > 0)?;
        if std::ptr::eq(fmap, &acts[0]) {
            return None;
        }
        let (c, h, w) = (fmap.shape()[0], fmap.shape()[1], fmap.shape()[2]);
        let strength: Vec<f64> = (0..h * w)
            .map(|i| (0..c).map(|ch| fmap.data()[ch * h * w + i]).sum())
            .collect();
        let mut sorted = strength.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = sorted[((sorted.len() as f64) * 0.9).floor() as usize].min(sorted[sorted.len() - 1]);
        let (mut y0, mut x0, mut y1, mut x1) = (h, w, 0, 0);
        for (i, &s) in strength.iter().enumerate() {
            if s >= cut {
                let (y, x) = (i / w, i % w);
                y0 = y0.min(y);
                x0 = x0.min(x);
                y1 = y1.max(y);
                x1 = x1.max(x);
            }
        }
        let in_h = self.input_shape()[1] as f64 / h as f64;
        let in_w = self.input_shape()[2] as f64 / w as f64;
        Some(BoundingBox {
            x: (x0 as f64 * in_w) as u32,
            y: (y0 as f64 * in_h) as u32,
            width: ((x1 - x0 + 1) as f64 * in_w) as u32,
            height: ((y1 - y0 + 1) as f64 * in_h) as u32,
        })
    }
}

/// Seeded uniform initialisation in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-s..=s)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape and data agree")
    }

    /// 3x3, stride 1, same padding.
    pub fn conv(&mut self, cin: usize, cout: usize) -> ConvLayer {
        let w = self.uniform(&[3, 3, cin, cout], 9 * cin, 9 * cout);
        let kernel = ConvKernel::new(w, 1, Padding::Same, ConvMode::Convolution).expect("valid kernel");
        ConvLayer::new(kernel, Tensor::zeros(&[cout])).expect("bias matches")
    }

    pub fn dense(&mut self, inputs: usize, outputs: usize) -> DenseLayer {
        let w = self.uniform(&[outputs, inputs], inputs, outputs);
        DenseLayer::new(w, Tensor::zeros(&[outputs])).expect("bias matches")
    }

    /// Random bias values, for gradient checks where zero biases would hide errors.
    pub fn bias(&mut self, n: usize) -> Tensor {
        self.uniform(&[n], n, n)
    }
}
