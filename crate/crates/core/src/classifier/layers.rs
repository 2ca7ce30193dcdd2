//! Network layers with forward and backward passes.
//!
//! Backward passes take the layer's forward input and recompute whatever
//! intermediate they need, so the network only has to keep activations.

use serde::{Deserialize, Serialize};

use super::conv::{conv2d, conv2d_backward, ConvKernel};
use super::{ClassifierError, Tensor};

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

fn relu_backward(input: &Tensor, grad: &Tensor) -> Result<Tensor, ClassifierError> {
    input.zip_map(grad, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Exp-normalised probabilities; the maximum logit is subtracted first.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|v| (v - max).exp());
    let total: f64 = exps.data().iter().sum();
    exps.map(|v| v / total)
}

/// Convolution plus one bias per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub kernel: ConvKernel,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn new(kernel: ConvKernel, bias: Tensor) -> Result<Self, ClassifierError> {
        if bias.shape() != [kernel.out_channels()] {
            return Err(ClassifierError::Shape(format!(
                "conv bias {:?} must have one entry per output channel ({})",
                bias.shape(),
                kernel.out_channels()
            )));
        }
        Ok(Self { kernel, bias })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, ClassifierError> {
        let mut out = conv2d(x, &self.kernel)?;
        let plane = out.shape()[1] * out.shape()[2];
        for (o, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let b = self.bias.data()[o];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        Ok(out)
    }

    fn backward(&self, x: &Tensor, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>), ClassifierError> {
        let (grad_in, grad_w) = conv2d_backward(x, &self.kernel, grad)?;
        let plane = grad.shape()[1] * grad.shape()[2];
        let grad_b: Vec<f64> = grad.data().chunks(plane).map(|c| c.iter().sum()).collect();
        Ok((grad_in, vec![grad_w, Tensor::from_vec(grad_b)]))
    }
}

/// Fully connected layer; weights are (outputs, inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self, ClassifierError> {
        if weights.shape().len() != 2 || bias.shape() != [weights.shape()[0]] {
            return Err(ClassifierError::Shape(format!(
                "dense weights {:?} / bias {:?} do not agree",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    fn check_input(&self, x: &Tensor) -> Result<(), ClassifierError> {
        if x.len() != self.inputs() {
            return Err(ClassifierError::Shape(format!(
                "dense layer expects {} inputs, got {:?}",
                self.inputs(),
                x.shape()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, ClassifierError> {
        self.check_input(x)?;
        let n = self.inputs();
        let out = self
            .weights
            .data()
            .chunks(n)
            .zip(self.bias.data())
            .map(|(row, b)| b + row.iter().zip(x.data()).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        Ok(Tensor::from_vec(out))
    }

    fn backward(&self, x: &Tensor, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>), ClassifierError> {
        self.check_input(x)?;
        let n = self.inputs();
        let mut grad_in = vec![0.0; n];
        let mut grad_w = Vec::with_capacity(self.weights.len());
        for (row, &g) in self.weights.data().chunks(n).zip(grad.data()) {
            for (gi, w) in grad_in.iter_mut().zip(row) {
                *gi += w * g;
            }
            grad_w.extend(x.data().iter().map(|v| v * g));
        }
        Ok((
            Tensor::new(x.shape().to_vec(), grad_in)?,
            vec![Tensor::new(self.weights.shape().to_vec(), grad_w)?, grad.clone()],
        ))
    }
}

/// The weight-and-bias step inside a residual branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Affine {
    Dense(DenseLayer),
    Conv(ConvLayer),
}

impl Affine {
    fn forward(&self, x: &Tensor) -> Result<Tensor, ClassifierError> {
        match self {
            Affine::Dense(d) => d.forward(x),
            Affine::Conv(c) => c.forward(x),
        }
    }

    fn backward(&self, x: &Tensor, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>), ClassifierError> {
        match self {
            Affine::Dense(d) => d.backward(x, grad),
            Affine::Conv(c) => c.backward(x, grad),
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, ClassifierError> {
        match self {
            Affine::Dense(d) => {
                if input.iter().product::<usize>() != d.inputs() {
                    return Err(ClassifierError::Shape(format!(
                        "dense layer expects {} inputs, got {input:?}",
                        d.inputs()
                    )));
                }
                Ok(vec![d.outputs()])
            }
            Affine::Conv(c) => c.kernel.output_shape(input),
        }
    }

    fn params(&self) -> [&Tensor; 2] {
        match self {
            Affine::Dense(d) => [&d.weights, &d.bias],
            Affine::Conv(c) => [&c.kernel.weights, &c.bias],
        }
    }

    fn params_mut(&mut self) -> [&mut Tensor; 2] {
        match self {
            Affine::Dense(d) => [&mut d.weights, &mut d.bias],
            Affine::Conv(c) => [&mut c.kernel.weights, &mut c.bias],
        }
    }
}

/// `H(x) = F(x) + x` with `F(x) = W2 · relu(W1 · x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub first: Affine,
    pub second: Affine,
}

impl ResidualBlock {
    pub fn new(first: Affine, second: Affine) -> Self {
        Self { first, second }
    }

    /// Shapes must compose so that `F(x)` has the shape of `x`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, ClassifierError> {
        let mid = self.first.output_shape(input)?;
        let out = self.second.output_shape(&mid)?;
        // A dense branch returns a flat vector; it is laid back onto x's shape.
        let same = out == input || (out.len() == 1 && out[0] == input.iter().product::<usize>());
        if !same {
            return Err(ClassifierError::Shape(format!(
                "residual branch maps {input:?} to {out:?}; the identity shortcut needs equal shapes"
            )));
        }
        Ok(input.to_vec())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ClassifierError> {
        self.output_shape(x.shape())?;
        self.branch(x)?.reshape(x.shape())?.add(x)
    }

    fn branch(&self, x: &Tensor) -> Result<Tensor, ClassifierError> {
        let z1 = self.first.forward(x)?;
        self.second.forward(&relu(&z1))
    }

    fn backward(&self, x: &Tensor, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>), ClassifierError> {
        let z1 = self.first.forward(x)?;
        let a1 = relu(&z1);
        let z2_shape = self.second.output_shape(a1.shape())?;
        let grad_z2 = grad.clone().reshape(&z2_shape)?;
        let (grad_a1, second_grads) = self.second.backward(&a1, &grad_z2)?;
        let grad_z1 = relu_backward(&z1, &grad_a1)?;
        let (grad_x_branch, first_grads) = self.first.backward(x, &grad_z1)?;
        let grad_x = grad_x_branch.reshape(x.shape())?.add(grad)?;
        let mut grads = first_grads;
        grads.extend(second_grads);
        Ok((grad_x, grads))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    /// Non-overlapping max pooling with a square window of `size`.
    MaxPool {
        size: usize,
    },
    Residual(ResidualBlock),
    Flatten,
    Dense(DenseLayer),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Residual(_) => "residual",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, ClassifierError> {
        match self {
            Layer::Conv(c) => c.kernel.output_shape(input),
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool { size } => {
                let [c, h, w] = <[usize; 3]>::try_from(input)
                    .map_err(|_| ClassifierError::Shape(format!("max pool needs (c, h, w), got {input:?}")))?;
                if *size == 0 || h < *size || w < *size {
                    return Err(ClassifierError::Shape(format!(
                        "cannot pool {h}x{w} with window {size}"
                    )));
                }
                Ok(vec![c, h / size, w / size])
            }
            Layer::Residual(r) => r.output_shape(input),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => Affine::Dense(d.clone()).output_shape(input),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ClassifierError> {
        match self {
            Layer::Conv(c) => c.forward(x),
            Layer::Relu => Ok(relu(x)),
            Layer::MaxPool { size } => max_pool(x, *size).map(|(out, _)| out),
            Layer::Residual(r) => r.forward(x),
            Layer::Flatten => x.clone().reshape(&[x.len()]),
            Layer::Dense(d) => d.forward(x),
        }
    }

    /// Returns the gradient with respect to the layer input and to each parameter tensor.
    pub fn backward(&self, x: &Tensor, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>), ClassifierError> {
        match self {
            Layer::Conv(c) => c.backward(x, grad),
            Layer::Relu => Ok((relu_backward(x, grad)?, Vec::new())),
            Layer::MaxPool { size } => {
                let (_, winners) = max_pool(x, *size)?;
                let mut grad_in = vec![0.0; x.len()];
                for (&src, &g) in winners.iter().zip(grad.data()) {
                    grad_in[src] += g;
                }
                Ok((Tensor::new(x.shape().to_vec(), grad_in)?, Vec::new()))
            }
            Layer::Residual(r) => r.backward(x, grad),
            Layer::Flatten => Ok((grad.clone().reshape(x.shape())?, Vec::new())),
            Layer::Dense(d) => d.backward(x, grad),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv(c) => vec![&c.kernel.weights, &c.bias],
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            Layer::Residual(r) => {
                let mut p = r.first.params().to_vec();
                p.extend(r.second.params());
                p
            }
            Layer::Relu | Layer::MaxPool { .. } | Layer::Flatten => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv(c) => vec![&mut c.kernel.weights, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            Layer::Residual(r) => {
                let mut p: Vec<&mut Tensor> = r.first.params_mut().into_iter().collect();
                p.extend(r.second.params_mut());
                p
            }
            Layer::Relu | Layer::MaxPool { .. } | Layer::Flatten => Vec::new(),
        }
    }
}

/// Pooled output plus, per output element, the flat index of the input that won.
/// Ties go to the first element in row-major window order.
fn max_pool(x: &Tensor, size: usize) -> Result<(Tensor, Vec<usize>), ClassifierError> {
    let out_shape = Layer::MaxPool { size }.output_shape(x.shape())?;
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut winners = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for m in 0..oh {
            for n in 0..ow {
                let mut best = (usize::MAX, f64::NEG_INFINITY);
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = (ch * h + m * size + dy) * w + n * size + dx;
                        let v = x.data()[idx];
                        if best.0 == usize::MAX || v > best.1 {
                            best = (idx, v);
                        }
                    }
                }
                winners.push(best.0);
                out.push(best.1);
            }
        }
    }
    Ok((Tensor::new(out_shape, out)?, winners))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::conv::{ConvMode, Padding};

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&Tensor::from_vec(vec![-3.0])).data(), &[0.0]);
        assert_eq!(relu(&Tensor::from_vec(vec![2.5])).data(), &[2.5]);
        let mixed = vec![-1.0, 0.0, 0.5, -0.25, 7.0];
        let expected: Vec<f64> = mixed.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        assert_eq!(relu(&Tensor::from_vec(mixed)).data(), expected.as_slice());
    }

    #[test]
    fn softmax_examples() {
        let uniform = softmax(&Tensor::from_vec(vec![2.0; 4]));
        assert!(uniform.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let peaked = softmax(&Tensor::from_vec(vec![0.0, 1000.0, -5.0]));
        assert!(peaked.data()[1] > 1.0 - 1e-12);
        assert!(peaked.is_finite());
        let p = softmax(&Tensor::from_vec(vec![0.3, -1.2, 4.4, 0.0, 2.2]));
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    fn dense(w: Vec<f64>, b: Vec<f64>) -> DenseLayer {
        let n = b.len();
        DenseLayer::new(Tensor::new(vec![n, w.len() / n], w).unwrap(), Tensor::from_vec(b)).unwrap()
    }

    #[test]
    fn zero_residual_is_identity() {
        let block = ResidualBlock::new(
            Affine::Dense(dense(vec![0.0; 9], vec![0.0; 3])),
            Affine::Dense(dense(vec![0.0; 9], vec![0.0; 3])),
        );
        let x = Tensor::from_vec(vec![1.5, -2.0, 0.25]);
        assert_eq!(block.forward(&x).unwrap(), x);
    }

    #[test]
    fn residual_hand_computation() {
        // W1 = [[1, 2], [-1, 1]], b1 = [0, 0.5], W2 = [[2, 0], [1, -1]], b2 = [1, 0], x = [1, 1]
        // W1 x + b1 = [3, 0.5]; relu -> [3, 0.5]; W2 . + b2 = [7, 2.5]; + x = [8, 3.5]
        let block = ResidualBlock::new(
            Affine::Dense(dense(vec![1.0, 2.0, -1.0, 1.0], vec![0.0, 0.5])),
            Affine::Dense(dense(vec![2.0, 0.0, 1.0, -1.0], vec![1.0, 0.0])),
        );
        let out = block.forward(&Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[8.0, 3.5]);
        // With x = [1, -1] the second hidden unit is negative and clipped:
        // W1 x + b1 = [-1, -1.5] -> relu [0, 0] -> [1, 0] + x = [2, -1]
        let out = block.forward(&Tensor::from_vec(vec![1.0, -1.0])).unwrap();
        assert_eq!(out.data(), &[2.0, -1.0]);
    }

    #[test]
    fn residual_shape_mismatch_rejected() {
        let block = ResidualBlock::new(
            Affine::Dense(dense(vec![0.0; 6], vec![0.0; 2])),
            Affine::Dense(dense(vec![0.0; 4], vec![0.0; 2])),
        );
        assert!(block.output_shape(&[3]).is_err());
        assert!(block.forward(&Tensor::from_vec(vec![0.0; 3])).is_err());
    }

    #[test]
    fn conv_residual_preserves_shape() {
        let k = || {
            ConvLayer::new(
                ConvKernel::new(
                    Tensor::filled(&[3, 3, 2, 2], 0.1),
                    1,
                    Padding::Same,
                    ConvMode::Convolution,
                )
                .unwrap(),
                Tensor::zeros(&[2]),
            )
            .unwrap()
        };
        let block = ResidualBlock::new(Affine::Conv(k()), Affine::Conv(k()));
        let x = Tensor::filled(&[2, 4, 5], 1.0);
        assert_eq!(block.forward(&x).unwrap().shape(), &[2, 4, 5]);
        assert_eq!(block.output_shape(&[2, 4, 5]).unwrap(), vec![2, 4, 5]);
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let x = Tensor::new(vec![1, 2, 4], vec![1.0, 5.0, 2.0, 2.0, 3.0, 0.0, 9.0, 1.0]).unwrap();
        let layer = Layer::MaxPool { size: 2 };
        assert_eq!(layer.forward(&x).unwrap().data(), &[5.0, 9.0]);
        let (g, _) = layer
            .backward(&x, &Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn dense_forward() {
        let d = dense(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.5, -0.5]);
        let out = d.forward(&Tensor::from_vec(vec![1.0, 0.0, -1.0])).unwrap();
        assert_eq!(out.data(), &[-1.5, -2.5]);
        assert!(d.forward(&Tensor::from_vec(vec![1.0])).is_err());
    }
}
