//! Multi-channel 2-D convolution over (channel, row, column) tensors.
//!
//! In [`ConvMode::Convolution`] the kernel is applied as a true convolution,
//! `G[m, n] = Σ_j Σ_k h[j, k] · f[m − j, n − k]`, i.e. flipped relative to a
//! sliding dot product. [`ConvMode::CrossCorrelation`] skips the flip, which
//! is what most deep-learning libraries call "convolution".

use serde::{Deserialize, Serialize};

use super::{ClassifierError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Only positions where the kernel fits entirely inside the input.
    Valid,
    /// Zero padding of `(k − 1) / 2` per side; requires odd kernel sizes.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ConvMode {
    #[default]
    Convolution,
    CrossCorrelation,
}

/// Weights laid out as (kernel row, kernel column, input channel, output channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    pub weights: Tensor,
    pub stride: usize,
    pub padding: Padding,
    pub mode: ConvMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    pad_h: usize,
    pad_w: usize,
    stride: usize,
}

impl ConvKernel {
    pub fn new(weights: Tensor, stride: usize, padding: Padding, mode: ConvMode) -> Result<Self, ClassifierError> {
        let shape = weights.shape();
        if shape.len() != 4 || shape.contains(&0) {
            return Err(ClassifierError::Shape(format!(
                "kernel must be (k_h, k_w, in, out) with non-zero dims, got {shape:?}"
            )));
        }
        if stride == 0 {
            return Err(ClassifierError::Shape("stride must be at least 1".into()));
        }
        if padding == Padding::Same && (shape[0].is_multiple_of(2) || shape[1].is_multiple_of(2)) {
            return Err(ClassifierError::Shape(format!(
                "same padding needs odd kernel sizes, got {}x{}",
                shape[0], shape[1]
            )));
        }
        Ok(Self {
            weights,
            stride,
            padding,
            mode,
        })
    }

    pub fn kernel_h(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn kernel_w(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[3]
    }

    /// Output shape for an input of shape (channels, rows, columns).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, ClassifierError> {
        let g = self.geometry(input)?;
        Ok(vec![g.cout, g.out_h, g.out_w])
    }

    fn geometry(&self, input: &[usize]) -> Result<Geometry, ClassifierError> {
        let [cin, h, w] = <[usize; 3]>::try_from(input)
            .map_err(|_| ClassifierError::Shape(format!("conv input must be (channels, rows, cols), got {input:?}")))?;
        let (kh, kw) = (self.kernel_h(), self.kernel_w());
        if cin != self.in_channels() {
            return Err(ClassifierError::Shape(format!(
                "kernel expects {} input channels, input has {cin}",
                self.in_channels()
            )));
        }
        let (pad_h, pad_w) = match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
        };
        if h + 2 * pad_h < kh || w + 2 * pad_w < kw {
            return Err(ClassifierError::Shape(format!(
                "input {h}x{w} smaller than kernel {kh}x{kw}"
            )));
        }
        Ok(Geometry {
            kh,
            kw,
            cin,
            cout: self.out_channels(),
            h,
            w,
            out_h: (h + 2 * pad_h - kh) / self.stride + 1,
            out_w: (w + 2 * pad_w - kw) / self.stride + 1,
            pad_h,
            pad_w,
            stride: self.stride,
        })
    }

    /// Index into `weights` of the tap applied at window offset (dy, dx).
    #[inline]
    fn tap(&self, g: &Geometry, dy: usize, dx: usize, c: usize, o: usize) -> usize {
        let (j, k) = match self.mode {
            ConvMode::Convolution => (g.kh - 1 - dy, g.kw - 1 - dx),
            ConvMode::CrossCorrelation => (dy, dx),
        };
        ((j * g.kw + k) * g.cin + c) * g.cout + o
    }
}

/// Visits every (output, input, weight) index triple that contributes to the result.
#[inline]
fn for_each_tap(kernel: &ConvKernel, g: &Geometry, mut visit: impl FnMut(usize, usize, usize)) {
    for o in 0..g.cout {
        for m in 0..g.out_h {
            for n in 0..g.out_w {
                let out_idx = (o * g.out_h + m) * g.out_w + n;
                for dy in 0..g.kh {
                    let y = (m * g.stride + dy) as isize - g.pad_h as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    for dx in 0..g.kw {
                        let x = (n * g.stride + dx) as isize - g.pad_w as isize;
                        if x < 0 || x >= g.w as isize {
                            continue;
                        }
                        for c in 0..g.cin {
                            let in_idx = (c * g.h + y as usize) * g.w + x as usize;
                            visit(out_idx, in_idx, kernel.tap(g, dy, dx, c, o));
                        }
                    }
                }
            }
        }
    }
}

/// Applies `kernel` to an input of shape (channels, rows, columns), summing over input channels.
pub fn conv2d(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor, ClassifierError> {
    let g = kernel.geometry(input.shape())?;
    let mut out = vec![0.0; g.cout * g.out_h * g.out_w];
    let (x, w) = (input.data(), kernel.weights.data());
    for_each_tap(kernel, &g, |oi, ii, wi| out[oi] += w[wi] * x[ii]);
    Tensor::new(vec![g.cout, g.out_h, g.out_w], out)
}

/// Gradients of a convolution with respect to its input and its weights.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &ConvKernel,
    grad_output: &Tensor,
) -> Result<(Tensor, Tensor), ClassifierError> {
    let g = kernel.geometry(input.shape())?;
    if grad_output.shape() != [g.cout, g.out_h, g.out_w] {
        return Err(ClassifierError::Shape(format!(
            "output gradient {:?} does not match conv output ({}, {}, {})",
            grad_output.shape(),
            g.cout,
            g.out_h,
            g.out_w
        )));
    }
    let mut grad_in = vec![0.0; input.len()];
    let mut grad_w = vec![0.0; kernel.weights.len()];
    let (x, w, go) = (input.data(), kernel.weights.data(), grad_output.data());
    for_each_tap(kernel, &g, |oi, ii, wi| {
        grad_in[ii] += w[wi] * go[oi];
        grad_w[wi] += x[ii] * go[oi];
    });
    Ok((
        Tensor::new(input.shape().to_vec(), grad_in)?,
        Tensor::new(kernel.weights.shape().to_vec(), grad_w)?,
    ))
}
