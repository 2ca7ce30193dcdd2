//! Binary model file, all integers and floats little-endian:
//!
//! ```text
//! "SCRP1"                       magic and format version
//! u32 layer count
//! per layer:
//!   u8  kind                    1 conv, 2 relu, 3 max pool, 4 residual, 5 flatten, 6 dense
//!   config                      conv: u32 stride, u8 padding (0 valid, 1 same), u8 mode (0 conv, 1 xcorr)
//!                               max pool: u32 size
//!                               residual: two branch steps, each a u8 kind (1 or 6) plus its config
//!   u32 tensor count, then per tensor: u32 ndim, ndim × u32 dims, row-major f64 data
//! u32 ndim, ndim × u32 dims      model input shape
//! u32 label count, per label: u32 byte length, UTF-8 bytes
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::conv::{ConvKernel, ConvMode, Padding};
use super::layers::{Affine, ConvLayer, DenseLayer, Layer, ResidualBlock};
use super::{ClassifierError, ModelSpec, Network, Tensor};

pub const MAGIC: &[u8; 5] = b"SCRP1";

const CONV: u8 = 1;
const RELU: u8 = 2;
const MAX_POOL: u8 = 3;
const RESIDUAL: u8 = 4;
const FLATTEN: u8 = 5;
const DENSE: u8 = 6;

pub fn encode(model: &ModelSpec) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let layers = model.network().layers();
    put_u32(&mut out, layers.len());
    for layer in layers {
        match layer {
            Layer::Conv(c) => {
                out.push(CONV);
                put_conv_config(&mut out, &c.kernel);
            }
            Layer::Relu => out.push(RELU),
            Layer::MaxPool { size } => {
                out.push(MAX_POOL);
                put_u32(&mut out, *size);
            }
            Layer::Residual(r) => {
                out.push(RESIDUAL);
                for step in [&r.first, &r.second] {
                    match step {
                        Affine::Conv(c) => {
                            out.push(CONV);
                            put_conv_config(&mut out, &c.kernel);
                        }
                        Affine::Dense(_) => out.push(DENSE),
                    }
                }
            }
            Layer::Flatten => out.push(FLATTEN),
            Layer::Dense(_) => out.push(DENSE),
        }
        let params = layer.params();
        put_u32(&mut out, params.len());
        for t in params {
            put_shape(&mut out, t.shape());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    put_shape(&mut out, model.input_shape());
    put_u32(&mut out, model.labels().len());
    for label in model.labels() {
        put_u32(&mut out, label.len());
        out.extend_from_slice(label.as_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ModelSpec, ClassifierError> {
    let mut r = Cursor { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(ClassifierError::Format("missing SCRP1 header".into()));
    }
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let kind = r.u8()?;
        let layer = match kind {
            CONV => {
                let (stride, padding, mode) = r.conv_config()?;
                let [w, b] = r.tensors()?;
                Layer::Conv(ConvLayer::new(ConvKernel::new(w, stride, padding, mode)?, b)?)
            }
            RELU => {
                r.tensors::<0>()?;
                Layer::Relu
            }
            MAX_POOL => {
                let size = r.u32()?;
                r.tensors::<0>()?;
                Layer::MaxPool { size }
            }
            FLATTEN => {
                r.tensors::<0>()?;
                Layer::Flatten
            }
            DENSE => {
                let [w, b] = r.tensors()?;
                Layer::Dense(DenseLayer::new(w, b)?)
            }
            RESIDUAL => {
                let steps = [r.step_config()?, r.step_config()?];
                let [w1, b1, w2, b2] = r.tensors()?;
                let build = |cfg: Option<(usize, Padding, ConvMode)>, w, b| -> Result<Affine, ClassifierError> {
                    Ok(match cfg {
                        Some((stride, padding, mode)) => {
                            Affine::Conv(ConvLayer::new(ConvKernel::new(w, stride, padding, mode)?, b)?)
                        }
                        None => Affine::Dense(DenseLayer::new(w, b)?),
                    })
                };
                Layer::Residual(ResidualBlock::new(build(steps[0], w1, b1)?, build(steps[1], w2, b2)?))
            }
            other => return Err(ClassifierError::Format(format!("unknown layer kind {other}"))),
        };
        layers.push(layer);
    }
    let input_shape = r.shape()?;
    let n_labels = r.u32()?;
    let mut labels = Vec::with_capacity(n_labels.min(1024));
    for _ in 0..n_labels {
        let len = r.u32()?;
        let s = std::str::from_utf8(r.take(len)?).map_err(|e| ClassifierError::Format(e.to_string()))?;
        labels.push(s.to_string());
    }
    if r.pos != bytes.len() {
        return Err(ClassifierError::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    ModelSpec::new(Network::new(input_shape, layers)?, labels)
}

pub fn write_to(model: &ModelSpec, mut w: impl Write) -> Result<(), ClassifierError> {
    w.write_all(&encode(model))?;
    Ok(())
}

pub fn read_from(mut r: impl Read) -> Result<ModelSpec, ClassifierError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save(model: &ModelSpec, path: &Path) -> Result<(), ClassifierError> {
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelSpec, ClassifierError> {
    decode(&fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("model dimensions fit in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_shape(out: &mut Vec<u8>, shape: &[usize]) {
    put_u32(out, shape.len());
    for &d in shape {
        put_u32(out, d);
    }
}

fn put_conv_config(out: &mut Vec<u8>, k: &ConvKernel) {
    put_u32(out, k.stride);
    out.push(match k.padding {
        Padding::Valid => 0,
        Padding::Same => 1,
    });
    out.push(match k.mode {
        ConvMode::Convolution => 0,
        ConvMode::CrossCorrelation => 1,
    });
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ClassifierError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ClassifierError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, ClassifierError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn shape(&mut self) -> Result<Vec<usize>, ClassifierError> {
        let ndim = self.u32()?;
        if ndim > 8 {
            return Err(ClassifierError::Format(format!("implausible tensor rank {ndim}")));
        }
        (0..ndim).map(|_| self.u32()).collect()
    }

    fn tensor(&mut self) -> Result<Tensor, ClassifierError> {
        let shape = self.shape()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.saturating_mul(8) <= self.bytes.len() - self.pos)
            .ok_or_else(|| ClassifierError::Format(format!("tensor {shape:?} exceeds file")))?;
        let data = self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(shape, data)
    }

    fn tensors<const N: usize>(&mut self) -> Result<[Tensor; N], ClassifierError> {
        let count = self.u32()?;
        if count != N {
            return Err(ClassifierError::Format(format!("expected {N} tensors, found {count}")));
        }
        let v = (0..N).map(|_| self.tensor()).collect::<Result<Vec<_>, _>>()?;
        Ok(v.try_into().expect("length checked"))
    }

    fn conv_config(&mut self) -> Result<(usize, Padding, ConvMode), ClassifierError> {
        let stride = self.u32()?;
        let padding = match self.u8()? {
            0 => Padding::Valid,
            1 => Padding::Same,
            p => return Err(ClassifierError::Format(format!("unknown padding {p}"))),
        };
        let mode = match self.u8()? {
            0 => ConvMode::Convolution,
            1 => ConvMode::CrossCorrelation,
            m => return Err(ClassifierError::Format(format!("unknown conv mode {m}"))),
        };
        Ok((stride, padding, mode))
    }

    /// `Some` for a conv branch step, `None` for dense.
    fn step_config(&mut self) -> Result<Option<(usize, Padding, ConvMode)>, ClassifierError> {
        match self.u8()? {
            CONV => self.conv_config().map(Some),
            DENSE => Ok(None),
            k => Err(ClassifierError::Format(format!(
                "residual step kind {k} is not conv or dense"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelSpec {
        ModelSpec::toy(vec!["healthy".into(), "diseased".into()], 16, 4).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = toy();
        let bytes = encode(&m);
        assert_eq!(&bytes[..5], b"SCRP1");
        assert_eq!(
            u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize,
            m.network().layers().len()
        );
        assert_eq!(decode(&bytes).unwrap(), m);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.scrp");
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
    }

    #[test]
    fn dense_residual_round_trip() {
        use crate::classifier::model::Initializer;
        let mut init = Initializer::new(2);
        let net = Network::new(
            vec![4],
            vec![
                Layer::Residual(ResidualBlock::new(
                    Affine::Dense(init.dense(4, 3)),
                    Affine::Dense(init.dense(3, 4)),
                )),
                Layer::Dense(init.dense(4, 3)),
                Layer::Dense(init.dense(3, 3)),
                Layer::Dense(init.dense(3, 2)),
            ],
        )
        .unwrap();
        let m = ModelSpec::new(net, vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(decode(&encode(&m)).unwrap(), m);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode(&toy());
        assert!(decode(b"SCRP2").is_err());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad_kind = bytes.clone();
        bad_kind[9] = 99;
        assert!(decode(&bad_kind).is_err());
    }
}
