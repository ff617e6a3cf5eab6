//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ANOMF1"                         magic + format version
//! u32 len, bytes                   tag (UTF-8)
//! u64                              seed
//! u32 x3                           input shape (C, H, W)
//! u32                              latent layer index, u32::MAX if none
//! u32                              layer count
//! per layer: u8 kind, u32 fields   hyperparameters (see `write_layer`)
//! per layer: u32 n, n tensors      each tensor: u32 x4 extents, f32 data
//! ```
//!
//! Parameter tensors are written as raw `f32` bit patterns, so a save/load
//! round trip is bitwise exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::layer::LayerSpec;
use crate::nn::model::{LayerParams, ModelGraph};
use crate::nn::pool::OddExtent;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"ANOMF1";
const NO_LATENT: u32 = u32::MAX;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn act_code(a: Activation) -> usize {
    match a {
        Activation::Relu => 0,
        Activation::LeakyRelu => 1,
        Activation::Sigmoid => 2,
        Activation::Tanh => 3,
    }
}

fn odd_code(o: OddExtent) -> usize {
    match o {
        OddExtent::Error => 0,
        OddExtent::Pad => 1,
        OddExtent::Truncate => 2,
    }
}

fn write_layer(out: &mut Vec<u8>, layer: &LayerSpec) -> Result<()> {
    match *layer {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            out.push(0);
            for v in [in_channels, out_channels, kernel[0], kernel[1], stride, padding] {
                put_u32(out, v)?;
            }
        }
        LayerSpec::Conv2dTranspose {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            out.push(1);
            for v in [in_channels, out_channels, kernel[0], kernel[1], stride, padding] {
                put_u32(out, v)?;
            }
        }
        LayerSpec::MaxPool2d { window, odd } => {
            out.push(2);
            put_u32(out, window)?;
            put_u32(out, odd_code(odd))?;
        }
        LayerSpec::Dense { in_features, units } => {
            out.push(3);
            put_u32(out, in_features)?;
            put_u32(out, units)?;
        }
        LayerSpec::Activation(a) => {
            out.push(4);
            put_u32(out, act_code(a))?;
        }
        LayerSpec::BatchNorm { channels } => {
            out.push(5);
            put_u32(out, channels)?;
        }
        LayerSpec::Flatten => out.push(6),
        LayerSpec::Reshape { shape } => {
            out.push(7);
            for v in shape {
                put_u32(out, v)?;
            }
        }
    }
    Ok(())
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) -> Result<()> {
    for e in t.shape() {
        put_u32(out, e)?;
    }
    out.reserve(t.len() * 4);
    for v in t.data() {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    Ok(())
}

/// Serializes a model to bytes.
pub fn to_bytes(model: &ModelGraph<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, model.tag.len())?;
    out.extend_from_slice(model.tag.as_bytes());
    out.extend_from_slice(&model.seed.to_le_bytes());
    for e in model.input_shape {
        put_u32(&mut out, e)?;
    }
    match model.latent_layer {
        Some(l) => put_u32(&mut out, l)?,
        None => out.extend_from_slice(&NO_LATENT.to_le_bytes()),
    }
    put_u32(&mut out, model.layers.len())?;
    for layer in &model.layers {
        write_layer(&mut out, layer)?;
    }
    for p in &model.params {
        let tensors: Vec<&Tensor<f32>> = [&p.weight, &p.bias, &p.running_mean, &p.running_var]
            .into_iter()
            .flatten()
            .collect();
        put_u32(&mut out, tensors.len())?;
        for t in tensors {
            write_tensor(&mut out, t)?;
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn layer(&mut self) -> Result<LayerSpec> {
        let kind = self.u8()?;
        Ok(match kind {
            0 | 1 => {
                let in_channels = self.usize()?;
                let out_channels = self.usize()?;
                let kernel = [self.usize()?, self.usize()?];
                let stride = self.usize()?;
                let padding = self.usize()?;
                if kind == 0 {
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    }
                } else {
                    LayerSpec::Conv2dTranspose {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    }
                }
            }
            2 => {
                let window = self.usize()?;
                let odd = match self.u32()? {
                    0 => OddExtent::Error,
                    1 => OddExtent::Pad,
                    2 => OddExtent::Truncate,
                    c => return Err(Error::Format(format!("unknown odd-extent code {c}"))),
                };
                LayerSpec::MaxPool2d { window, odd }
            }
            3 => LayerSpec::Dense {
                in_features: self.usize()?,
                units: self.usize()?,
            },
            4 => LayerSpec::Activation(match self.u32()? {
                0 => Activation::Relu,
                1 => Activation::LeakyRelu,
                2 => Activation::Sigmoid,
                3 => Activation::Tanh,
                c => return Err(Error::Format(format!("unknown activation code {c}"))),
            }),
            5 => LayerSpec::BatchNorm { channels: self.usize()? },
            6 => LayerSpec::Flatten,
            7 => LayerSpec::Reshape {
                shape: [self.usize()?, self.usize()?, self.usize()?],
            },
            k => return Err(Error::Format(format!("unknown layer kind {k}"))),
        })
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let shape = [self.usize()?, self.usize()?, self.usize()?, self.usize()?];
        let n = shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .ok_or_else(|| Error::Format("tensor extent overflow".into()))?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        Tensor::from_vec(shape, data)
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelGraph<f32>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("bad magic (not an ANOMF1 model file)".into()));
    }
    let tag_len = r.usize()?;
    let tag = String::from_utf8(r.take(tag_len)?.to_vec()).map_err(|_| Error::Format("tag is not UTF-8".into()))?;
    let seed = r.u64()?;
    let input_shape = [r.usize()?, r.usize()?, r.usize()?];
    let latent = match r.u32()? {
        NO_LATENT => None,
        l => Some(l as usize),
    };
    let count = r.usize()?;
    let layers = (0..count).map(|_| r.layer()).collect::<Result<Vec<_>>>()?;
    let mut params = Vec::with_capacity(count);
    for layer in &layers {
        let n = r.usize()?;
        let mut ts = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?.into_iter();
        let p = match (n, layer) {
            (0, _) => LayerParams {
                weight: None,
                bias: None,
                running_mean: None,
                running_var: None,
            },
            (2, _) => LayerParams {
                weight: ts.next(),
                bias: ts.next(),
                running_mean: None,
                running_var: None,
            },
            (4, LayerSpec::BatchNorm { .. }) => LayerParams {
                weight: ts.next(),
                bias: ts.next(),
                running_mean: ts.next(),
                running_var: ts.next(),
            },
            _ => return Err(Error::Format(format!("{n} tensors stored for a {} layer", layer.kind()))),
        };
        params.push(p);
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    ModelGraph::from_parts(tag, input_shape, layers, params, seed, latent)
}

pub fn save_model(model: &ModelGraph<f32>, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelGraph<f32>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::GraphBuilder;

    fn sample_model() -> ModelGraph<f32> {
        let b = GraphBuilder::new([1, 8, 8])
            .conv(4, 3, 2, 1)
            .unwrap()
            .batchnorm()
            .unwrap()
            .act(Activation::LeakyRelu)
            .unwrap()
            .maxpool(2, OddExtent::Truncate)
            .unwrap()
            .flatten()
            .unwrap()
            .dense(5)
            .unwrap()
            .mark_latent()
            .reshape([5, 1, 1])
            .unwrap()
            .conv_transpose(2, 2, 2, 0)
            .unwrap()
            .act(Activation::Sigmoid)
            .unwrap();
        ModelGraph::from_builder("sample", b, 99).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = sample_model();
        let bytes = to_bytes(&m).unwrap();
        assert_eq!(&bytes[..6], b"ANOMF1");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = to_bytes(&sample_model()).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
