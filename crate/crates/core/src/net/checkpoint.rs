//! PBNET1 model checkpoints.
//!
//! ```text
//! "PBNET1"
//! u32     layer count
//! f64     batch-norm momentum
//! f64     batch-norm eps
//! u8      input rank, then u64 per input dimension
//! per layer: u8 tag, u8 argument count, u64 arguments
//!     0 dense      [in, out]
//!     1 conv2d     [in_channels, out_channels, kernel, stride]
//!     2 max-pool   [kernel, stride]
//!     3 leaky relu [alpha as f64 bits]
//!     4 batchnorm  [granularity (0 fine, 1 conventional), activation dims...]
//! parameter blobs, layers in order, row-major f64:
//!     dense, conv2d: weight, bias
//!     batchnorm:     gamma, beta, running_mean, running_var
//! ```
//!
//! All integers and floats are little-endian. Loaded models start in eval mode.

use std::fs;
use std::path::Path;

use super::layers::{BatchNorm, BnGranularity, Conv2d, Dense, Layer, MaxPool, Mode};
use super::model::EncoderModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PBNET1_MAGIC: &[u8; 6] = b"PBNET1";

fn blobs(layer: &Layer) -> Vec<&Tensor> {
    match layer {
        Layer::Dense(d) => vec![&d.weight, &d.bias],
        Layer::Conv2d(c) => vec![&c.weight, &c.bias],
        Layer::BatchNorm(b) => vec![&b.gamma, &b.beta, &b.running_mean, &b.running_var],
        Layer::MaxPool(_) | Layer::LeakyRelu { .. } => vec![],
    }
}

pub fn to_bytes(model: &EncoderModel) -> Vec<u8> {
    let mut out = PBNET1_MAGIC.to_vec();
    out.extend((model.layers().len() as u32).to_le_bytes());
    out.extend(model.bn_momentum.to_le_bytes());
    out.extend(model.bn_eps.to_le_bytes());
    out.push(model.input_shape().len() as u8);
    for &d in model.input_shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for layer in model.layers() {
        let (tag, args): (u8, Vec<u64>) = match layer {
            Layer::Dense(d) => (0, vec![d.in_dim() as u64, d.out_dim() as u64]),
            Layer::Conv2d(c) => {
                (1, [c.in_channels, c.out_channels, c.kernel, c.stride].map(|v| v as u64).to_vec())
            }
            Layer::MaxPool(p) => (2, vec![p.kernel as u64, p.stride as u64]),
            Layer::LeakyRelu { alpha } => (3, vec![alpha.to_bits()]),
            Layer::BatchNorm(b) => {
                let g = match b.granularity {
                    BnGranularity::FineGrained => 0,
                    BnGranularity::Conventional => 1,
                };
                (4, std::iter::once(g).chain(b.activation_shape.iter().map(|&d| d as u64)).collect())
            }
        };
        out.push(tag);
        out.push(args.len() as u8);
        for a in args {
            out.extend(a.to_le_bytes());
        }
    }
    for layer in model.layers() {
        for t in blobs(layer) {
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format("PBNET1", format!("truncated at byte {}", self.pos)));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize> {
        let d = self.u64()?;
        if d == 0 || d > u32::MAX as u64 {
            return Err(Error::format("PBNET1", format!("implausible dimension {d}")));
        }
        Ok(d as usize)
    }

    fn fill(&mut self, t: &mut Tensor) -> Result<()> {
        for v in t.data_mut() {
            *v = self.f64()?;
        }
        Ok(())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<EncoderModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(6)? != PBNET1_MAGIC {
        return Err(Error::format("PBNET1", "bad magic"));
    }
    let count = r.u32()? as usize;
    let momentum = r.f64()?;
    let eps = r.f64()?;
    let rank = r.u8()? as usize;
    let input = (0..rank).map(|_| r.dim()).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let tag = r.u8()?;
        let argc = r.u8()? as usize;
        let args = (0..argc).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let bad = || Error::format("PBNET1", format!("layer {i}: tag {tag} with {argc} arguments"));
        let dims = |a: &[u64]| -> Result<Vec<usize>> {
            a.iter()
                .map(|&d| if d == 0 || d > u32::MAX as u64 { Err(bad()) } else { Ok(d as usize) })
                .collect()
        };
        // Placeholder tensors; real values come from the blob section.
        let layer = match (tag, args.len()) {
            (0, 2) => {
                let d = dims(&args)?;
                Layer::Dense(Dense { weight: Tensor::zeros(&[d[1], d[0]]), bias: Tensor::zeros(&[d[1]]) })
            }
            (1, 4) => {
                let d = dims(&args)?;
                Layer::Conv2d(Conv2d {
                    in_channels: d[0],
                    out_channels: d[1],
                    kernel: d[2],
                    stride: d[3],
                    weight: Tensor::zeros(&[d[1], d[0], d[2], d[2]]),
                    bias: Tensor::zeros(&[d[1]]),
                })
            }
            (2, 2) => {
                let d = dims(&args)?;
                Layer::MaxPool(MaxPool { kernel: d[0], stride: d[1] })
            }
            (3, 1) => Layer::LeakyRelu { alpha: f64::from_bits(args[0]) },
            (4, n) if n >= 2 => {
                let granularity = match args[0] {
                    0 => BnGranularity::FineGrained,
                    1 => BnGranularity::Conventional,
                    _ => return Err(bad()),
                };
                Layer::BatchNorm(BatchNorm::new(granularity, &dims(&args[1..])?))
            }
            _ => return Err(bad()),
        };
        layers.push(layer);
    }
    for layer in &mut layers {
        match layer {
            Layer::Dense(d) => {
                r.fill(&mut d.weight)?;
                r.fill(&mut d.bias)?;
            }
            Layer::Conv2d(c) => {
                r.fill(&mut c.weight)?;
                r.fill(&mut c.bias)?;
            }
            Layer::BatchNorm(b) => {
                r.fill(&mut b.gamma)?;
                r.fill(&mut b.beta)?;
                r.fill(&mut b.running_mean)?;
                r.fill(&mut b.running_var)?;
            }
            Layer::MaxPool(_) | Layer::LeakyRelu { .. } => {}
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format("PBNET1", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut model = EncoderModel::from_parts(input, layers, momentum, eps)?;
    model.mode = Mode::Eval;
    Ok(model)
}

pub fn save(model: &EncoderModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<EncoderModel> {
    from_bytes(&fs::read(path)?)
}
