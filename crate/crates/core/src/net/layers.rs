use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which activations share one set of batch-norm statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnGranularity {
    /// One mean/SD/γ/β per activation position of the whole volume.
    FineGrained,
    /// One mean/SD/γ/β per channel (leading per-sample axis).
    Conventional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out_dim, in_dim]`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out_channels, in_channels, kernel, kernel]`
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Max pooling with partial windows at the far edges (ceil mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub granularity: BnGranularity,
    /// Per-sample activation shape this layer normalizes.
    pub activation_shape: Vec<usize>,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool(MaxPool),
    LeakyRelu { alpha: f64 },
    BatchNorm(BatchNorm),
}

#[derive(Debug, Clone)]
pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) struct Forward {
    pub output: Tensor,
    pub cache: LayerCache,
    pub stats: Option<BatchStats>,
}

impl Forward {
    fn plain(output: Tensor, cache: LayerCache) -> Self {
        Self { output, cache, stats: None }
    }
}

/// Whatever a layer needs to run its backward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Input(Tensor),
    Columns { cols: Tensor, input_shape: Vec<usize> },
    Pool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Norm { xhat: Tensor, inv_std: Vec<f64> },
    Empty,
}

fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..=bound)).collect())
        .expect("shape and data agree")
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: glorot(rng, &[out_dim, in_dim], in_dim, out_dim),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: glorot(rng, &[out_channels, in_channels, kernel, kernel], fan_in, fan_out),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.kernel || w < self.kernel {
            return Err(Error::dim(format!("{h}x{w} input smaller than {0}x{0} kernel", self.kernel)));
        }
        Ok(((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1))
    }
}

impl MaxPool {
    fn out_len(&self, len: usize) -> Result<usize> {
        if len < self.kernel {
            return Err(Error::dim(format!("pool input {len} smaller than kernel {}", self.kernel)));
        }
        Ok((len - self.kernel).div_ceil(self.stride) + 1)
    }
}

impl BatchNorm {
    pub fn new(granularity: BnGranularity, activation_shape: &[usize]) -> Self {
        let param_shape = match granularity {
            BnGranularity::FineGrained => activation_shape.to_vec(),
            BnGranularity::Conventional => vec![activation_shape[0]],
        };
        Self {
            granularity,
            activation_shape: activation_shape.to_vec(),
            gamma: Tensor::filled(&param_shape, 1.0),
            beta: Tensor::zeros(&param_shape),
            running_mean: Tensor::zeros(&param_shape),
            running_var: Tensor::filled(&param_shape, 1.0),
        }
    }

    /// (groups, elements per group per sample)
    fn grouping(&self) -> (usize, usize) {
        let total: usize = self.activation_shape.iter().product();
        match self.granularity {
            BnGranularity::FineGrained => (total, 1),
            BnGranularity::Conventional => (self.activation_shape[0], total / self.activation_shape[0]),
        }
    }
}

impl Layer {
    pub fn dense(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Layer::Dense(Dense::new(in_dim, out_dim, rng))
    }

    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        Layer::Conv2d(Conv2d::new(in_ch, out_ch, kernel, stride, rng))
    }

    pub fn leaky_relu(alpha: f64) -> Self {
        Layer::LeakyRelu { alpha }
    }

    pub fn relu() -> Self {
        Layer::LeakyRelu { alpha: 0.0 }
    }

    pub fn max_pool(kernel: usize, stride: usize) -> Self {
        Layer::MaxPool(MaxPool { kernel, stride })
    }

    pub fn batch_norm(granularity: BnGranularity, activation_shape: &[usize]) -> Self {
        Layer::BatchNorm(BatchNorm::new(granularity, activation_shape))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool(_) => "maxpool",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::BatchNorm(bn) => match bn.granularity {
                BnGranularity::FineGrained => "batchnorm_finegrained",
                BnGranularity::Conventional => "batchnorm_conventional",
            },
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                let n: usize = input.iter().product();
                if n != d.in_dim() {
                    return Err(Error::dim(format!("dense expects {} inputs, got {input:?}", d.in_dim())));
                }
                Ok(vec![d.out_dim()])
            }
            Layer::Conv2d(c) => {
                if input.len() != 3 || input[0] != c.in_channels {
                    return Err(Error::dim(format!(
                        "conv expects [{}, h, w] input, got {input:?}",
                        c.in_channels
                    )));
                }
                let (oh, ow) = c.out_hw(input[1], input[2])?;
                Ok(vec![c.out_channels, oh, ow])
            }
            Layer::MaxPool(p) => {
                if input.len() != 3 {
                    return Err(Error::dim(format!("maxpool expects [c, h, w] input, got {input:?}")));
                }
                Ok(vec![input[0], p.out_len(input[1])?, p.out_len(input[2])?])
            }
            Layer::LeakyRelu { .. } => Ok(input.to_vec()),
            Layer::BatchNorm(bn) => {
                if bn.activation_shape != input {
                    return Err(Error::dim(format!(
                        "batch norm built for {:?}, got {input:?}",
                        bn.activation_shape
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            Layer::MaxPool(_) | Layer::LeakyRelu { .. } => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            Layer::MaxPool(_) | Layer::LeakyRelu { .. } => vec![],
        }
    }

    /// `x` has shape `[n, ..per-sample input]`. Returns the output, the cache
    /// for [`Layer::backward`] (empty in eval mode) and, for batch norm in
    /// train mode, the batch statistics to fold into the running averages.
    pub(crate) fn forward(&self, x: &Tensor, mode: Mode, eps: f64) -> Result<Forward> {
        let n = x.shape()[0];
        let out_shape = self.output_shape(&x.shape()[1..])?;
        let keep = mode == Mode::Train;
        match self {
            Layer::Dense(d) => {
                let flat = x.clone().reshape(vec![n, d.in_dim()])?;
                let mut y = flat.matmul_t(&d.weight)?;
                let out = d.out_dim();
                for row in y.data_mut().chunks_mut(out) {
                    for (v, b) in row.iter_mut().zip(d.bias.data()) {
                        *v += b;
                    }
                }
                Ok(Forward::plain(y, if keep { LayerCache::Input(flat) } else { LayerCache::Empty }))
            }
            Layer::Conv2d(c) => {
                let (cols, oh, ow) = im2col(x, c)?;
                let rows = cols.matmul_t(&c.weight.clone().reshape(vec![c.out_channels, cols.shape()[1]])?)?;
                // rows: [n*oh*ow, out] -> [n, out, oh, ow]
                let plane = oh * ow;
                let mut y = vec![0.0; n * c.out_channels * plane];
                for s in 0..n {
                    for p in 0..plane {
                        let r = &rows.data()[(s * plane + p) * c.out_channels..][..c.out_channels];
                        for (o, v) in r.iter().enumerate() {
                            y[(s * c.out_channels + o) * plane + p] = v + c.bias.data()[o];
                        }
                    }
                }
                let y = Tensor::new(vec![n, c.out_channels, oh, ow], y)?;
                let cache = if keep {
                    LayerCache::Columns { cols, input_shape: x.shape().to_vec() }
                } else {
                    LayerCache::Empty
                };
                Ok(Forward::plain(y, cache))
            }
            Layer::MaxPool(p) => {
                let (ch, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut y = Vec::with_capacity(n * ch * oh * ow);
                let mut argmax = Vec::with_capacity(if keep { y.capacity() } else { 0 });
                for plane in x.data().chunks(h * w).enumerate() {
                    let (pi, src) = plane;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let (y0, x0) = (oy * p.stride, ox * p.stride);
                            let mut best = f64::NEG_INFINITY;
                            let mut at = 0;
                            for yy in y0..(y0 + p.kernel).min(h) {
                                for xx in x0..(x0 + p.kernel).min(w) {
                                    let v = src[yy * w + xx];
                                    if v > best {
                                        best = v;
                                        at = yy * w + xx;
                                    }
                                }
                            }
                            y.push(best);
                            if keep {
                                argmax.push(pi * h * w + at);
                            }
                        }
                    }
                }
                let mut shape = vec![n];
                shape.extend(&out_shape);
                let cache = if keep {
                    LayerCache::Pool { argmax, input_shape: x.shape().to_vec() }
                } else {
                    LayerCache::Empty
                };
                Ok(Forward::plain(Tensor::new(shape, y)?, cache))
            }
            Layer::LeakyRelu { alpha } => {
                let a = *alpha;
                let y = x.data().iter().map(|&v| if v > 0.0 { v } else { a * v }).collect();
                let cache = if keep { LayerCache::Input(x.clone()) } else { LayerCache::Empty };
                Ok(Forward::plain(Tensor::new(x.shape().to_vec(), y)?, cache))
            }
            Layer::BatchNorm(bn) => batch_norm_forward(bn, x, mode, eps),
        }
    }

    /// Folds batch statistics into a batch-norm layer's running averages.
    pub(crate) fn update_running(&mut self, stats: &BatchStats, momentum: f64) {
        if let Layer::BatchNorm(bn) = self {
            for (r, m) in bn.running_mean.data_mut().iter_mut().zip(&stats.mean) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            for (r, v) in bn.running_var.data_mut().iter_mut().zip(&stats.var) {
                *r = (1.0 - momentum) * *r + momentum * v;
            }
        }
    }

    /// Returns (gradient w.r.t. the layer input, gradients of [`Layer::params`]).
    pub(crate) fn backward(&self, cache: &LayerCache, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        match (self, cache) {
            (Layer::Dense(d), LayerCache::Input(x)) => {
                let dw = grad.t_matmul(x)?;
                let mut db = vec![0.0; d.out_dim()];
                for row in grad.data().chunks(d.out_dim()) {
                    for (b, g) in db.iter_mut().zip(row) {
                        *b += g;
                    }
                }
                let dx = grad.matmul(&d.weight)?;
                Ok((dx, vec![dw, Tensor::from_vec(db)?]))
            }
            (Layer::Conv2d(c), LayerCache::Columns { cols, input_shape }) => {
                let n = grad.shape()[0];
                let (oh, ow) = (grad.shape()[2], grad.shape()[3]);
                let plane = oh * ow;
                // [n, out, oh, ow] -> rows [n*oh*ow, out]
                let mut rows = vec![0.0; n * plane * c.out_channels];
                let mut db = vec![0.0; c.out_channels];
                for s in 0..n {
                    for o in 0..c.out_channels {
                        let g = &grad.data()[(s * c.out_channels + o) * plane..][..plane];
                        for (p, v) in g.iter().enumerate() {
                            rows[(s * plane + p) * c.out_channels + o] = *v;
                            db[o] += v;
                        }
                    }
                }
                let rows = Tensor::new(vec![n * plane, c.out_channels], rows)?;
                let wk = c.weight.clone().reshape(vec![c.out_channels, cols.shape()[1]])?;
                let dw = rows.t_matmul(cols)?.reshape(c.weight.shape().to_vec())?;
                let dcols = rows.matmul(&wk)?;
                let dx = col2im(&dcols, c, input_shape, oh, ow)?;
                Ok((dx, vec![dw, Tensor::from_vec(db)?]))
            }
            (Layer::MaxPool(_), LayerCache::Pool { argmax, input_shape }) => {
                let mut dx = vec![0.0; input_shape.iter().product()];
                for (g, &at) in grad.data().iter().zip(argmax) {
                    dx[at] += g;
                }
                Ok((Tensor::new(input_shape.clone(), dx)?, vec![]))
            }
            (Layer::LeakyRelu { alpha }, LayerCache::Input(x)) => {
                let dx = grad
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { alpha * g })
                    .collect();
                Ok((Tensor::new(x.shape().to_vec(), dx)?, vec![]))
            }
            (Layer::BatchNorm(bn), LayerCache::Norm { xhat, inv_std }) => batch_norm_backward(bn, xhat, inv_std, grad),
            _ => Err(Error::State(format!("{} layer has no usable training cache", self.name()))),
        }
    }
}

/// Unfolds every receptive field into a row: `[n*oh*ow, c*k*k]`.
fn im2col(x: &Tensor, c: &Conv2d) -> Result<(Tensor, usize, usize)> {
    let (n, ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = c.out_hw(h, w)?;
    let k = c.kernel;
    let width = ch * k * k;
    let mut cols = vec![0.0; n * oh * ow * width];
    let src = x.data();
    let mut r = 0;
    for s in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut cols[r * width..(r + 1) * width];
                let mut j = 0;
                for ci in 0..ch {
                    let base = (s * ch + ci) * h * w;
                    for ky in 0..k {
                        let off = base + (oy * c.stride + ky) * w + ox * c.stride;
                        row[j..j + k].copy_from_slice(&src[off..off + k]);
                        j += k;
                    }
                }
                r += 1;
            }
        }
    }
    Ok((Tensor::new(vec![n * oh * ow, width], cols)?, oh, ow))
}

fn col2im(dcols: &Tensor, c: &Conv2d, input_shape: &[usize], oh: usize, ow: usize) -> Result<Tensor> {
    let (n, ch, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let k = c.kernel;
    let width = ch * k * k;
    let mut dx = vec![0.0; n * ch * h * w];
    let mut r = 0;
    for s in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &dcols.data()[r * width..(r + 1) * width];
                let mut j = 0;
                for ci in 0..ch {
                    let base = (s * ch + ci) * h * w;
                    for ky in 0..k {
                        let off = base + (oy * c.stride + ky) * w + ox * c.stride;
                        for (d, g) in dx[off..off + k].iter_mut().zip(&row[j..j + k]) {
                            *d += g;
                        }
                        j += k;
                    }
                }
                r += 1;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// Normalizes each statistics group over the batch axis (and, for the
/// conventional variant, over the spatial positions of its channel).
pub fn batchnorm_forward_raw(
    x: &Tensor,
    granularity: BnGranularity,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<Tensor> {
    let mut bn = BatchNorm::new(granularity, &x.shape()[1..]);
    if bn.gamma.len() != gamma.len() || bn.beta.len() != beta.len() {
        return Err(Error::dim(format!(
            "γ/β need {} entries, got {} and {}",
            bn.gamma.len(),
            gamma.len(),
            beta.len()
        )));
    }
    bn.gamma.data_mut().copy_from_slice(gamma);
    bn.beta.data_mut().copy_from_slice(beta);
    Ok(batch_norm_forward(&bn, x, Mode::Train, eps)?.output)
}

fn batch_norm_forward(bn: &BatchNorm, x: &Tensor, mode: Mode, eps: f64) -> Result<Forward> {
    let n = x.shape()[0];
    let (groups, spatial) = bn.grouping();
    let group_index = |i: usize| (i / spatial) % groups;
    let count = (n * spatial) as f64;
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::DegenerateBatch("batch norm needs at least 2 samples in training".into()));
            }
            let mut mean = vec![0.0; groups];
            for (i, v) in x.data().iter().enumerate() {
                mean[group_index(i)] += v;
            }
            mean.iter_mut().for_each(|m| *m /= count);
            let mut var = vec![0.0; groups];
            for (i, v) in x.data().iter().enumerate() {
                let g = group_index(i);
                var[g] += (v - mean[g]) * (v - mean[g]);
            }
            var.iter_mut().for_each(|v| *v /= count);
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.data().to_vec(), bn.running_var.data().to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for (i, v) in x.data().iter().enumerate() {
        let g = group_index(i);
        let h = (v - mean[g]) * inv_std[g];
        xhat.push(h);
        y.push(bn.gamma.data()[g] * h + bn.beta.data()[g]);
    }
    let output = Tensor::new(x.shape().to_vec(), y)?;
    Ok(match mode {
        Mode::Train => Forward {
            output,
            cache: LayerCache::Norm { xhat: Tensor::new(x.shape().to_vec(), xhat)?, inv_std },
            stats: Some(BatchStats { mean, var }),
        },
        Mode::Eval => Forward::plain(output, LayerCache::Empty),
    })
}

fn batch_norm_backward(
    bn: &BatchNorm,
    xhat: &Tensor,
    inv_std: &[f64],
    grad: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    let n = grad.shape()[0];
    let (groups, spatial) = bn.grouping();
    let group_index = |i: usize| (i / spatial) % groups;
    let count = (n * spatial) as f64;
    let mut dgamma = vec![0.0; groups];
    let mut dbeta = vec![0.0; groups];
    for (i, (g, h)) in grad.data().iter().zip(xhat.data()).enumerate() {
        let k = group_index(i);
        dgamma[k] += g * h;
        dbeta[k] += g;
    }
    // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
    let dx = grad
        .data()
        .iter()
        .zip(xhat.data())
        .enumerate()
        .map(|(i, (g, h))| {
            let k = group_index(i);
            bn.gamma.data()[k] * inv_std[k] / count * (count * g - dbeta[k] - h * dgamma[k])
        })
        .collect();
    let shape = bn.gamma.shape().to_vec();
    Ok((
        Tensor::new(grad.shape().to_vec(), dx)?,
        vec![Tensor::new(shape.clone(), dgamma)?, Tensor::new(shape, dbeta)?],
    ))
}
