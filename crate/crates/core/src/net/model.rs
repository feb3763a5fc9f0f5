use rand::Rng;

use super::layers::{BnGranularity, Layer, LayerCache, Mode, DEFAULT_LEAKY_ALPHA};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// A feed-forward stack shared by both branches of the Siamese encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    pub mode: Mode,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

/// Activations recorded by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    batch: usize,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// One tensor per entry of [`EncoderModel::params`], same order.
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

impl EncoderModel {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let model = Self {
            input_shape,
            layers,
            mode: Mode::Train,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            bn_eps: DEFAULT_BN_EPS,
        };
        model.output_shape()?;
        Ok(model)
    }

    /// Dense ReLU network used for the Gaussian-cluster experiment: `depth`
    /// hidden layers of width `hidden` and a linear output layer of width `out`.
    pub fn mlp(input: usize, hidden: usize, depth: usize, out: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = input;
        for _ in 0..depth {
            layers.push(Layer::dense(width, hidden, rng));
            layers.push(Layer::relu());
            width = hidden;
        }
        layers.push(Layer::dense(width, out, rng));
        Self::new(vec![input], layers)
    }

    /// Two-convolution miniature of the patch network for `patch`×`patch`
    /// inputs: conv(8,3×3)→BN→LReLU→pool(2/2)→conv(16,3×3)→BN→LReLU→
    /// dense(`descriptor`)→BN→LReLU.
    pub fn patch_miniature(
        patch: usize,
        descriptor: usize,
        granularity: BnGranularity,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut b = StackBuilder::new(vec![1, patch, patch]);
        b.push(Layer::conv(1, 8, 3, 1, rng))?;
        b.norm_act(granularity)?;
        b.push(Layer::max_pool(2, 2))?;
        b.push(Layer::conv(8, 16, 3, 1, rng))?;
        b.norm_act(granularity)?;
        let flat: usize = b.shape.iter().product();
        b.push(Layer::dense(flat, descriptor, rng))?;
        b.norm_act(granularity)?;
        b.finish()
    }

    /// The full 51×51 → 512-D stack: four conv3×3/BN/LReLU/pool2 blocks and a
    /// final conv2×2/BN/LReLU block.
    pub fn full_patch_network(granularity: BnGranularity, rng: &mut impl Rng) -> Result<Self> {
        let mut b = StackBuilder::new(vec![1, 51, 51]);
        let mut ch = 1;
        for out in [32, 64, 128, 256] {
            b.push(Layer::conv(ch, out, 3, 1, rng))?;
            b.norm_act(granularity)?;
            b.push(Layer::max_pool(2, 2))?;
            ch = out;
        }
        b.push(Layer::conv(ch, 512, 2, 1, rng))?;
        b.norm_act(granularity)?;
        b.finish()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn descriptor_dim(&self) -> usize {
        self.output_shape().map(|s| s.iter().product()).unwrap_or(0)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() < 2 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::dim(format!(
                "model expects [n, {:?}] input, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Runs the stack in the current mode. Returns `[n, D]` descriptors.
    ///
    /// In training mode batch-norm layers use batch statistics and update
    /// their running averages; in eval mode they only read running averages.
    pub fn forward(&mut self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x)?;
        let n = x.shape()[0];
        let mode = self.mode;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &mut self.layers {
            let step = layer.forward(&cur, mode, self.bn_eps)?;
            if let Some(stats) = &step.stats {
                layer.update_running(stats, self.bn_momentum);
            }
            caches.push(step.cache);
            cur = step.output;
        }
        let d = cur.row_len();
        Ok((cur.reshape(vec![n, d])?, ForwardCache { mode, batch: n, layers: caches }))
    }

    /// Eval-mode forward that leaves the model untouched.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let n = x.shape()[0];
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur, Mode::Eval, self.bn_eps)?.output;
        }
        let d = cur.row_len();
        cur.reshape(vec![n, d])
    }

    /// Gradients of a scalar loss whose gradient w.r.t. the descriptors is
    /// `grad_descriptors`.
    pub fn backward(&self, cache: &ForwardCache, grad_descriptors: &Tensor) -> Result<Gradients> {
        if cache.mode != Mode::Train {
            return Err(Error::State("backward needs a cache from a training-mode forward pass".into()));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::State("cache was produced by a different model".into()));
        }
        let d = self.descriptor_dim();
        if grad_descriptors.shape() != [cache.batch, d] {
            return Err(Error::dim(format!(
                "expected [{}, {d}] descriptor gradient, got {:?}",
                cache.batch,
                grad_descriptors.shape()
            )));
        }
        let mut out_shape = vec![cache.batch];
        out_shape.extend(self.output_shape()?);
        let mut grad = grad_descriptors.clone().reshape(out_shape)?;
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let (g_in, g_params) = layer.backward(lc, &grad)?;
            per_layer.push(g_params);
            grad = g_in;
        }
        per_layer.reverse();
        let mut in_shape = vec![cache.batch];
        in_shape.extend(&self.input_shape);
        Ok(Gradients { params: per_layer.into_iter().flatten().collect(), input: grad.reshape(in_shape)? })
    }

    pub(crate) fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        bn_momentum: f64,
        bn_eps: f64,
    ) -> Result<Self> {
        let mut m = Self::new(input_shape, layers)?;
        m.bn_momentum = bn_momentum;
        m.bn_eps = bn_eps;
        Ok(m)
    }
}

struct StackBuilder {
    input: Vec<usize>,
    shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl StackBuilder {
    fn new(input: Vec<usize>) -> Self {
        Self { shape: input.clone(), input, layers: Vec::new() }
    }

    fn push(&mut self, layer: Layer) -> Result<()> {
        self.shape = layer.output_shape(&self.shape)?;
        self.layers.push(layer);
        Ok(())
    }

    fn norm_act(&mut self, granularity: BnGranularity) -> Result<()> {
        self.push(Layer::batch_norm(granularity, &self.shape.clone()))?;
        self.push(Layer::leaky_relu(DEFAULT_LEAKY_ALPHA))
    }

    fn finish(self) -> Result<EncoderModel> {
        EncoderModel::new(self.input, self.layers)
    }
}
