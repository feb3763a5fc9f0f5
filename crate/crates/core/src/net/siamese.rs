//! Weight-shared encoding of both pair members and the L2 distance head.

use super::adadelta::AdaDelta;
use super::model::{EncoderModel, ForwardCache, Gradients};
use crate::error::{Error, Result};
use crate::losses::{batch_loss, batch_loss_grad, DistanceBatch, Label, LossConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    left: Tensor,
    right: Tensor,
    labels: Vec<Label>,
}

impl PairBatch {
    pub fn new(left: Tensor, right: Tensor, labels: Vec<Label>) -> Result<Self> {
        if left.shape() != right.shape() {
            return Err(Error::dim(format!("left {:?} vs right {:?}", left.shape(), right.shape())));
        }
        if left.rank() < 2 || left.shape()[0] != labels.len() {
            return Err(Error::dim(format!("{} labels for inputs of shape {:?}", labels.len(), left.shape())));
        }
        Ok(Self { left, right, labels })
    }

    pub fn left(&self) -> &Tensor {
        &self.left
    }

    pub fn right(&self) -> &Tensor {
        &self.right
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The pairs at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let pick = |t: &Tensor| -> Result<Tensor> {
            let w = t.row_len();
            let mut data = Vec::with_capacity(indices.len() * w);
            for &i in indices {
                data.extend_from_slice(t.row(i));
            }
            let mut shape = t.shape().to_vec();
            shape[0] = indices.len();
            Tensor::new(shape, data)
        };
        Self::new(pick(&self.left)?, pick(&self.right)?, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// All pairs of `parts` in order; every part must share the sample shape.
    pub fn concat(parts: &[PairBatch]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::dim("no batches to concatenate"))?;
        let join = |side: fn(&PairBatch) -> &Tensor| -> Result<Tensor> {
            let mut shape = side(first).shape().to_vec();
            let mut data = Vec::new();
            for p in parts {
                if side(p).shape()[1..] != shape[1..] {
                    return Err(Error::dim(format!("sample shape {:?} vs {:?}", side(p).shape(), shape)));
                }
                data.extend_from_slice(side(p).data());
            }
            shape[0] = parts.iter().map(PairBatch::len).sum();
            Tensor::new(shape, data)
        };
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Self::new(join(PairBatch::left)?, join(PairBatch::right)?, labels)
    }

    pub fn swapped(&self) -> Self {
        Self { left: self.right.clone(), right: self.left.clone(), labels: self.labels.clone() }
    }
}

/// Everything needed to push distance gradients back into the encoder.
#[derive(Debug, Clone)]
pub struct SiameseCache {
    forward: ForwardCache,
    descriptors: Tensor,
    distances: Vec<f64>,
}

/// Encodes `[left; right]` as one batch (so both sides share batch-norm
/// statistics) and returns `‖f(left_i) − f(right_i)‖₂`.
pub fn siamese_distance(model: &mut EncoderModel, batch: &PairBatch) -> Result<(DistanceBatch, SiameseCache)> {
    let n = batch.len();
    let mut shape = batch.left.shape().to_vec();
    shape[0] = 2 * n;
    let mut data = Vec::with_capacity(2 * batch.left.len());
    data.extend_from_slice(batch.left.data());
    data.extend_from_slice(batch.right.data());
    let (desc, forward) = model.forward(&Tensor::new(shape, data)?)?;
    let distances = pair_distances(&desc, n);
    let db = DistanceBatch::new(distances.clone(), batch.labels.clone())?;
    Ok((db, SiameseCache { forward, descriptors: desc, distances }))
}

/// Eval-mode distances; no batch coupling, model untouched.
pub fn siamese_distance_eval(model: &EncoderModel, batch: &PairBatch) -> Result<DistanceBatch> {
    let l = model.encode(&batch.left)?;
    let r = model.encode(&batch.right)?;
    let distances = (0..batch.len())
        .map(|i| l.row(i).iter().zip(r.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    DistanceBatch::new(distances, batch.labels.clone())
}

fn pair_distances(desc: &Tensor, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| desc.row(i).iter().zip(desc.row(n + i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect()
}

/// Parameter gradients given `∂loss/∂D_i` for every pair.
///
/// At `D_i = 0` the distance gradient is taken as the zero vector.
pub fn siamese_backward(model: &EncoderModel, cache: &SiameseCache, grad_distances: &[f64]) -> Result<Gradients> {
    let n = cache.distances.len();
    if grad_distances.len() != n {
        return Err(Error::dim(format!("{} distance gradients for {n} pairs", grad_distances.len())));
    }
    let d = cache.descriptors.row_len();
    let mut g = vec![0.0; 2 * n * d];
    for i in 0..n {
        let dist = cache.distances[i];
        if dist == 0.0 {
            continue;
        }
        let scale = grad_distances[i] / dist;
        let (l, r) = (cache.descriptors.row(i), cache.descriptors.row(n + i));
        for k in 0..d {
            let diff = scale * (l[k] - r[k]);
            g[i * d + k] = diff;
            g[(n + i) * d + k] = -diff;
        }
    }
    model.backward(&cache.forward, &Tensor::new(vec![2 * n, d], g)?)
}

/// Loss value and parameter gradients for one pair batch (no update).
pub fn loss_and_gradients(
    model: &mut EncoderModel,
    loss: &LossConfig,
    batch: &PairBatch,
) -> Result<(f64, Gradients)> {
    let (distances, cache) = siamese_distance(model, batch)?;
    let value = batch_loss(loss, &distances)?;
    let grad_d = batch_loss_grad(loss, &distances)?;
    let grads = siamese_backward(model, &cache, &grad_d)?;
    Ok((value, grads))
}

/// One optimization step. Returns the batch loss before the update.
pub fn train_step(model: &mut EncoderModel, opt: &mut AdaDelta, loss: &LossConfig, batch: &PairBatch) -> Result<f64> {
    let (value, grads) = loss_and_gradients(model, loss, batch)?;
    if !value.is_finite() {
        return Ok(value);
    }
    opt.step(&mut model.params_mut(), &grads.params)?;
    Ok(value)
}
