use patchbatch::net::{batchnorm_forward_raw, BnGranularity};
use patchbatch::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const DEFAULT_EPS: f64 = 1e-5;

/// Population mean and SD of every activation position across the batch.
fn per_position(y: &Tensor) -> Vec<(f64, f64)> {
    let n = y.shape()[0];
    let len = y.len() / n;
    (0..len)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| y.data()[i * len + j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            (mean, var.sqrt())
        })
        .collect()
}

/// Mean and SD of each channel over batch and spatial positions.
fn per_channel(y: &Tensor) -> Vec<(f64, f64)> {
    let (n, c) = (y.shape()[0], y.shape()[1]);
    let spatial = y.len() / (n * c);
    (0..c)
        .map(|ch| {
            let vals: Vec<f64> =
                (0..n).flat_map(|i| (0..spatial).map(move |s| (i * c + ch) * spatial + s)).map(|k| y.data()[k]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            (mean, var.sqrt())
        })
        .collect()
}

fn random_batch(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let len: usize = shape.iter().product();
    let stride = len / shape[0];
    // every position gets its own offset and spread
    let offsets: Vec<(f64, f64)> = (0..stride).map(|_| (rng.random_range(-5.0..5.0), rng.random_range(0.5..2.0))).collect();
    let data = (0..len).map(|i| {
        let (o, s) = offsets[i % stride];
        o + scale * s * rng.random_range(-1.0..1.0)
    });
    Tensor::new(shape, data.collect()).unwrap()
}

pub fn bn_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut notes = Vec::new();
    let mut pass = true;

    // Post-normalization moments with γ=1, β=0.
    let shape = vec![32, 3, 4, 4];
    let ones = vec![1.0; 48];
    let zeros = vec![0.0; 48];
    let mut worst_mu: f64 = 0.0;
    let mut worst_sd: f64 = 0.0;
    for (scale, eps) in [(1.0, 1e-12), (30.0, DEFAULT_EPS)] {
        let x = random_batch(&mut rng, shape.clone(), scale);
        let y = batchnorm_forward_raw(&x, BnGranularity::FineGrained, &ones, &zeros, eps).unwrap();
        for (m, s) in per_position(&y) {
            worst_mu = worst_mu.max(m.abs());
            worst_sd = worst_sd.max((s - 1.0).abs());
        }
    }
    pass &= worst_mu < 1e-8 && worst_sd < 1e-6;
    notes.push(format!("max |mu| {worst_mu:.1e}, max |SD-1| {worst_sd:.1e}"));

    // At the default eps on unit-scale data the SD is exactly sqrt(v/(v+eps)).
    let x = random_batch(&mut rng, shape.clone(), 1.0);
    let y = batchnorm_forward_raw(&x, BnGranularity::FineGrained, &ones, &zeros, DEFAULT_EPS).unwrap();
    let expected: Vec<f64> = per_position(&x).iter().map(|&(_, s)| (s * s / (s * s + DEFAULT_EPS)).sqrt()).collect();
    let eps_err = per_position(&y).iter().zip(&expected).map(|(&(_, s), e)| (s - e).abs()).fold(0.0, f64::max);
    pass &= eps_err < 1e-12;
    notes.push(format!("eps-shrunk SD matches sqrt(v/(v+eps)) to {eps_err:.1e}"));

    // Per-pixel vs per-channel statistics on a 2-channel 2x2 activation batch.
    let x = random_batch(&mut rng, vec![6, 2, 2, 2], 1.0);
    let fine = batchnorm_forward_raw(&x, BnGranularity::FineGrained, &[1.0; 8], &[0.0; 8], DEFAULT_EPS).unwrap();
    let conv = batchnorm_forward_raw(&x, BnGranularity::Conventional, &[1.0; 2], &[0.0; 2], DEFAULT_EPS).unwrap();
    let differ = fine.data().iter().zip(conv.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let fine_mu = per_position(&fine).iter().map(|m| m.0.abs()).fold(0.0, f64::max);
    let conv_mu = per_channel(&conv).iter().map(|m| m.0.abs()).fold(0.0, f64::max);
    let conv_pos_mu = per_position(&conv).iter().map(|m| m.0.abs()).fold(0.0, f64::max);
    let ok = differ > 1e-3 && fine_mu < 1e-8 && conv_mu < 1e-8 && conv_pos_mu > 1e-3;
    pass &= ok;
    notes.push(format!(
        "granularity test: outputs differ by {differ:.2}, fine per-pixel |mu| {fine_mu:.1e}, \
         conventional per-channel |mu| {conv_mu:.1e} (its per-pixel |mu| {conv_pos_mu:.2})"
    ));
    Outcome::new(pass, notes.join("; "))
}
