use patchbatch::losses::{batch_loss, batch_loss_grad, pair_loss, DistanceBatch, Label, LossConfig, LossVariant};
use patchbatch::net::{loss_and_gradients, BnGranularity, EncoderModel, Layer, PairBatch};
use patchbatch::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const EXACT: f64 = 1e-12;
const REL: f64 = 1e-5;

pub fn loss_values() -> Outcome {
    use Label::*;
    use LossVariant::*;
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    let mut check = |what: &str, got: f64, want: f64| {
        let err = (got - want).abs();
        worst = worst.max(err);
        if !(err <= EXACT) {
            bad.push(format!("{what}: {got} != {want}"));
        }
    };
    let pl = |v, y, d, m| pair_loss(v, y, d, m).unwrap();
    check("spring Y=1 D=m", pl(Spring, NonMatching, 10.0, 10.0), 0.0);
    check("spring Y=1 D>m", pl(Spring, NonMatching, 12.5, 10.0), 0.0);
    check("spring Y=0 D=3", pl(Spring, Matching, 3.0, 10.0), 4.5);
    check("spring Y=1 D=4 m=10", pl(Spring, NonMatching, 4.0, 10.0), 18.0);
    check("centrifuge Y=1 D=0 m=10", pl(Centrifuge, NonMatching, 0.0, 10.0), 50.0);
    check("centrifuge Y=1 D=m", pl(Centrifuge, NonMatching, 10.0, 10.0), 0.0);
    check("centrifuge Y=1 D>m", pl(Centrifuge, NonMatching, 11.0, 10.0), 0.0);
    check("centrifuge Y=0 D=2", pl(Centrifuge, Matching, 2.0, 10.0), 2.0);

    let batch = DistanceBatch::new(vec![1.0, 3.0, 10.0, 10.0], vec![Matching, Matching, NonMatching, NonMatching]).unwrap();
    let sd = batch_loss(&LossConfig::new(SpringSd, 10.0, 0.8).unwrap(), &batch).unwrap();
    check("spring+sd composite", sd, 1.2);
    let c1 = batch_loss(&LossConfig::new(CentrifugeSd, 10.0, 1.0).unwrap(), &batch).unwrap();
    let c0 = batch_loss(&LossConfig::new(Centrifuge, 10.0, 0.8).unwrap(), &batch).unwrap();
    check("centrifuge+sd at lambda 1 equals centrifuge", c1, c0);
    let flat = DistanceBatch::new(vec![2.0, 2.0, 5.0, 5.0], vec![Matching, Matching, NonMatching, NonMatching]).unwrap();
    let z = batch_loss(&LossConfig::new(SpringSd, 10.0, 0.8).unwrap(), &flat).unwrap();
    check("spring+sd zero-SD batch", z, 0.8 * (2.0 + 2.0 + 12.5 + 12.5) / 4.0);

    let mut detail = format!("11 values, max abs err {worst:.1e} (tol {EXACT:.0e})");
    if !bad.is_empty() {
        detail += &format!("; mismatches: {}", bad.join("; "));
    }
    Outcome::new(bad.is_empty(), detail)
}

fn rel_err(a: f64, b: f64) -> f64 {
    rel_err_floor(a, b, 1e-6)
}

fn rel_err_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences of every batch loss on random batches, keeping
/// distances away from the hinge point.
fn batch_loss_fd(instances: usize) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for inst in 0..instances {
        let n = rng.random_range(4..24);
        let m: f64 = rng.random_range(0.5..5.0);
        let mut labels: Vec<Label> = (0..n).map(|i| if i % 2 == 0 { Label::Matching } else { Label::NonMatching }).collect();
        labels.rotate_left(inst % n);
        let d: Vec<f64> = (0..n)
            .map(|_| loop {
                let v = rng.random_range(0.01..1.6 * m);
                if (v - m).abs() > 1e-2 {
                    break v;
                }
            })
            .collect();
        for variant in LossVariant::ALL {
            let cfg = LossConfig::new(variant, m, rng.random_range(0.1..1.0)).unwrap();
            let batch = DistanceBatch::new(d.clone(), labels.clone()).unwrap();
            let g = batch_loss_grad(&cfg, &batch).unwrap();
            for i in 0..n {
                let h = 1e-4;
                let at = |x: f64| {
                    let mut dd = d.clone();
                    dd[i] = x;
                    batch_loss(&cfg, &DistanceBatch::new(dd, labels.clone()).unwrap()).unwrap()
                };
                let fd = (at(d[i] + h) - at(d[i] - h)) / (2.0 * h);
                worst = worst.max(rel_err(g[i], fd));
            }
            checked += 1;
        }
    }
    (checked, worst)
}

/// conv → fine BN → leaky ReLU → max-pool → dense → fine BN → leaky ReLU.
fn toy_stack(rng: &mut ChaCha8Rng) -> EncoderModel {
    let layers = vec![
        Layer::conv(1, 2, 3, 1, rng),
        Layer::batch_norm(BnGranularity::FineGrained, &[2, 5, 5]),
        Layer::leaky_relu(0.1),
        Layer::max_pool(2, 2),
        Layer::dense(2 * 3 * 3, 4, rng),
        Layer::batch_norm(BnGranularity::FineGrained, &[4]),
        Layer::leaky_relu(0.1),
    ];
    let mut model = EncoderModel::new(vec![1, 7, 7], layers).unwrap();
    // non-trivial affine parameters so their gradients are exercised
    for layer in model.layers_mut() {
        if let Layer::BatchNorm(bn) = layer {
            bn.gamma.data_mut().iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
            bn.beta.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
    }
    model
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize) -> PairBatch {
    let mut gen = || Tensor::new(vec![n, 1, 7, 7], (0..n * 49).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (l, r) = (gen(), gen());
    let labels = (0..n).map(|i| if i % 2 == 0 { Label::Matching } else { Label::NonMatching }).collect();
    PairBatch::new(l, r, labels).unwrap()
}

/// Every parameter of the toy stack against central differences of the
/// full pair loss. Returns (parameters checked, worst relative error).
fn stack_fd(variant: LossVariant, seed: u64) -> (usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = toy_stack(&mut rng);
    let batch = random_pairs(&mut rng, 8);
    let loss = LossConfig::new(variant, 6.0, 0.8).unwrap();
    let (value, grads) = loss_and_gradients(&mut model.clone(), &loss, &batch).unwrap();
    let h = 1e-5;
    // Gradients that vanish exactly (a bias feeding batch norm) leave only
    // rounding noise of order |L| eps / h in the difference quotient; the
    // floor makes that noise level count as REL.
    let floor = (value.abs().max(1.0) * f64::EPSILON / h / REL).max(1e-6);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut floored = 0;
    let n_params = model.params().len();
    for p in 0..n_params {
        for j in 0..model.params()[p].len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[p].data_mut()[j] += delta;
                loss_and_gradients(&mut m, &loss, &batch).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = grads.params[p].data()[j];
            floored += usize::from(a.abs().max(fd.abs()) < floor);
            worst = worst.max(rel_err_floor(a, fd, floor));
            count += 1;
        }
    }
    (count, floored, worst)
}

pub fn gradient_suite() -> Outcome {
    let (batches, loss_worst) = batch_loss_fd(100);
    let mut stack_worst: f64 = 0.0;
    let mut params = 0;
    let mut floored = 0;
    let mut runs = 0;
    for variant in LossVariant::ALL {
        for seed in 0..3 {
            let (c, f, w) = stack_fd(variant, 100 + seed);
            params += c;
            floored += f;
            runs += 1;
            stack_worst = stack_worst.max(w);
        }
    }
    let pass = loss_worst < REL && stack_worst < REL;
    Outcome::new(
        pass,
        format!(
            "{batches} loss batches worst rel err {loss_worst:.1e}; {runs} full-stack runs ({params} params, {floored} below the rounding floor) worst rel err {stack_worst:.1e} (tol {REL:.0e})"
        ),
    )
}
