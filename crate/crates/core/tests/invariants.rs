use patchbatch::flow::FlowField;
use patchbatch::image::synthetic_pair;
use patchbatch::losses::{Label, LossVariant};
use patchbatch::matcher::{bidirectional_filter, patchmatch, DescriptorField, MatchConfig};
use patchbatch::net::{
    batchnorm_forward_raw, siamese_distance, siamese_distance_eval, BnGranularity, EncoderModel, PairBatch,
};
use patchbatch::pipeline::{flow_metrics, run_flow, PipelineConfig};
use patchbatch::synthgauss::{auc, run_experiment, ExperimentConfig, Method};
use patchbatch::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize, sample: &[usize]) -> PairBatch {
    let shape: Vec<usize> = std::iter::once(n).chain(sample.iter().copied()).collect();
    let labels = (0..n).map(|i| if i % 2 == 0 { Label::Matching } else { Label::NonMatching }).collect();
    PairBatch::new(random_tensor(rng, shape.clone()), random_tensor(rng, shape), labels).unwrap()
}

fn random_field(rng: &mut ChaCha8Rng, w: usize, h: usize, dim: usize) -> DescriptorField {
    DescriptorField::new(w, h, dim, (0..w * h * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn toy_model(seed: u64) -> EncoderModel {
    EncoderModel::patch_miniature(7, 6, BnGranularity::FineGrained, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn siamese_swap_keeps_distances(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = toy_model(seed);
        let batch = random_pairs(&mut rng, n, &[1, 7, 7]);
        let (a, _) = siamese_distance(&mut model, &batch).unwrap();
        let (b, _) = siamese_distance(&mut model, &batch.swapped()).unwrap();
        for (x, y) in a.distances().iter().zip(b.distances()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        let a = siamese_distance_eval(&model, &batch).unwrap();
        let b = siamese_distance_eval(&model, &batch.swapped()).unwrap();
        prop_assert_eq!(a.distances(), b.distances());
    }

    #[test]
    fn fine_bn_is_conventional_on_flat_activations(seed in any::<u64>(), n in 2usize..10, d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, vec![n, d]);
        let gamma: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
        let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fine = batchnorm_forward_raw(&x, BnGranularity::FineGrained, &gamma, &beta, 1e-5).unwrap();
        let conv = batchnorm_forward_raw(&x, BnGranularity::Conventional, &gamma, &beta, 1e-5).unwrap();
        for (a, b) in fine.data().iter().zip(conv.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn eval_mode_has_no_batch_coupling(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = toy_model(seed ^ 1);
        let x = random_tensor(&mut rng, vec![n, 1, 7, 7]);
        let all = model.encode(&x).unwrap();
        prop_assert_eq!(&all, &model.encode(&x).unwrap());
        let per = all.len() / n;
        for i in 0..n {
            let one = Tensor::new(vec![1, 1, 7, 7], x.data()[i * 49..(i + 1) * 49].to_vec()).unwrap();
            let alone = model.encode(&one).unwrap();
            prop_assert_eq!(alone.data(), &all.data()[i * per..(i + 1) * per]);
        }
    }

    #[test]
    fn auc_ignores_monotone_transforms(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let mut labels: Vec<Label> = (0..n).map(|_| if rng.random_bool(0.5) { Label::Matching } else { Label::NonMatching }).collect();
        labels[0] = Label::Matching;
        labels[1] = Label::NonMatching;
        let squared: Vec<f64> = d.iter().map(|x| x * x).collect();
        prop_assert_eq!(auc(&d, &labels).unwrap(), auc(&squared, &labels).unwrap());
    }

    #[test]
    fn bidirectional_survivors_pair_up(seed in any::<u64>(), w in 2usize..10, h in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_field(&mut rng, w, h, 2), random_field(&mut rng, w, h, 2));
        let cfg = MatchConfig { search_radius: 4, seed, ..Default::default() };
        let fwd = patchmatch(&a, &b, &cfg).unwrap();
        let bwd = patchmatch(&b, &a, &MatchConfig { seed: seed.wrapping_add(1), ..cfg }).unwrap();
        let ab = bidirectional_filter(&fwd, &bwd).unwrap();
        let ba = bidirectional_filter(&bwd, &fwd).unwrap();
        prop_assert_eq!(ab.valid_count(), ba.valid_count());
        for y in 0..h {
            for x in 0..w {
                if let Some((u, v)) = ab.get(x, y) {
                    let (tx, ty) = ((x as i32 + u) as usize, (y as i32 + v) as usize);
                    prop_assert_eq!(ba.get(tx, ty), Some((-u, -v)));
                }
            }
        }
    }

    #[test]
    fn patchmatch_is_seeded(seed in any::<u64>(), w in 1usize..10, h in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_field(&mut rng, w, h, 3), random_field(&mut rng, w, h, 3));
        let cfg = MatchConfig { search_radius: 5, seed, ..Default::default() };
        prop_assert_eq!(patchmatch(&a, &b, &cfg).unwrap(), patchmatch(&a, &b, &cfg).unwrap());
    }
}

#[test]
fn experiment_report_is_reproducible() {
    let cfg = ExperimentConfig {
        dim: 8,
        n_train: 120,
        n_test: 120,
        nc_list: vec![3],
        methods: vec![Method::Baseline, Method::Trained(LossVariant::SpringSd)],
        reps: 2,
        epochs: 2,
        batch: 32,
        margins: vec![1.0, 2.0],
        tune_epochs: 1,
        hidden: 8,
        depth: 1,
        out_dim: 4,
        seed: 3,
        ..Default::default()
    };
    let render = |r: &patchbatch::synthgauss::AucReport| {
        let mut out = Vec::new();
        r.write_rows_csv(&mut out).unwrap();
        out
    };
    let a = run_experiment(&cfg, |_| {}).unwrap();
    let b = run_experiment(&cfg, |_| {}).unwrap();
    assert_eq!(render(&a), render(&b));
    assert_eq!(a.failures(), 0);
}

#[test]
fn pipeline_is_deterministic_and_filters_preserve_values() {
    let (a, b, gt) = synthetic_pair(40, 32, 2, -1, 5);
    let model = toy_model(2);
    let cfg = PipelineConfig {
        matcher: MatchConfig { search_radius: 6, cc_area_threshold: 4, seed: 4, ..Default::default() },
        backward_seed: 5,
        ..Default::default()
    };
    let one = run_flow(&model, &a, &b, &cfg, Some(&gt)).unwrap();
    let two = run_flow(&model, &a, &b, &cfg, Some(&gt)).unwrap();
    assert_eq!(one.sparse, two.sparse);
    assert_eq!((&one.dense.u, &one.dense.v), (&two.dense.u, &two.dense.v));
    let raw: &FlowField = &one.forward.flow;
    for i in 0..raw.width * raw.height {
        if one.sparse.valid[i] {
            assert!(raw.valid[i]);
            assert_eq!((one.sparse.u[i], one.sparse.v[i]), (raw.u[i], raw.v[i]));
        }
    }
}

#[test]
fn metrics_are_monotone_in_their_thresholds() {
    let (a, b, gt) = synthetic_pair(36, 30, 3, 1, 8);
    let model = toy_model(9);
    let cfg = PipelineConfig {
        matcher: MatchConfig { search_radius: 6, cc_area_threshold: 1, seed: 1, ..Default::default() },
        ..Default::default()
    };
    let dense = run_flow(&model, &a, &b, &cfg, None).unwrap().dense;
    let mut last: Option<(f64, f64)> = None;
    for r in [0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 40.0] {
        let m = flow_metrics(&dense, &gt, r, r).unwrap();
        if let Some((bad, acc)) = last {
            assert!(m.bad_rate <= bad && m.accuracy >= acc);
        }
        last = Some((m.bad_rate, m.accuracy));
    }
}
