use patchbatch::flow::FlowField;
use patchbatch::image::{synthetic_pair, textured_image};
use patchbatch::interp::{densify, edge_cost, geodesic_knn, EdgeCostMap, DEFAULT_K, DEFAULT_KAPPA};
use patchbatch::losses::{LossConfig, LossVariant};
use patchbatch::matcher::MatchConfig;
use patchbatch::net::train::{train_pairs, TrainOptions};
use patchbatch::net::{sample_pairs, AdaDelta, BnGranularity, EncoderModel, PairBatch, SamplerOptions};
use patchbatch::pipeline::{normalize_image, run_flow, PipelineConfig};
use patchbatch::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const PATCH: usize = 9;

fn train_toy_encoder() -> EncoderModel {
    let shifts = [(3, 1), (-2, 4), (5, -3), (-4, -2)];
    let opts = SamplerOptions::default();
    let batches: Vec<PairBatch> = shifts
        .iter()
        .enumerate()
        .map(|(i, &(dx, dy))| {
            let (a, b, gt) = synthetic_pair(64, 64, dx, dy, 100 + i as u64);
            sample_pairs(&normalize_image(&a), &normalize_image(&b), &gt, PATCH, 1024, 200 + i as u64, &opts).unwrap()
        })
        .collect();
    let pairs = PairBatch::concat(&batches).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut model = EncoderModel::patch_miniature(PATCH, 32, BnGranularity::FineGrained, &mut rng).unwrap();
    let loss = LossConfig::new(LossVariant::CentrifugeSd, 1.0, 0.8).unwrap();
    let opts = TrainOptions { epochs: 5, batch: 256, seed: 301 };
    train_pairs(&mut model, &mut AdaDelta::default(), &loss, &pairs, &opts, |_, _, _| Ok(())).unwrap();
    model
}

pub fn end_to_end() -> Outcome {
    let model = train_toy_encoder();
    let (w, h, dx, dy) = (80, 64, 5, -3);
    let (a, b, gt) = synthetic_pair(w, h, dx, dy, 999);
    let cfg = PipelineConfig {
        matcher: MatchConfig { search_radius: 16, seed: 1, ..Default::default() },
        backward_seed: 2,
        ..Default::default()
    };
    let out = match run_flow(&model, &a, &b, &cfg, Some(&gt)) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, format!("pipeline failed: {e}")),
    };
    let r = PATCH / 2;
    let (mut n, mut sum, mut bad) = (0usize, 0.0, 0usize);
    for y in r..h - r {
        for x in r..w - r {
            let i = y * w + x;
            if !gt.valid[i] {
                continue;
            }
            let e = (out.dense.u[i] - gt.u[i]).hypot(out.dense.v[i] - gt.v[i]);
            n += 1;
            sum += e;
            bad += usize::from(e > 3.0);
        }
    }
    let (epe, bad_rate) = (sum / n as f64, bad as f64 / n as f64);
    Outcome::new(
        epe < 1.0 && bad_rate < 0.05,
        format!(
            "shift ({dx},{dy}) on {w}x{h}: interior dense EPE {epe:.4} (< 1), bad-rate(3) {:.2}% (< 5%) over {n} px; {} filtered matches",
            100.0 * bad_rate,
            out.sparse.valid_count()
        ),
    )
}

/// Label-correcting shortest paths from one source; entering pixel p costs
/// 1 + kappa * cost(p).
fn bellman_ford(costs: &EdgeCostMap, src: usize, kappa: f64) -> Vec<f64> {
    let (w, h) = (costs.width, costs.height);
    let mut dist = vec![f64::INFINITY; w * h];
    dist[src] = 0.0;
    loop {
        let mut changed = false;
        for i in 0..w * h {
            if !dist[i].is_finite() {
                continue;
            }
            let (x, y) = (i % w, i / w);
            let nbrs = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for j in nbrs.into_iter().flatten() {
                let d = dist[i] + 1.0 + kappa * costs.cost[j];
                if d < dist[j] {
                    dist[j] = d;
                    changed = true;
                }
            }
        }
        if !changed {
            return dist;
        }
    }
}

fn max_dense_err(dense: &patchbatch::flow::DenseFlow, want: impl Fn(usize, usize) -> (f64, f64)) -> f64 {
    let mut worst: f64 = 0.0;
    for y in 0..dense.height {
        for x in 0..dense.width {
            let i = y * dense.width + x;
            let (u, v) = want(x, y);
            worst = worst.max((dense.u[i] - u).abs()).max((dense.v[i] - v).abs());
        }
    }
    worst
}

pub fn interpolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (w, h) = (40, 30);
    let mut notes = Vec::new();

    let mut constant = FlowField::new(w, h);
    let mut affine = FlowField::new(w, h);
    let aff = |x: usize, y: usize| (3 + x as i32 - y as i32, -2 + 2 * x as i32 + y as i32);
    for y in 0..h {
        for x in 0..w {
            if rng.random_bool(0.2) {
                constant.set(x, y, 3, -2);
            }
            if rng.random_bool(0.2) {
                let (u, v) = aff(x, y);
                affine.set(x, y, u, v);
            }
        }
    }
    let textured = edge_cost(&textured_image(w, h, 4)).unwrap();
    let c = densify(&constant, &textured, DEFAULT_K, DEFAULT_KAPPA).unwrap();
    let c_err = max_dense_err(&c, |_, _| (3.0, -2.0));
    let a = densify(&affine, &EdgeCostMap::zeros(w, h), DEFAULT_K, DEFAULT_KAPPA).unwrap();
    let a_err = max_dense_err(&a, |x, y| {
        let (u, v) = aff(x, y);
        (u as f64, v as f64)
    });
    let exact = c_err <= 1e-8 && a_err <= 1e-8;
    notes.push(format!("constant max err {c_err:.1e}, affine max err {a_err:.1e} (tol 1e-8)"));

    // Two regions split by an intensity step; each side carries its own flow.
    let (w, h) = (32, 20);
    let img = Tensor::new(vec![h, w], (0..w * h).map(|i| if i % w < w / 2 { 50.0 } else { 200.0 }).collect()).unwrap();
    let costs = edge_cost(&img).unwrap();
    let side_flow = |x: usize| if x < w / 2 { (1, 0) } else { (-2, 3) };
    let mut seeds = FlowField::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if rng.random_bool(0.3) {
                let (u, v) = side_flow(x);
                seeds.set(x, y, u, v);
            }
        }
    }
    let positions: Vec<(usize, usize)> = (0..w * h).filter(|&i| seeds.valid[i]).map(|i| (i % w, i / w)).collect();
    let knn = geodesic_knn(&costs, &positions, DEFAULT_K, DEFAULT_KAPPA).unwrap();
    let oracle: Vec<Vec<f64>> =
        positions.iter().map(|&(x, y)| bellman_ford(&costs, y * w + x, DEFAULT_KAPPA)).collect();
    let mut knn_bad = 0;
    let mut cross = 0;
    for p in 0..w * h {
        let mut want: Vec<f64> = oracle.iter().map(|d| d[p]).collect();
        want.sort_by(f64::total_cmp);
        want.truncate(DEFAULT_K);
        let mut got: Vec<f64> = knn[p].iter().map(|&(_, d)| d).collect();
        got.sort_by(f64::total_cmp);
        let each_exact = knn[p].iter().all(|&(s, d)| (oracle[s][p] - d).abs() < 1e-9);
        let same = got.len() == want.len() && got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-9);
        knn_bad += usize::from(!(each_exact && same));
        cross += knn[p].iter().filter(|&&(s, _)| (positions[s].0 < w / 2) != (p % w < w / 2)).count();
    }
    let dense = densify(&seeds, &costs, DEFAULT_K, DEFAULT_KAPPA).unwrap();
    // Pixels on the wall itself are equally far from both sides.
    let mut wall_err: f64 = 0.0;
    let mut wall_px = 0;
    for i in 0..w * h {
        if costs.cost[i] > 0.5 {
            wall_px += 1;
            continue;
        }
        let (u, v) = side_flow(i % w);
        wall_err = wall_err.max((dense.u[i] - u as f64).abs()).max((dense.v[i] - v as f64).abs());
    }
    let wall_ok = knn_bad == 0 && wall_err <= 1e-8;
    notes.push(format!(
        "edge wall: {} seeds, K-NN lists differing from exhaustive geodesic oracle {knn_bad}/{}, \
         cross-wall neighbours {cross}, off-wall own-side flow max err {wall_err:.1e} ({wall_px} wall pixels excluded)",
        positions.len(),
        w * h
    ));
    Outcome::new(exact && wall_ok, notes.join("; "))
}
