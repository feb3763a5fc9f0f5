use patchbatch::flow::FlowField;
use patchbatch::matcher::{
    bidirectional_filter, border_filter, connected_component_filter, patchmatch_traced, squared_l2, DescriptorField,
    MatchConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const SIDE: usize = 16;
const DIM: usize = 8;

fn random_field(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..SIDE * SIDE * DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Destination built from random source descriptors moved by two
/// translations (left and right half of the source), plus noise; pixels no
/// source lands on get fresh random descriptors.
fn coherent_pair(rng: &mut ChaCha8Rng) -> (DescriptorField, DescriptorField) {
    let src = random_field(rng);
    let mut dst = random_field(rng);
    let mut shift = || (rng.random_range(-4i64..=4) as isize, rng.random_range(-4i64..=4) as isize);
    let shifts = [shift(), shift()];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (dx, dy) = shifts[usize::from(x >= SIDE / 2)];
            let (tx, ty) = (x as isize + dx, y as isize + dy);
            if tx < 0 || ty < 0 || tx >= SIDE as isize || ty >= SIDE as isize {
                continue;
            }
            let (s, t) = ((y * SIDE + x) * DIM, (ty as usize * SIDE + tx as usize) * DIM);
            for k in 0..DIM {
                dst[t + k] = src[s + k] + rng.random_range(-0.05..0.05);
            }
        }
    }
    (DescriptorField::new(SIDE, SIDE, DIM, src).unwrap(), DescriptorField::new(SIDE, SIDE, DIM, dst).unwrap())
}

/// Runs PatchMatch and counts pixels at the brute-force optimum; also
/// reports whether costs never rose from one sweep to the next.
fn optimum_rate(src: &DescriptorField, dst: &DescriptorField, seed: u64) -> (usize, bool) {
    let cfg = MatchConfig { iterations: 2, search_radius: 8, seed, ..Default::default() };
    let trace = patchmatch_traced(src, dst, &cfg).unwrap();
    let monotone = trace.costs.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b <= a));
    let mut hits = 0;
    for y in 0..SIDE {
        for x in 0..SIDE {
            let mut best = f64::INFINITY;
            for ty in 0..SIDE {
                for tx in 0..SIDE {
                    best = best.min(squared_l2(src.at(x, y), dst.at(tx, ty)));
                }
            }
            let (u, v) = trace.flow.get(x, y).unwrap();
            let got = squared_l2(src.at(x, y), dst.at((x as i32 + u) as usize, (y as i32 + v) as usize));
            hits += usize::from(got <= best);
        }
    }
    (hits, monotone)
}

pub fn patchmatch_oracle() -> Outcome {
    let runs = 40;
    let (mut hits, mut coherent_hits, mut monotone) = (0, 0, true);
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DescriptorField::new(SIDE, SIDE, DIM, random_field(&mut rng)).unwrap();
        let b = DescriptorField::new(SIDE, SIDE, DIM, random_field(&mut rng)).unwrap();
        let (h, m) = optimum_rate(&a, &b, seed);
        hits += h;
        monotone &= m;
        let (src, dst) = coherent_pair(&mut rng);
        let (h, m) = optimum_rate(&src, &dst, seed);
        coherent_hits += h;
        monotone &= m;
    }
    let total = (runs as usize * SIDE * SIDE) as f64;
    let rate = hits as f64 / total;
    let coherent = coherent_hits as f64 / total;
    // Propagation carries no information between i.i.d. neighbours, so each
    // pixel sees about 1 + 2 * (2 + log2(radius) + 1) distinct candidates
    // out of 256.
    let candidates = 1 + 2 * (2 + 8usize.ilog2() as usize + 1);
    Outcome::new(
        rate >= 0.9 && monotone,
        format!(
            "{runs} seeded 16x16 i.i.d. random fields: {:.1}% at exhaustive optimum (want >= 90%; \
             ~{candidates}/256 = {:.1}% expected from the candidates examined); costs monotone on all {} runs: {monotone}; \
             two-translation coherent fields, for reference: {:.1}%",
            100.0 * rate,
            100.0 * candidates as f64 / 256.0,
            2 * runs,
            100.0 * coherent
        ),
    )
}

fn random_flow(rng: &mut ChaCha8Rng, w: usize, h: usize, reach: i32, density: f64) -> FlowField {
    let mut f = FlowField::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if rng.random_bool(density) {
                let u = rng.random_range(-reach..=reach).clamp(-(x as i32), (w - 1 - x) as i32);
                let v = rng.random_range(-reach..=reach).clamp(-(y as i32), (h - 1 - y) as i32);
                f.set(x, y, u, v);
            }
        }
    }
    f
}

/// Backward field that inverts `fwd` at a random subset of its targets.
fn partial_inverse(rng: &mut ChaCha8Rng, fwd: &FlowField, reach: i32) -> FlowField {
    let mut bwd = random_flow(rng, fwd.width, fwd.height, reach, 0.9);
    for y in 0..fwd.height {
        for x in 0..fwd.width {
            if let Some((u, v)) = fwd.get(x, y) {
                if rng.random_bool(0.6) {
                    bwd.set((x as i32 + u) as usize, (y as i32 + v) as usize, -u, -v);
                }
            }
        }
    }
    bwd
}

fn bidirectional_oracle(fwd: &FlowField, bwd: &FlowField) -> Vec<bool> {
    let mut keep = vec![false; fwd.width * fwd.height];
    for y in 0..fwd.height {
        for x in 0..fwd.width {
            if let Some((u, v)) = fwd.get(x, y) {
                let (tx, ty) = ((x as i32 + u) as usize, (y as i32 + v) as usize);
                keep[y * fwd.width + x] = bwd.get(tx, ty) == Some((-u, -v));
            }
        }
    }
    keep
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Union-find labelling of the 4-connected components of the mask.
fn component_oracle(mask: &[bool], w: usize, h: usize, threshold: usize) -> Vec<bool> {
    let mut parent: Vec<usize> = (0..w * h).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask[i] {
                continue;
            }
            for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)].into_iter().flatten() {
                if mask[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
    }
    let mut size = vec![0usize; w * h];
    for i in 0..w * h {
        if mask[i] {
            let r = find(&mut parent, i);
            size[r] += 1;
        }
    }
    (0..w * h).map(|i| mask[i] && size[find(&mut parent, i)] >= threshold).collect()
}

fn border_oracle(mask: &[bool], w: usize, h: usize, margin: usize) -> Vec<bool> {
    (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            mask[i] && x >= margin && y >= margin && x + margin < w && y + margin < h
        })
        .collect()
}

pub fn filter_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = [0usize; 3];
    let mut kept = [0usize; 3];
    for _ in 0..100 {
        let (w, h) = (rng.random_range(4..40), rng.random_range(4..40));
        let fwd = random_flow(&mut rng, w, h, 3, 0.8);
        let bwd = partial_inverse(&mut rng, &fwd, 3);
        let bi = bidirectional_filter(&fwd, &bwd).unwrap();
        let want = bidirectional_oracle(&fwd, &bwd);
        mismatches[0] += usize::from(bi.valid != want || (0..w * h).any(|i| want[i] && (bi.u[i], bi.v[i]) != (fwd.u[i], fwd.v[i])));
        kept[0] += bi.valid_count();

        let density = rng.random_range(0.3..0.7);
        let mut masked = random_flow(&mut rng, w, h, 2, density);
        let threshold = rng.random_range(1..12);
        let cc = connected_component_filter(&masked, threshold);
        mismatches[1] += usize::from(cc.valid != component_oracle(&masked.valid, w, h, threshold));
        kept[1] += cc.valid_count();

        let margin = rng.random_range(0..w.min(h) / 2 + 2);
        masked.valid.iter_mut().for_each(|v| *v = *v || rng.random_bool(0.3));
        let b = border_filter(&masked, margin);
        mismatches[2] += usize::from(b.valid != border_oracle(&masked.valid, w, h, margin));
        kept[2] += b.valid_count();
    }
    Outcome::new(
        mismatches == [0, 0, 0],
        format!(
            "100 instances each; mismatching instances bidirectional {} / components {} / border {}; pixels kept {} / {} / {}",
            mismatches[0], mismatches[1], mismatches[2], kept[0], kept[1], kept[2]
        ),
    )
}
