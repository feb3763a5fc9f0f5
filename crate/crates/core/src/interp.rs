//! Sparse-to-dense flow interpolation.
//!
//! Every pixel gathers its K nearest seeds under a geodesic distance that
//! charges `1 + κ·cost(p)` for stepping into pixel `p`, then evaluates a
//! weighted affine fit of the seed flows at its own position.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::flow::{DenseFlow, FlowField, GridSize};
use crate::image::image_dims;
use crate::tensor::Tensor;

pub const DEFAULT_K: usize = 25;
pub const DEFAULT_KAPPA: f64 = 100.0;
/// Added to the slope block of the normal equations.
pub const RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCostMap {
    pub width: usize,
    pub height: usize,
    pub cost: Vec<f64>,
}

impl EdgeCostMap {
    pub fn new(width: usize, height: usize, cost: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || cost.len() != width * height {
            return Err(Error::dim(format!("{} costs for a {width}x{height} map", cost.len())));
        }
        if cost.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::domain("edge costs must be finite and non-negative"));
        }
        Ok(Self { width, height, cost })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, cost: vec![0.0; width * height] }
    }
}

impl GridSize for EdgeCostMap {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }
}

/// Sobel gradient magnitude (edges replicated), scaled so the maximum is 1.
pub fn edge_cost(img: &Tensor) -> Result<EdgeCostMap> {
    let (w, h) = image_dims(img)?;
    let px = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        img.data()[y * w + x]
    };
    let mut cost = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x - 1, y)
                - px(x - 1, y + 1);
            let gy = px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x, y - 1)
                - px(x + 1, y - 1);
            cost.push(gx.hypot(gy));
        }
    }
    let max = cost.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        cost.iter_mut().for_each(|c| *c /= max);
    }
    EdgeCostMap::new(w, h, cost)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    seed: usize,
    pixel: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // reversed: BinaryHeap pops the smallest (dist, seed, pixel)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.seed.cmp(&self.seed))
            .then(other.pixel.cmp(&self.pixel))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn neighbors(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

/// Shortest-path distance from `source` to every pixel of the 4-connected grid.
pub fn geodesic_distances(costs: &EdgeCostMap, source: (usize, usize), kappa: f64) -> Result<Vec<f64>> {
    let (w, h) = (costs.width, costs.height);
    if source.0 >= w || source.1 >= h {
        return Err(Error::dim(format!("source {source:?} outside {w}x{h}")));
    }
    let mut dist = vec![f64::INFINITY; w * h];
    let mut heap = BinaryHeap::new();
    let s = source.1 * w + source.0;
    dist[s] = 0.0;
    heap.push(Entry { dist: 0.0, seed: 0, pixel: s });
    while let Some(Entry { dist: d, pixel, .. }) = heap.pop() {
        if d > dist[pixel] {
            continue;
        }
        for n in neighbors(pixel, w, h) {
            let nd = d + 1.0 + kappa * costs.cost[n];
            if nd < dist[n] {
                dist[n] = nd;
                heap.push(Entry { dist: nd, seed: 0, pixel: n });
            }
        }
    }
    Ok(dist)
}

/// For every pixel, its `k` geodesically nearest seeds as `(seed index,
/// distance)`, nearest first, ties broken by seed index.
///
/// One best-first expansion serves all seeds: a seed only propagates through
/// pixels that count it among their own `k` nearest, which is exact because
/// any seed closer than `s` to an intermediate pixel is also closer to every
/// pixel reached through it.
pub fn geodesic_knn(
    costs: &EdgeCostMap,
    seeds: &[(usize, usize)],
    k: usize,
    kappa: f64,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let (w, h) = (costs.width, costs.height);
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut found: Vec<Vec<(usize, f64)>> = vec![Vec::new(); w * h];
    let mut heap = BinaryHeap::new();
    for (s, &(x, y)) in seeds.iter().enumerate() {
        if x >= w || y >= h {
            return Err(Error::dim(format!("seed ({x}, {y}) outside {w}x{h}")));
        }
        heap.push(Entry { dist: 0.0, seed: s, pixel: y * w + x });
    }
    while let Some(Entry { dist, seed, pixel }) = heap.pop() {
        let list = &mut found[pixel];
        if list.len() >= k || list.iter().any(|&(s, _)| s == seed) {
            continue;
        }
        list.push((seed, dist));
        for n in neighbors(pixel, w, h) {
            if found[n].len() < k {
                heap.push(Entry { dist: dist + 1.0 + kappa * costs.cost[n], seed, pixel: n });
            }
        }
    }
    Ok(found)
}

/// Weighted affine fit of `flow` over `points`, evaluated at `at`. Falls back
/// to the weighted mean when the points are (nearly) collinear.
fn affine_at(points: &[(f64, f64)], flow: &[(f64, f64)], weights: &[f64], at: (f64, f64)) -> (f64, f64) {
    let sw: f64 = weights.iter().sum();
    let mean = |f: &dyn Fn(usize) -> f64| (0..weights.len()).map(|i| weights[i] * f(i)).sum::<f64>() / sw;
    let (mx, my) = (mean(&|i| points[i].0), mean(&|i| points[i].1));
    // offsets from the first seed keep constant flows exact
    let (u0, v0) = flow[0];
    let (mu, mv) = (u0 + mean(&|i| flow[i].0 - u0), v0 + mean(&|i| flow[i].1 - v0));
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    let (mut cxu, mut cyu, mut cxv, mut cyv) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..weights.len() {
        let (dx, dy) = (points[i].0 - mx, points[i].1 - my);
        let (du, dv) = (flow[i].0 - mu, flow[i].1 - mv);
        let wi = weights[i];
        cxx += wi * dx * dx;
        cxy += wi * dx * dy;
        cyy += wi * dy * dy;
        cxu += wi * dx * du;
        cyu += wi * dy * du;
        cxv += wi * dx * dv;
        cyv += wi * dy * dv;
    }
    let trace = cxx + cyy;
    let det_raw = cxx * cyy - cxy * cxy;
    if trace <= 0.0 || det_raw <= 1e-10 * trace * trace {
        return (mu, mv);
    }
    let (a, d) = (cxx + RIDGE, cyy + RIDGE);
    let det = a * d - cxy * cxy;
    let solve = |bx: f64, by: f64| ((d * bx - cxy * by) / det, (a * by - cxy * bx) / det);
    let (ux, uy) = solve(cxu, cyu);
    let (vx, vy) = solve(cxv, cyv);
    let (ex, ey) = (at.0 - mx, at.1 - my);
    (mu + ux * ex + uy * ey, mv + vx * ex + vy * ey)
}

/// Dense flow from the valid entries of `seeds`.
pub fn densify(seeds: &FlowField, costs: &EdgeCostMap, k: usize, kappa: f64) -> Result<DenseFlow> {
    if !seeds.same_size(costs) {
        return Err(Error::dim("seed field and cost map differ in size"));
    }
    let (w, h) = (seeds.width, seeds.height);
    let positions: Vec<(usize, usize)> =
        (0..w * h).filter(|&i| seeds.valid[i]).map(|i| (i % w, i / w)).collect();
    if positions.is_empty() {
        return Err(Error::Interpolation("no valid seeds".into()));
    }
    let knn = geodesic_knn(costs, &positions, k, kappa)?;
    let mut out = DenseFlow::zeros(w, h);
    let (mut pts, mut fl, mut wts) = (Vec::new(), Vec::new(), Vec::new());
    for (i, near) in knn.iter().enumerate() {
        if near.is_empty() {
            return Err(Error::Interpolation(format!("pixel ({}, {}) reaches no seed", i % w, i / w)));
        }
        let sigma = near.iter().map(|n| n.1).sum::<f64>() / near.len() as f64;
        pts.clear();
        fl.clear();
        wts.clear();
        for &(s, d) in near {
            let (x, y) = positions[s];
            let j = y * w + x;
            pts.push((x as f64, y as f64));
            fl.push((seeds.u[j] as f64, seeds.v[j] as f64));
            wts.push(if sigma > 0.0 { (-d / sigma).exp() } else { 1.0 });
        }
        let (u, v) = affine_at(&pts, &fl, &wts, ((i % w) as f64, (i / w) as f64));
        out.u[i] = u;
        out.v[i] = v;
    }
    Ok(out)
}
