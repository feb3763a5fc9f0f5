//! PatchMatch over descriptor fields, and the filters that prune its output.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::FlowField;

/// Per-pixel descriptors. Pixels closer than `margin` to the border carry no
/// descriptor (their patch would leave the image).
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    width: usize,
    height: usize,
    dim: usize,
    margin: usize,
    /// `[height, width, dim]`, row-major; zeros outside the interior.
    data: Vec<f64>,
}

impl DescriptorField {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_margin(width, height, dim, 0, data)
    }

    pub fn with_margin(width: usize, height: usize, dim: usize, margin: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || dim == 0 {
            return Err(Error::dim(format!("empty descriptor field {width}x{height}x{dim}")));
        }
        if 2 * margin >= width || 2 * margin >= height {
            return Err(Error::dim(format!("margin {margin} leaves no interior in {width}x{height}")));
        }
        if data.len() != width * height * dim {
            return Err(Error::dim(format!("{} values for a {width}x{height}x{dim} field", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("descriptor field holds non-finite values"));
        }
        Ok(Self { width, height, dim, margin, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn has(&self, x: usize, y: usize) -> bool {
        x >= self.margin && y >= self.margin && x + self.margin < self.width && y + self.margin < self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    fn clamp(&self, x: i64, y: i64) -> (usize, usize) {
        let m = self.margin as i64;
        (x.clamp(m, self.width as i64 - 1 - m) as usize, y.clamp(m, self.height as i64 - 1 - m) as usize)
    }
}

#[inline]
pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub iterations: usize,
    /// Initial random-search radius; halved after every attempt down to 1.
    pub search_radius: usize,
    pub cc_area_threshold: usize,
    pub border_margin: usize,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { iterations: 2, search_radius: 32, cc_area_threshold: 64, border_margin: 0, seed: 0 }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.search_radius == 0 {
            return Err(Error::Config("iterations and search radius must be at least 1".into()));
        }
        Ok(())
    }
}

/// Matching result with the cost of every source pixel after initialization
/// and after each sweep (`f64::INFINITY` where the pixel has no descriptor).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTrace {
    pub flow: FlowField,
    pub costs: Vec<Vec<f64>>,
}

impl MatchTrace {
    pub fn final_costs(&self) -> &[f64] {
        self.costs.last().expect("initial costs always recorded")
    }
}

pub fn patchmatch(src: &DescriptorField, dst: &DescriptorField, cfg: &MatchConfig) -> Result<FlowField> {
    patchmatch_traced(src, dst, cfg).map(|t| t.flow)
}

/// Random initialization, then `cfg.iterations` sweeps. Even sweeps scan
/// forward and propagate from the left and upper neighbors, odd sweeps scan
/// backward and propagate from the right and lower neighbors. Each pixel then
/// tries random offsets around its best match with a halving radius. All
/// targets are clamped into the interior of `dst`; a candidate replaces the
/// current match only if strictly cheaper.
pub fn patchmatch_traced(src: &DescriptorField, dst: &DescriptorField, cfg: &MatchConfig) -> Result<MatchTrace> {
    cfg.validate()?;
    if src.dim != dst.dim {
        return Err(Error::dim(format!("descriptor dims {} vs {}", src.dim, dst.dim)));
    }
    let (w, h) = (src.width, src.height);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut flow = FlowField::new(w, h);
    let mut cost = vec![f64::INFINITY; w * h];
    let dm = dst.margin;
    for y in 0..h {
        for x in 0..w {
            if !src.has(x, y) {
                continue;
            }
            let tx = rng.random_range(dm..dst.width - dm);
            let ty = rng.random_range(dm..dst.height - dm);
            let i = y * w + x;
            flow.set(x, y, tx as i32 - x as i32, ty as i32 - y as i32);
            cost[i] = squared_l2(src.at(x, y), dst.at(tx, ty));
        }
    }
    let mut costs = vec![cost.clone()];

    let try_offset = |flow: &mut FlowField, cost: &mut [f64], x: usize, y: usize, tx: i64, ty: i64| {
        let (tx, ty) = dst.clamp(tx, ty);
        let c = squared_l2(src.at(x, y), dst.at(tx, ty));
        let i = y * w + x;
        if c < cost[i] {
            cost[i] = c;
            flow.set(x, y, tx as i32 - x as i32, ty as i32 - y as i32);
        }
    };

    for sweep in 0..cfg.iterations {
        let forward = sweep % 2 == 0;
        for k in 0..w * h {
            let k = if forward { k } else { w * h - 1 - k };
            let (x, y) = (k % w, k / w);
            if !src.has(x, y) {
                continue;
            }
            let neighbors = if forward {
                [(x.wrapping_sub(1), y), (x, y.wrapping_sub(1))]
            } else {
                [(x + 1, y), (x, y + 1)]
            };
            for (nx, ny) in neighbors {
                if nx < w && ny < h && src.has(nx, ny) {
                    let j = ny * w + nx;
                    let (u, v) = (flow.u[j] as i64, flow.v[j] as i64);
                    try_offset(&mut flow, &mut cost, x, y, x as i64 + u, y as i64 + v);
                }
            }
            let mut r = cfg.search_radius as i64;
            while r >= 1 {
                let i = y * w + x;
                let (bx, by) = (x as i64 + flow.u[i] as i64, y as i64 + flow.v[i] as i64);
                let tx = bx + rng.random_range(-r..=r);
                let ty = by + rng.random_range(-r..=r);
                try_offset(&mut flow, &mut cost, x, y, tx, ty);
                r /= 2;
            }
        }
        costs.push(cost.clone());
    }
    Ok(MatchTrace { flow, costs })
}

/// Keeps a forward match only where the backward field maps its target
/// exactly back to the source pixel.
pub fn bidirectional_filter(fwd: &FlowField, bwd: &FlowField) -> Result<FlowField> {
    if !fwd.same_size(bwd) {
        return Err(Error::dim(format!(
            "forward {}x{} vs backward {}x{}",
            fwd.width, fwd.height, bwd.width, bwd.height
        )));
    }
    let mut out = fwd.clone();
    for y in 0..fwd.height {
        for x in 0..fwd.width {
            let Some((u, v)) = fwd.get(x, y) else { continue };
            let (tx, ty) = (x as i64 + u as i64, y as i64 + v as i64);
            let inside = tx >= 0 && ty >= 0 && (tx as usize) < bwd.width && (ty as usize) < bwd.height;
            let back = if inside { bwd.get(tx as usize, ty as usize) } else { None };
            if back != Some((-u, -v)) {
                out.invalidate(x, y);
            }
        }
    }
    Ok(out)
}

/// Invalidates 4-connected components of the validity mask smaller than `area_threshold`.
pub fn connected_component_filter(flow: &FlowField, area_threshold: usize) -> FlowField {
    let (w, h) = (flow.width, flow.height);
    let mut out = flow.clone();
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    for start in 0..w * h {
        if seen[start] || !flow.valid[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        component.clear();
        while let Some(i) = queue.pop_front() {
            component.push(i);
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if !seen[j] && flow.valid[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if component.len() < area_threshold {
            for &i in &component {
                out.valid[i] = false;
            }
        }
    }
    out
}

/// Invalidates every pixel within `margin` of an image edge.
pub fn border_filter(flow: &FlowField, margin: usize) -> FlowField {
    let mut out = flow.clone();
    for y in 0..flow.height {
        for x in 0..flow.width {
            if x < margin || y < margin || x + margin >= flow.width || y + margin >= flow.height {
                out.invalidate(x, y);
            }
        }
    }
    out
}
