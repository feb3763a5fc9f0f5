//! Patch-pair sampling from an image pair with known correspondences.
//!
//! Matching pairs take the patch at `p` in the first image and the patch at
//! `p + flow(p)` in the second. Non-matching pairs add an independent shift
//! of `±{min_shift..=max_shift}` pixels on each axis to the second center.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::siamese::PairBatch;
use crate::error::{Error, Result};
use crate::flow::FlowMap;
use crate::image::image_dims;
use crate::losses::Label;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerOptions {
    pub min_shift: usize,
    pub max_shift: usize,
    /// Random flips and 90° rotations, identical for both members of a pair.
    pub augment: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self { min_shift: 1, max_shift: 8, augment: true }
    }
}

/// Copies the `patch`×`patch` window centered on `(cx, cy)`; `None` when it
/// leaves the image. `patch` must be odd.
pub fn extract_patch(img: &Tensor, cx: isize, cy: isize, patch: usize) -> Option<Vec<f64>> {
    let (w, h) = image_dims(img).ok()?;
    let r = (patch / 2) as isize;
    if cx - r < 0 || cy - r < 0 || cx + r >= w as isize || cy + r >= h as isize {
        return None;
    }
    let mut out = Vec::with_capacity(patch * patch);
    for y in (cy - r) as usize..=(cy + r) as usize {
        out.extend_from_slice(&img.data()[y * w + (cx - r) as usize..=y * w + (cx + r) as usize]);
    }
    Some(out)
}

/// Applies one of the eight square symmetries: `t & 4` transposes, then
/// `t & 3` selects how many quarter turns follow.
pub fn dihedral(patch: &[f64], side: usize, t: u8) -> Vec<f64> {
    let mut cur = patch.to_vec();
    if t & 4 != 0 {
        cur = (0..side * side).map(|i| cur[(i % side) * side + i / side]).collect();
    }
    for _ in 0..(t & 3) {
        // (x, y) → (side−1−y, x)
        let mut next = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                next[x * side + (side - 1 - y)] = cur[y * side + x];
            }
        }
        cur = next;
    }
    cur
}

fn signed_shift(rng: &mut impl Rng, opts: &SamplerOptions) -> isize {
    let mag = rng.random_range(opts.min_shift..=opts.max_shift) as isize;
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

/// Draws `n` pairs (alternating matching / non-matching) as `[n, 1, patch, patch]` tensors.
///
/// Both images should already be normalized. `flow` maps `img1` to `img2`.
pub fn sample_pairs(
    img1: &Tensor,
    img2: &Tensor,
    flow: &FlowMap,
    patch: usize,
    n: usize,
    seed: u64,
    opts: &SamplerOptions,
) -> Result<PairBatch> {
    let (w, h) = image_dims(img1)?;
    if image_dims(img2)? != (w, h) || flow.width != w || flow.height != h {
        return Err(Error::dim("images and flow must share one size"));
    }
    if patch % 2 == 0 || patch == 0 {
        return Err(Error::Config(format!("patch size must be odd, got {patch}")));
    }
    if n == 0 || n % 2 != 0 {
        return Err(Error::Sampling(format!("pair count must be even and positive, got {n}")));
    }
    if opts.min_shift == 0 || opts.min_shift > opts.max_shift {
        return Err(Error::Config(format!("bad shift range {}..={}", opts.min_shift, opts.max_shift)));
    }
    let target = |x: usize, y: usize| -> (isize, isize) {
        let i = y * w + x;
        (x as isize + flow.u[i].round() as isize, y as isize + flow.v[i].round() as isize)
    };
    let r = (patch / 2) as isize;
    let inside = |x: isize, y: isize| x >= r && y >= r && x + r < w as isize && y + r < h as isize;
    let centers: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| {
            let (tx, ty) = target(x, y);
            flow.valid[y * w + x] && inside(x as isize, y as isize) && inside(tx, ty)
        })
        .collect();
    if centers.is_empty() {
        return Err(Error::Sampling("no pixel has a valid correspondence with both patches inside".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area = patch * patch;
    let (mut left, mut right) = (Vec::with_capacity(n * area), Vec::with_capacity(n * area));
    let mut labels = Vec::with_capacity(n);
    let mut rejected = 0usize;
    while labels.len() < n {
        let label = if labels.len() % 2 == 0 { Label::Matching } else { Label::NonMatching };
        let &(x, y) = centers.choose(&mut rng).expect("non-empty");
        let (mut tx, mut ty) = target(x, y);
        if label == Label::NonMatching {
            tx += signed_shift(&mut rng, opts);
            ty += signed_shift(&mut rng, opts);
            if !inside(tx, ty) {
                rejected += 1;
                if rejected > 1000 * n {
                    return Err(Error::Sampling("shifted targets keep leaving the image".into()));
                }
                continue;
            }
        }
        let a = extract_patch(img1, x as isize, y as isize, patch).expect("center checked");
        let b = extract_patch(img2, tx, ty, patch).expect("target checked");
        let t = if opts.augment { rng.random_range(0..8u8) } else { 0 };
        left.extend(dihedral(&a, patch, t));
        right.extend(dihedral(&b, patch, t));
        labels.push(label);
    }
    PairBatch::new(
        Tensor::new(vec![n, 1, patch, patch], left)?,
        Tensor::new(vec![n, 1, patch, patch], right)?,
        labels,
    )
}
