//! Image pair → sparse matches → dense flow, plus flow error metrics.

use std::thread;

use crate::error::{Error, Result};
use crate::flow::{DenseFlow, FlowField, FlowMap};
use crate::image::image_dims;
use crate::interp::{densify, edge_cost, DEFAULT_K, DEFAULT_KAPPA};
use crate::matcher::{
    bidirectional_filter, border_filter, connected_component_filter, patchmatch_traced, DescriptorField,
    MatchConfig, MatchTrace,
};
use crate::net::sampler::extract_patch;
use crate::net::EncoderModel;
use crate::tensor::{mean_std, Tensor};

/// Patches encoded per forward call.
const ENCODE_CHUNK: usize = 1024;

/// Zero mean, unit SD; constant images become all zeros.
pub fn normalize_image(img: &Tensor) -> Tensor {
    let (mean, sd) = mean_std(img.data()).expect("tensors are never empty");
    let data = if sd < 1e-12 {
        vec![0.0; img.len()]
    } else {
        img.data().iter().map(|v| (v - mean) / sd).collect()
    };
    Tensor::new(img.shape().to_vec(), data).expect("same shape")
}

/// Descriptor of the centered `patch`×`patch` window at every pixel whose
/// window fits inside the image. The model must take `[1, patch, patch]` inputs.
pub fn encode_field(model: &EncoderModel, img: &Tensor, patch: usize) -> Result<DescriptorField> {
    let (w, h) = image_dims(img)?;
    if model.input_shape() != [1, patch, patch] {
        return Err(Error::dim(format!("model expects {:?}, not {patch}x{patch} patches", model.input_shape())));
    }
    if w < patch || h < patch || patch % 2 == 0 {
        return Err(Error::dim(format!("{w}x{h} image cannot hold odd {patch}x{patch} patches")));
    }
    let r = patch / 2;
    let dim = model.descriptor_dim();
    let mut data = vec![0.0; w * h * dim];
    let centers: Vec<(usize, usize)> = (r..h - r).flat_map(|y| (r..w - r).map(move |x| (x, y))).collect();
    for chunk in centers.chunks(ENCODE_CHUNK) {
        let mut batch = Vec::with_capacity(chunk.len() * patch * patch);
        for &(x, y) in chunk {
            batch.extend(extract_patch(img, x as isize, y as isize, patch).expect("interior center"));
        }
        let desc = model.encode(&Tensor::new(vec![chunk.len(), 1, patch, patch], batch)?)?;
        for (k, &(x, y)) in chunk.iter().enumerate() {
            let i = (y * w + x) * dim;
            data[i..i + dim].copy_from_slice(desc.row(k));
        }
    }
    DescriptorField::with_margin(w, h, dim, r, data)
}

/// Keeps the first valid seed (row-major) of every `factor`×`factor` cell.
pub fn downsample_seeds(flow: &FlowField, factor: usize) -> Result<FlowField> {
    if ![1, 2, 4].contains(&factor) {
        return Err(Error::Config(format!("seed downsample factor must be 1, 2 or 4, got {factor}")));
    }
    let mut out = FlowField::new(flow.width, flow.height);
    for cy in (0..flow.height).step_by(factor) {
        for cx in (0..flow.width).step_by(factor) {
            let first = (cy..(cy + factor).min(flow.height))
                .flat_map(|y| (cx..(cx + factor).min(flow.width)).map(move |x| (x, y)))
                .find_map(|(x, y)| flow.get(x, y).map(|(u, v)| (x, y, u, v)));
            if let Some((x, y, u, v)) = first {
                out.set(x, y, u, v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Iterations, radius, filter sizes; `seed` drives the forward run.
    pub matcher: MatchConfig,
    /// Seed of the backward (second image → first image) run.
    pub backward_seed: u64,
    pub k: usize,
    pub kappa: f64,
    pub downsample: usize,
    pub bad_threshold: f64,
    pub accuracy_radius: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            matcher: MatchConfig::default(),
            backward_seed: 1,
            k: DEFAULT_K,
            kappa: DEFAULT_KAPPA,
            downsample: 1,
            bad_threshold: 3.0,
            accuracy_radius: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMetrics {
    /// Pixels evaluated.
    pub count: usize,
    /// Fraction with endpoint error above the bad threshold.
    pub bad_rate: f64,
    pub epe: f64,
    /// Fraction with endpoint error below the accuracy radius.
    pub accuracy: f64,
}

/// Sparse metrics cover surviving matches only; dense metrics every GT-valid pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowReport {
    pub sparse: Option<FlowMetrics>,
    pub dense: FlowMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutput {
    pub forward: MatchTrace,
    pub backward: MatchTrace,
    /// Matches surviving all filters, before downsampling.
    pub sparse: FlowField,
    pub seeds: FlowField,
    pub dense: DenseFlow,
    pub report: Option<FlowReport>,
}

fn endpoint_errors<'a>(
    pred: impl Fn(usize) -> Option<(f64, f64)> + 'a,
    gt: &'a FlowMap,
) -> impl Iterator<Item = f64> + 'a {
    (0..gt.u.len()).filter(|&i| gt.valid[i]).filter_map(move |i| {
        let (u, v) = pred(i)?;
        Some((u - gt.u[i]).hypot(v - gt.v[i]))
    })
}

fn summarize(errors: impl Iterator<Item = f64>, bad_threshold: f64, accuracy_radius: f64) -> Result<FlowMetrics> {
    let (mut n, mut sum, mut bad, mut good) = (0usize, 0.0, 0usize, 0usize);
    for e in errors {
        n += 1;
        sum += e;
        bad += usize::from(e > bad_threshold);
        good += usize::from(e < accuracy_radius);
    }
    if n == 0 {
        return Err(Error::domain("no pixel has both a prediction and valid ground truth"));
    }
    Ok(FlowMetrics { count: n, bad_rate: bad as f64 / n as f64, epe: sum / n as f64, accuracy: good as f64 / n as f64 })
}

pub fn flow_metrics(pred: &DenseFlow, gt: &FlowMap, bad_threshold: f64, accuracy_radius: f64) -> Result<FlowMetrics> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::dim("prediction and ground truth differ in size"));
    }
    summarize(endpoint_errors(|i| Some((pred.u[i], pred.v[i])), gt), bad_threshold, accuracy_radius)
}

pub fn sparse_metrics(
    pred: &FlowField,
    gt: &FlowMap,
    bad_threshold: f64,
    accuracy_radius: f64,
) -> Result<FlowMetrics> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::dim("prediction and ground truth differ in size"));
    }
    let errors = endpoint_errors(|i| pred.valid[i].then(|| (pred.u[i] as f64, pred.v[i] as f64)), gt);
    summarize(errors, bad_threshold, accuracy_radius)
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Pipeline { .. } => e,
        other => Error::Pipeline { stage: name, reason: other.to_string() },
    })
}

/// normalize → encode both → match both ways → filter → downsample → densify → evaluate.
pub fn run_flow(
    model: &EncoderModel,
    img_a: &Tensor,
    img_b: &Tensor,
    cfg: &PipelineConfig,
    gt: Option<&FlowMap>,
) -> Result<FlowOutput> {
    let dims = stage("input", image_dims(img_a))?;
    if stage("input", image_dims(img_b))? != dims {
        return Err(Error::Pipeline { stage: "input", reason: "images differ in size".into() });
    }
    stage("config", cfg.matcher.validate())?;
    let patch = match model.input_shape() {
        &[1, p, q] if p == q => p,
        s => return Err(Error::Pipeline { stage: "encode", reason: format!("model input {s:?} is not a square patch") }),
    };
    let (a, b) = (normalize_image(img_a), normalize_image(img_b));
    let (fa, fb) = thread::scope(|s| {
        let ha = s.spawn(|| encode_field(model, &a, patch));
        let fb = encode_field(model, &b, patch);
        (ha.join().expect("encoder thread panicked"), fb)
    });
    let (fa, fb) = (stage("encode", fa)?, stage("encode", fb)?);
    let bwd_cfg = MatchConfig { seed: cfg.backward_seed, ..cfg.matcher };
    let (fwd, bwd) = thread::scope(|s| {
        let hf = s.spawn(|| patchmatch_traced(&fa, &fb, &cfg.matcher));
        let bwd = patchmatch_traced(&fb, &fa, &bwd_cfg);
        (hf.join().expect("matcher thread panicked"), bwd)
    });
    let (fwd, bwd) = (stage("patchmatch", fwd)?, stage("patchmatch", bwd)?);
    let consistent = stage("bidirectional", bidirectional_filter(&fwd.flow, &bwd.flow))?;
    let sparse = border_filter(
        &connected_component_filter(&consistent, cfg.matcher.cc_area_threshold),
        cfg.matcher.border_margin,
    );
    if sparse.valid_count() == 0 {
        return Err(Error::Pipeline {
            stage: "filter",
            reason: format!(
                "no match survived: {} consistent, 0 after components >= {} px and border {} px",
                consistent.valid_count(),
                cfg.matcher.cc_area_threshold,
                cfg.matcher.border_margin
            ),
        });
    }
    let seeds = stage("downsample", downsample_seeds(&sparse, cfg.downsample))?;
    let costs = stage("interpolate", edge_cost(&a))?;
    let dense = stage("interpolate", densify(&seeds, &costs, cfg.k, cfg.kappa))?;
    let report = match gt {
        None => None,
        Some(gt) => {
            let dense_m = stage("evaluate", flow_metrics(&dense, gt, cfg.bad_threshold, cfg.accuracy_radius))?;
            let sparse_m = sparse_metrics(&sparse, gt, cfg.bad_threshold, cfg.accuracy_radius).ok();
            Some(FlowReport { sparse: sparse_m, dense: dense_m })
        }
    };
    Ok(FlowOutput { forward: fwd, backward: bwd, sparse, seeds, dense, report })
}
