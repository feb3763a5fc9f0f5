//! Gaussian-cluster pair experiment.
//!
//! `n_c` centers are drawn uniformly from the unit hypercube. A matching pair
//! takes two independent draws from one cluster, a non-matching pair one
//! draw from each of two distinct clusters, every draw being
//! `center + N(0, τ I)`. Siamese MLPs trained with each loss variant are
//! scored by test-set AUC and compared with the raw input distance.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::losses::{Label, LossConfig, LossVariant, DEFAULT_LAMBDA};
use crate::net::train::{train_pairs, TrainOptions};
use crate::net::{siamese_distance_eval, AdaDelta, EncoderModel, PairBatch};
use crate::seeds::{derive_indexed, derive_seed};
use crate::tensor::{mean_std, Tensor};

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_PAIRS: usize = 10_000;
pub const DEFAULT_MARGINS: [f64; 4] = [1.0, 3.0, 10.0, 30.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_centers: usize,
    /// Per-coordinate noise variance.
    pub tau: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Rescale every sample to unit L2 norm.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            n_centers: 10,
            tau: 3.0,
            n_train: DEFAULT_PAIRS,
            n_test: DEFAULT_PAIRS,
            normalize: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_centers < 2 {
            return Err(Error::Config(format!("non-matching pairs need at least 2 centers, got {}", self.n_centers)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        for n in [self.n_train, self.n_test] {
            if n < 4 || n % 2 != 0 {
                return Err(Error::Config(format!("pair counts must be even and at least 4, got {n}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianClusters {
    dim: usize,
    /// `[n_centers, dim]`, row-major.
    centers: Vec<f64>,
}

impl GaussianClusters {
    pub fn draw(dim: usize, n_centers: usize, rng: &mut impl Rng) -> Self {
        Self { dim, centers: (0..dim * n_centers).map(|_| rng.random::<f64>()).collect() }
    }

    pub fn n_centers(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }
}

/// Draws `n` pairs from `clusters`, alternating matching and non-matching.
pub fn sample_pairs_gaussian(
    clusters: &GaussianClusters,
    n: usize,
    tau: f64,
    normalize: bool,
    rng: &mut impl Rng,
) -> Result<PairBatch> {
    let k = clusters.n_centers();
    if k < 2 {
        return Err(Error::Config("non-matching pairs need at least 2 centers".into()));
    }
    let noise = Normal::new(0.0, tau.sqrt()).map_err(|e| Error::Config(format!("tau {tau}: {e}")))?;
    let d = clusters.dim;
    let draw = |c: usize, rng: &mut dyn rand::RngCore, out: &mut Vec<f64>| {
        let start = out.len();
        out.extend(clusters.center(c).iter().map(|&m| m + noise.sample(rng)));
        if normalize {
            let norm = out[start..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                out[start..].iter_mut().for_each(|v| *v /= norm);
            }
        }
    };
    let (mut left, mut right) = (Vec::with_capacity(n * d), Vec::with_capacity(n * d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Matching } else { Label::NonMatching };
        let a = rng.random_range(0..k);
        let b = match label {
            Label::Matching => a,
            Label::NonMatching => {
                let j = rng.random_range(0..k - 1);
                if j >= a {
                    j + 1
                } else {
                    j
                }
            }
        };
        draw(a, rng, &mut left);
        draw(b, rng, &mut right);
        labels.push(label);
    }
    PairBatch::new(Tensor::new(vec![n, d], left)?, Tensor::new(vec![n, d], right)?, labels)
}

/// Fresh centers plus independent train and test pair sets, all from `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<(GaussianClusters, PairBatch, PairBatch)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clusters = GaussianClusters::draw(cfg.dim, cfg.n_centers, &mut rng);
    let train = sample_pairs_gaussian(&clusters, cfg.n_train, cfg.tau, cfg.normalize, &mut rng)?;
    let test = sample_pairs_gaussian(&clusters, cfg.n_test, cfg.tau, cfg.normalize, &mut rng)?;
    Ok((clusters, train, test))
}

/// Probability that a non-matching pair is farther apart than a matching one,
/// ties counting one half (normalized Mann–Whitney U over average ranks).
pub fn auc(distances: &[f64], labels: &[Label]) -> Result<f64> {
    if distances.len() != labels.len() {
        return Err(Error::dim(format!("{} scores vs {} labels", distances.len(), labels.len())));
    }
    if distances.iter().any(|d| d.is_nan()) {
        return Err(Error::domain("NaN score"));
    }
    let n1 = labels.iter().filter(|&&l| l == Label::NonMatching).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::domain("AUC needs both matching and non-matching pairs"));
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && distances[order[j + 1]] == distances[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == Label::NonMatching).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(u / (n0 as f64 * n1 as f64))
}

/// Euclidean distance between the raw members of every pair.
pub fn raw_distances(pairs: &PairBatch) -> Vec<f64> {
    (0..pairs.len())
        .map(|i| {
            pairs.left().row(i).iter().zip(pairs.right().row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        })
        .collect()
}

pub fn baseline_auc(pairs: &PairBatch) -> Result<f64> {
    auc(&raw_distances(pairs), pairs.labels())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Baseline,
    Trained(LossVariant),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Trained(v) => v.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("baseline") {
            Ok(Method::Baseline)
        } else {
            s.parse().map(Method::Trained)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub nc_list: Vec<usize>,
    pub tau_list: Vec<f64>,
    pub normalize: bool,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lambda: f64,
    /// Candidate margins; the best on a held-out fifth of the first
    /// repetition's training pairs is used for every repetition of a cell.
    pub margins: Vec<f64>,
    pub tune_epochs: usize,
    pub hidden: usize,
    pub depth: usize,
    pub out_dim: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            n_train: DEFAULT_PAIRS,
            n_test: DEFAULT_PAIRS,
            nc_list: vec![10],
            tau_list: vec![3.0],
            normalize: false,
            methods: std::iter::once(Method::Baseline)
                .chain(LossVariant::ALL.into_iter().map(Method::Trained))
                .collect(),
            reps: 10,
            epochs: 30,
            batch: 256,
            lambda: DEFAULT_LAMBDA,
            margins: DEFAULT_MARGINS.to_vec(),
            tune_epochs: 10,
            hidden: 256,
            depth: 3,
            out_dim: 256,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nc_list.is_empty() || self.tau_list.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("need at least one n_c, tau and method".into()));
        }
        if self.reps == 0 || self.batch < 2 || self.margins.is_empty() {
            return Err(Error::Config("reps, batch and margins must be non-empty".into()));
        }
        if self.margins.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Config("margins must be positive".into()));
        }
        if self.hidden == 0 || self.out_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        LossConfig::new(LossVariant::SpringSd, 1.0, self.lambda)?;
        for &nc in &self.nc_list {
            for &tau in &self.tau_list {
                self.synth(nc, tau, 0).validate()?;
            }
        }
        Ok(())
    }

    fn synth(&self, n_centers: usize, tau: f64, rep: usize) -> SynthConfig {
        let stream = format!("synth/nc={n_centers}/tau={tau}/normalize={}", self.normalize);
        SynthConfig {
            dim: self.dim,
            n_centers,
            tau,
            n_train: self.n_train,
            n_test: self.n_test,
            normalize: self.normalize,
            seed: derive_indexed(self.seed, &stream, rep as u64),
        }
    }
}

/// One (method, cell, repetition) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct AucRow {
    pub method: Method,
    pub n_centers: usize,
    pub tau: f64,
    pub normalize: bool,
    pub rep: usize,
    pub margin: Option<f64>,
    pub auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub n_centers: usize,
    pub tau: f64,
    pub normalize: bool,
    pub mean: f64,
    /// Population SD over the successful repetitions.
    pub sd: f64,
    pub ok: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    pub config: ExperimentConfig,
    pub rows: Vec<AucRow>,
}

/// Trains a fresh MLP on `train` and scores `test`.
pub fn train_and_score(
    cfg: &ExperimentConfig,
    loss: &LossConfig,
    train: &PairBatch,
    test: &PairBatch,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
    let mut model = EncoderModel::mlp(cfg.dim, cfg.hidden, cfg.depth, cfg.out_dim, &mut rng)?;
    let opts = TrainOptions { epochs, batch: cfg.batch, seed: derive_seed(seed, "shuffle") };
    train_pairs(&mut model, &mut AdaDelta::default(), loss, train, &opts, |_, _, _| Ok(()))?;
    let d = siamese_distance_eval(&model, test)?;
    if d.distances().iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("non-finite test distances".into()));
    }
    auc(d.distances(), test.labels())
}

/// Picks the candidate margin with the best held-out AUC (ties go to the
/// smaller margin). Candidates whose training fails are skipped.
pub fn tune_margin(cfg: &ExperimentConfig, variant: LossVariant, train: &PairBatch, seed: u64) -> Result<f64> {
    let n = train.len();
    let held = (n / 5) & !1;
    let fit: Vec<usize> = (0..n - held).collect();
    let val: Vec<usize> = (n - held..n).collect();
    let (fit, val) = (train.select(&fit)?, train.select(&val)?);
    let mut best: Option<(f64, f64)> = None;
    for (k, &m) in cfg.margins.iter().enumerate() {
        let loss = LossConfig::new(variant, m, cfg.lambda)?;
        if let Ok(a) = train_and_score(cfg, &loss, &fit, &val, cfg.tune_epochs, derive_indexed(seed, "tune", k as u64)) {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((m, a));
            }
        }
    }
    best.map(|(m, _)| m).ok_or_else(|| Error::Diverged(format!("{variant}: every candidate margin failed")))
}

/// Runs every (n_c, τ) cell for `cfg.reps` repetitions. Failures are
/// recorded in their row and the run continues. `progress` sees each row as
/// it is produced.
pub fn run_experiment(cfg: &ExperimentConfig, mut progress: impl FnMut(&AucRow)) -> Result<AucReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &nc in &cfg.nc_list {
        for &tau in &cfg.tau_list {
            let mut margins: Vec<(LossVariant, std::result::Result<f64, String>)> = Vec::new();
            for rep in 0..cfg.reps {
                let synth = cfg.synth(nc, tau, rep);
                let (_, train, test) = generate(&synth)?;
                for &method in &cfg.methods {
                    let mut row = AucRow {
                        method,
                        n_centers: nc,
                        tau,
                        normalize: cfg.normalize,
                        rep,
                        margin: None,
                        auc: None,
                        error: None,
                    };
                    let outcome = match method {
                        Method::Baseline => baseline_auc(&test),
                        Method::Trained(variant) => {
                            let margin = match margins.iter().find(|(v, _)| *v == variant) {
                                Some((_, m)) => m.clone(),
                                None => {
                                    let m = tune_margin(cfg, variant, &train, derive_seed(synth.seed, variant.name()))
                                        .map_err(|e| e.to_string());
                                    margins.push((variant, m.clone()));
                                    m
                                }
                            };
                            match margin {
                                Ok(m) => {
                                    row.margin = Some(m);
                                    LossConfig::new(variant, m, cfg.lambda).and_then(|loss| {
                                        let seed = derive_seed(synth.seed, variant.name());
                                        train_and_score(cfg, &loss, &train, &test, cfg.epochs, seed)
                                    })
                                }
                                Err(e) => Err(Error::Diverged(e)),
                            }
                        }
                    };
                    match outcome {
                        Ok(a) => row.auc = Some(a),
                        Err(e) => row.error = Some(e.to_string()),
                    }
                    progress(&row);
                    rows.push(row);
                }
            }
        }
    }
    Ok(AucReport { config: cfg.clone(), rows })
}

impl AucReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.auc.is_none()).count()
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut out = Vec::new();
        for &nc in &self.config.nc_list {
            for &tau in &self.config.tau_list {
                for &method in &self.config.methods {
                    let cell: Vec<&AucRow> = self
                        .rows
                        .iter()
                        .filter(|r| r.method == method && r.n_centers == nc && r.tau == tau)
                        .collect();
                    let ok: Vec<f64> = cell.iter().filter_map(|r| r.auc).collect();
                    let (mean, sd) = mean_std(&ok).unwrap_or((f64::NAN, f64::NAN));
                    out.push(SummaryRow {
                        method,
                        n_centers: nc,
                        tau,
                        normalize: self.config.normalize,
                        mean,
                        sd,
                        ok: ok.len(),
                        failed: cell.len() - ok.len(),
                    });
                }
            }
        }
        out
    }

    /// Mean AUC of `method` in one cell, if any repetition succeeded.
    pub fn mean(&self, method: Method, n_centers: usize, tau: f64) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.method == method && s.n_centers == n_centers && s.tau == tau && s.ok > 0)
            .map(|s| s.mean)
    }

    pub fn write_rows_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv_result(csv.write_record(["method", "n_c", "tau", "normalize", "rep", "margin", "auc", "error"]))?;
        for r in &self.rows {
            csv_result(csv.write_record([
                r.method.name().to_string(),
                r.n_centers.to_string(),
                r.tau.to_string(),
                r.normalize.to_string(),
                r.rep.to_string(),
                r.margin.map(|m| m.to_string()).unwrap_or_default(),
                r.auc.map(|a| a.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ]))?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_summary_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv_result(csv.write_record(["method", "n_c", "tau", "normalize", "mean_auc", "sd_auc", "ok", "failed"]))?;
        for s in self.summary() {
            csv_result(csv.write_record([
                s.method.name().to_string(),
                s.n_centers.to_string(),
                s.tau.to_string(),
                s.normalize.to_string(),
                s.mean.to_string(),
                s.sd.to_string(),
                s.ok.to_string(),
                s.failed.to_string(),
            ]))?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Mean AUC with SD whiskers against n_c (or τ when only one n_c was run).
    pub fn svg(&self) -> String {
        let by_tau = self.config.nc_list.len() == 1 && self.config.tau_list.len() > 1;
        let xs: Vec<f64> = if by_tau {
            self.config.tau_list.clone()
        } else {
            self.config.nc_list.iter().map(|&n| n as f64).collect()
        };
        let summary = self.summary();
        let (w, h, pad) = (640.0, 420.0, 60.0);
        let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let span = if x1 > x0 { x1 - x0 } else { 1.0 };
        let px = |x: f64| pad + (x - x0) / span * (w - 2.0 * pad);
        let (y_lo, y_hi) = (0.4, 1.0);
        let py = |y: f64| h - pad - (y.clamp(y_lo, y_hi) - y_lo) / (y_hi - y_lo) * (h - 2.0 * pad);
        let colors = ["#d62728", "#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd"];
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        );
        s += &format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n");
        s += &format!(
            "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{0}\" stroke=\"black\"/>\n",
            h - pad,
            w - pad
        );
        for k in 0..=6 {
            let y = y_lo + k as f64 * 0.1;
            s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y:.1}</text>\n", pad - 6.0, py(y) + 4.0);
        }
        for &x in &xs {
            s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x}</text>\n", px(x), h - pad + 18.0);
        }
        let xlabel = if by_tau { "tau" } else { "n_c" };
        s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{xlabel}</text>\n", w / 2.0, h - 12.0);
        s += &format!("<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {0})\" text-anchor=\"middle\">mean AUC</text>\n", h / 2.0);
        for (k, &method) in self.config.methods.iter().enumerate() {
            let color = colors[k % colors.len()];
            let pts: Vec<(f64, &SummaryRow)> = xs
                .iter()
                .filter_map(|&x| {
                    summary
                        .iter()
                        .find(|r| {
                            r.method == method
                                && r.ok > 0
                                && if by_tau { r.tau == x } else { r.n_centers as f64 == x }
                        })
                        .map(|r| (x, r))
                })
                .collect();
            let path: Vec<String> = pts.iter().map(|(x, r)| format!("{:.2},{:.2}", px(*x), py(r.mean))).collect();
            let dash = if matches!(method, Method::Trained(v) if v.base() == LossVariant::Centrifuge) {
                " stroke-dasharray=\"6 4\""
            } else {
                ""
            };
            let width = if matches!(method, Method::Trained(v) if v.has_sd()) { 3 } else { 1 };
            s += &format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"{dash} points=\"{}\"/>\n",
                path.join(" ")
            );
            for (x, r) in &pts {
                s += &format!(
                    "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"{color}\"/>\n",
                    px(*x),
                    py(r.mean - r.sd),
                    py(r.mean + r.sd)
                );
            }
            s += &format!(
                "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
                w - pad - 90.0,
                pad + 16.0 * k as f64,
                method.name()
            );
        }
        s + "</svg>\n"
    }
}

fn csv_result<T>(r: std::result::Result<T, csv::Error>) -> Result<T> {
    r.map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format("CSV", format!("{other:?}")),
    })
}
