//! Command-line front end: `synth`, `train`, `flow` and `gen-pair`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::flow::FlowMap;
use crate::image::{read_pgm, synthetic_pair, write_pgm};
use crate::losses::{LossConfig, LossVariant};
use crate::matcher::MatchConfig;
use crate::net::train::{train_pairs, TrainOptions};
use crate::net::{checkpoint, sample_pairs, AdaDelta, BnGranularity, EncoderModel, PairBatch, SamplerOptions};
use crate::pipeline::{normalize_image, run_flow, FlowMetrics, PipelineConfig};
use crate::seeds::{derive_indexed, derive_seed};
use crate::synthgauss::{run_experiment, ExperimentConfig, Method};
use config::{expand_config_args, write_atomic, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "patchbatch",
    version,
    about = "Batch-SD contrastive losses and PatchMatch optical flow",
    after_help = "Every command accepts --config FILE: key=value lines (keys are long flag names) \
                  read before the command line, so explicit flags win. A run's manifest.txt is such a file."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gaussian-cluster AUC sweep over loss variants.
    Synth(SynthArgs),
    /// Train the patch encoder on image pairs with ground-truth flow.
    Train(TrainArgs),
    /// Match two images and densify the flow.
    Flow(FlowArgs),
    /// Write a textured image, its shifted copy and the ground-truth flow.
    GenPair(GenPairArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct SynthArgs {
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "10")]
    nc_list: Vec<usize>,
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "3")]
    tau_list: Vec<f64>,
    /// Scale every sample to unit L2 norm.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value = "false", require_equals = true)]
    normalize: bool,
    /// Methods: baseline, spring, centrifuge, spring+sd, centrifuge+sd.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', value_parser = parse_method,
          default_value = "baseline,spring,centrifuge,spring+sd,centrifuge+sd")]
    variants: Vec<Method>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 0.8)]
    lambda: f64,
    /// Candidate margins, tuned per cell and variant.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "1,3,10,30")]
    margins: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    tune_epochs: usize,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 10_000)]
    n_train: usize,
    #[arg(long, default_value_t = 10_000)]
    n_test: usize,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 256)]
    out_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synth_out")]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BnArg {
    Fine,
    Conventional,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct TrainArgs {
    /// First images, comma separated.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', required = true)]
    img1: Vec<PathBuf>,
    /// Second images, one per first image.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', required = true)]
    img2: Vec<PathBuf>,
    /// Ground-truth PBFL1 flows from first to second image.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', required = true)]
    gt: Vec<PathBuf>,
    #[arg(long, value_parser = parse_variant, default_value = "centrifuge+sd")]
    variant: LossVariant,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 0.8)]
    lambda: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 9)]
    patch: usize,
    /// Training pairs in total, split evenly over the image pairs.
    #[arg(long, default_value_t = 4096)]
    pairs: usize,
    #[arg(long, default_value_t = 32)]
    descriptor: usize,
    #[arg(long, value_enum, default_value = "fine")]
    bn: BnArg,
    #[arg(long, default_value_t = 1)]
    min_shift: usize,
    #[arg(long, default_value_t = 8)]
    max_shift: usize,
    /// Apply a random dihedral symmetry to each pair.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value = "true", require_equals = true)]
    augment: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path; `<out>.loss.csv` and `<out>.manifest.txt` go next to it.
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct FlowArgs {
    #[arg(long, required = true)]
    model: PathBuf,
    #[arg(long, required = true)]
    img1: PathBuf,
    #[arg(long, required = true)]
    img2: PathBuf,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    radius: usize,
    #[arg(long, default_value_t = 2)]
    iters: usize,
    #[arg(long, default_value_t = 64)]
    cc_area: usize,
    #[arg(long, default_value_t = 0)]
    border: usize,
    #[arg(long, default_value_t = 1)]
    downsample: usize,
    #[arg(long, default_value_t = crate::interp::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = crate::interp::DEFAULT_KAPPA)]
    kappa: f64,
    #[arg(long, default_value_t = 3.0)]
    bad_threshold: f64,
    #[arg(long, default_value_t = 10.0)]
    accuracy_radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prefix of every output file, e.g. `out/run1_`.
    #[arg(long, required = true)]
    out_prefix: String,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct GenPairArgs {
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 3, allow_hyphen_values = true)]
    dx: isize,
    #[arg(long, default_value_t = 2, allow_hyphen_values = true)]
    dy: isize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, required = true)]
    out_prefix: String,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<LossVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failed command and its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn join_paths(xs: &[PathBuf]) -> String {
    xs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn require_file(p: &Path, what: &str) -> CmdResult {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", p.display())))
    }
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config_args(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Flow(a) => cmd_flow(a),
        Command::GenPair(a) => cmd_gen_pair(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let cfg = ExperimentConfig {
        dim: a.dim,
        n_train: a.n_train,
        n_test: a.n_test,
        nc_list: a.nc_list.clone(),
        tau_list: a.tau_list.clone(),
        normalize: a.normalize,
        methods: a.variants.clone(),
        reps: a.reps,
        epochs: a.epochs,
        batch: a.batch,
        lambda: a.lambda,
        margins: a.margins.clone(),
        tune_epochs: a.tune_epochs,
        hidden: a.hidden,
        depth: a.depth,
        out_dim: a.out_dim,
        seed: a.seed,
    };
    cfg.validate()?;
    let resolved = vec![
        kv("nc-list", join(&a.nc_list)),
        kv("tau-list", join(&a.tau_list)),
        kv("normalize", a.normalize),
        kv("variants", a.variants.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")),
        kv("reps", a.reps),
        kv("epochs", a.epochs),
        kv("batch", a.batch),
        kv("lambda", a.lambda),
        kv("margins", join(&a.margins)),
        kv("tune-epochs", a.tune_epochs),
        kv("dim", a.dim),
        kv("n-train", a.n_train),
        kv("n-test", a.n_test),
        kv("hidden", a.hidden),
        kv("depth", a.depth),
        kv("out-dim", a.out_dim),
        kv("seed", a.seed),
        kv("out-dir", a.out_dir.display()),
    ];
    let mut manifest = RunManifest::start("synth", resolved, a.seed);
    fs::create_dir_all(&a.out_dir)?;
    let report = run_experiment(&cfg, |row| {
        let auc = row.auc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "failed".into());
        eprintln!("{} n_c={} tau={} rep={} auc={auc}", row.method, row.n_centers, row.tau, row.rep);
    })?;

    let rows_path = a.out_dir.join("rows.csv");
    let summary_path = a.out_dir.join("summary.csv");
    let svg_path = a.out_dir.join("auc.svg");
    let mut buf = Vec::new();
    report.write_rows_csv(&mut buf)?;
    write_atomic(&rows_path, &buf)?;
    buf.clear();
    report.write_summary_csv(&mut buf)?;
    write_atomic(&summary_path, &buf)?;
    write_atomic(&svg_path, report.svg().as_bytes())?;
    manifest.outputs = vec![rows_path, summary_path, svg_path];

    for s in report.summary() {
        println!("{:<14} n_c={:<3} tau={:<5} auc={:.4} ± {:.4}", s.method.name(), s.n_centers, s.tau, s.mean, s.sd);
    }
    let failed = report.failures();
    let status = if failed == 0 { "ok".to_string() } else { format!("failed ({failed} rows)") };
    manifest.finish(&status, &a.out_dir.join("manifest.txt"))?;
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} experiment rows failed; see rows.csv")));
    }
    Ok(())
}

fn load_training_pairs(a: &TrainArgs) -> Result<PairBatch, Failure> {
    if a.img1.len() != a.img2.len() || a.img1.len() != a.gt.len() {
        return Err(Failure::Usage("--img1, --img2 and --gt need the same number of files".into()));
    }
    if a.patch % 2 == 0 {
        return Err(Failure::Usage(format!("--patch {} must be odd", a.patch)));
    }
    for i in 0..a.img1.len() {
        require_file(&a.img1[i], "image")?;
        require_file(&a.img2[i], "image")?;
        require_file(&a.gt[i], "ground-truth flow")?;
    }
    let per_pair = (a.pairs / a.img1.len()) & !1;
    if per_pair == 0 {
        return Err(Failure::Usage(format!("--pairs {} leaves no pairs per image", a.pairs)));
    }
    let opts = SamplerOptions { min_shift: a.min_shift, max_shift: a.max_shift, augment: a.augment };
    let mut batches = Vec::new();
    for i in 0..a.img1.len() {
        let im1 = normalize_image(&read_pgm(&a.img1[i])?);
        let im2 = normalize_image(&read_pgm(&a.img2[i])?);
        let gt = FlowMap::read(&a.gt[i])?;
        let seed = derive_indexed(a.seed, "data", i as u64);
        batches.push(sample_pairs(&im1, &im2, &gt, a.patch, per_pair, seed, &opts)?);
    }
    Ok(PairBatch::concat(&batches)?)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let loss = LossConfig::new(a.variant, a.margin, a.lambda)?;
    let pairs = load_training_pairs(&a)?;
    let granularity = match a.bn {
        BnArg::Fine => BnGranularity::FineGrained,
        BnArg::Conventional => BnGranularity::Conventional,
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, "init"));
    let mut model = EncoderModel::patch_miniature(a.patch, a.descriptor, granularity, &mut init_rng)?;
    let resolved = vec![
        kv("img1", join_paths(&a.img1)),
        kv("img2", join_paths(&a.img2)),
        kv("gt", join_paths(&a.gt)),
        kv("variant", a.variant.name()),
        kv("margin", a.margin),
        kv("lambda", a.lambda),
        kv("epochs", a.epochs),
        kv("batch", a.batch),
        kv("patch", a.patch),
        kv("pairs", a.pairs),
        kv("descriptor", a.descriptor),
        kv("bn", if matches!(a.bn, BnArg::Fine) { "fine" } else { "conventional" }),
        kv("min-shift", a.min_shift),
        kv("max-shift", a.max_shift),
        kv("augment", a.augment),
        kv("seed", a.seed),
        kv("out", a.out.display()),
    ];
    let mut manifest = RunManifest::start("train", resolved, a.seed);
    let loss_path = with_suffix(&a.out, ".loss.csv");
    let manifest_path = with_suffix(&a.out, ".manifest.txt");
    manifest.outputs = vec![a.out.clone(), loss_path.clone()];

    write_atomic(&a.out, &checkpoint::to_bytes(&model))?;
    let mut losses = Vec::new();
    let mut opt = AdaDelta::default();
    let opts = TrainOptions { epochs: a.epochs, batch: a.batch, seed: derive_seed(a.seed, "shuffle") };
    let result = train_pairs(&mut model, &mut opt, &loss, &pairs, &opts, |epoch, mean, m| {
        eprintln!("epoch {:>4}  loss {mean:.6}", epoch + 1);
        losses.push(mean);
        write_atomic(&a.out, &checkpoint::to_bytes(m))?;
        Ok(())
    });

    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut rec = |r: [String; 2]| csv.write_record(r).map_err(|e| Failure::Runtime(e.to_string()));
    rec(["epoch".into(), "loss".into()])?;
    for (i, l) in losses.iter().enumerate() {
        rec([(i + 1).to_string(), l.to_string()])?;
    }
    let bytes = csv.into_inner().map_err(|e| Failure::Runtime(e.to_string()))?;
    write_atomic(&loss_path, &bytes)?;

    match result {
        Ok(log) => {
            if log.skipped_batches > 0 {
                eprintln!("skipped {} degenerate batches", log.skipped_batches);
            }
            manifest.finish("ok", &manifest_path)?;
            Ok(())
        }
        Err(e) => {
            manifest.finish(&format!("failed: {e}"), &manifest_path)?;
            Err(Failure::Runtime(format!("{e}; last good checkpoint kept at {}", a.out.display())))
        }
    }
}

fn metrics_record(scope: &str, count: usize, m: Option<&FlowMetrics>) -> [String; 5] {
    let f = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    [
        scope.to_string(),
        m.map_or(count, |m| m.count).to_string(),
        f(m.map(|m| m.bad_rate)),
        f(m.map(|m| m.epe)),
        f(m.map(|m| m.accuracy)),
    ]
}

fn cmd_flow(a: FlowArgs) -> CmdResult {
    require_file(&a.model, "model")?;
    require_file(&a.img1, "image")?;
    require_file(&a.img2, "image")?;
    if let Some(gt) = &a.gt {
        require_file(gt, "ground-truth flow")?;
    }
    let cfg = PipelineConfig {
        matcher: MatchConfig {
            iterations: a.iters,
            search_radius: a.radius,
            cc_area_threshold: a.cc_area,
            border_margin: a.border,
            seed: derive_seed(a.seed, "patchmatch-fwd"),
        },
        backward_seed: derive_seed(a.seed, "patchmatch-bwd"),
        k: a.k,
        kappa: a.kappa,
        downsample: a.downsample,
        bad_threshold: a.bad_threshold,
        accuracy_radius: a.accuracy_radius,
    };
    cfg.matcher.validate()?;
    if a.k == 0 || !(a.kappa >= 0.0) || ![1, 2, 4].contains(&a.downsample) {
        return Err(Failure::Usage("--k must be positive, --kappa non-negative, --downsample 1, 2 or 4".into()));
    }
    let resolved = vec![
        kv("model", a.model.display()),
        kv("img1", a.img1.display()),
        kv("img2", a.img2.display()),
        kv("gt", a.gt.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
        kv("radius", a.radius),
        kv("iters", a.iters),
        kv("cc-area", a.cc_area),
        kv("border", a.border),
        kv("downsample", a.downsample),
        kv("k", a.k),
        kv("kappa", a.kappa),
        kv("bad-threshold", a.bad_threshold),
        kv("accuracy-radius", a.accuracy_radius),
        kv("seed", a.seed),
        kv("out-prefix", &a.out_prefix),
    ];
    let resolved: Vec<_> = resolved.into_iter().filter(|(k, v)| !(k == "gt" && v.is_empty())).collect();
    let mut manifest = RunManifest::start("flow", resolved, a.seed);
    let out = |name: &str| PathBuf::from(format!("{}{name}", a.out_prefix));

    let model = checkpoint::load(&a.model)?;
    let img1 = read_pgm(&a.img1)?;
    let img2 = read_pgm(&a.img2)?;
    let gt = a.gt.as_ref().map(FlowMap::read).transpose()?;
    let result = run_flow(&model, &img1, &img2, &cfg, gt.as_ref())?;

    let sparse_path = out("sparse.pbfl");
    let dense_path = out("dense.pbfl");
    let costs_path = out("costs.csv");
    let metrics_path = out("metrics.csv");
    write_atomic(&sparse_path, &FlowMap::from(&result.sparse).to_bytes())?;
    write_atomic(&dense_path, &FlowMap::from(&result.dense).to_bytes())?;

    let csv_err = |e: csv::Error| Failure::Runtime(e.to_string());
    let mut costs = csv::Writer::from_writer(Vec::new());
    costs.write_record(["x", "y", "cost"]).map_err(csv_err)?;
    let w = result.sparse.width;
    for (i, c) in result.forward.final_costs().iter().enumerate() {
        if c.is_finite() {
            costs.write_record([(i % w).to_string(), (i / w).to_string(), c.to_string()]).map_err(csv_err)?;
        }
    }
    write_atomic(&costs_path, &costs.into_inner().map_err(|e| Failure::Runtime(e.to_string()))?)?;

    let mut metrics = csv::Writer::from_writer(Vec::new());
    metrics.write_record(["scope", "count", "bad_rate", "epe", "accuracy"]).map_err(csv_err)?;
    let sparse_count = result.sparse.valid_count();
    let dense_count = result.dense.u.len();
    let (sm, dm) = match &result.report {
        Some(r) => (r.sparse.as_ref(), Some(&r.dense)),
        None => (None, None),
    };
    metrics.write_record(metrics_record("sparse", sparse_count, sm)).map_err(csv_err)?;
    metrics.write_record(metrics_record("dense", dense_count, dm)).map_err(csv_err)?;
    write_atomic(&metrics_path, &metrics.into_inner().map_err(|e| Failure::Runtime(e.to_string()))?)?;

    println!("matches kept: {sparse_count} of {dense_count} pixels");
    if let Some(r) = &result.report {
        if let Some(s) = &r.sparse {
            println!("sparse: epe {:.4}  bad {:.4}  acc {:.4}", s.epe, s.bad_rate, s.accuracy);
        }
        println!("dense:  epe {:.4}  bad {:.4}  acc {:.4}", r.dense.epe, r.dense.bad_rate, r.dense.accuracy);
    }
    manifest.outputs = vec![sparse_path, dense_path, costs_path, metrics_path];
    manifest.finish("ok", &out("manifest.txt"))?;
    Ok(())
}

fn cmd_gen_pair(a: GenPairArgs) -> CmdResult {
    if a.width == 0 || a.height == 0 {
        return Err(Failure::Usage("--width and --height must be positive".into()));
    }
    let (im1, im2, gt) = synthetic_pair(a.width, a.height, a.dx, a.dy, derive_seed(a.seed, "data"));
    let out = |name: &str| PathBuf::from(format!("{}{name}", a.out_prefix));
    let paths = [out("img1.pgm"), out("img2.pgm"), out("gt.pbfl")];
    if let Some(dir) = paths[0].parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_pgm(&paths[0], &im1)?;
    write_pgm(&paths[1], &im2)?;
    write_atomic(&paths[2], &gt.to_bytes())?;
    let resolved = vec![
        kv("width", a.width),
        kv("height", a.height),
        kv("dx", a.dx),
        kv("dy", a.dy),
        kv("seed", a.seed),
        kv("out-prefix", &a.out_prefix),
    ];
    let mut manifest = RunManifest::start("gen-pair", resolved, a.seed);
    manifest.outputs = paths.to_vec();
    manifest.finish("ok", &out("manifest.txt"))?;
    Ok(())
}
