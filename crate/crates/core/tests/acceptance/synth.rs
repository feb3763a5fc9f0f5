use patchbatch::losses::LossVariant;
use patchbatch::synthgauss::{run_experiment, ExperimentConfig, Method};

use crate::Outcome;

const SEED: u64 = 2016;

pub fn baseline_anchor() -> Outcome {
    let cfg = ExperimentConfig { methods: vec![Method::Baseline], reps: 10, seed: SEED, ..Default::default() };
    let report = run_experiment(&cfg, |_| {}).expect("baseline experiment");
    let aucs: Vec<f64> = report.rows.iter().filter_map(|r| r.auc).collect();
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let lo = aucs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = aucs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pass = aucs.len() == 10 && aucs.iter().all(|a| (a - 0.6).abs() <= 0.1);
    Outcome::new(pass, format!("n_c=10 tau=3 raw, 10 reps: mean {mean:.4}, range [{lo:.4}, {hi:.4}] (want 0.6 +/- 0.1)"))
}

fn trained(v: LossVariant) -> Method {
    Method::Trained(v)
}

pub fn variant_ordering() -> Outcome {
    use LossVariant::*;
    let progress = |r: &patchbatch::synthgauss::AucRow| {
        eprintln!(
            "  [4] {} n_c={} normalize={} rep={} margin={:?} auc={:?}",
            r.method, r.n_centers, r.normalize, r.rep, r.margin, r.auc
        )
    };
    let raw_cfg = ExperimentConfig {
        nc_list: vec![4, 10, 20],
        methods: LossVariant::ALL.into_iter().map(trained).collect(),
        reps: 10,
        seed: SEED,
        ..Default::default()
    };
    let raw = run_experiment(&raw_cfg, progress).expect("raw experiment");
    let mut cells_ok = 0;
    let mut parts = Vec::new();
    for nc in [4, 10, 20] {
        let m = |v| raw.mean(trained(v), nc, 3.0).unwrap_or(f64::NAN);
        let (s, c, ssd, csd) = (m(Spring), m(Centrifuge), m(SpringSd), m(CentrifugeSd));
        let ok = ssd > s && csd > c;
        cells_ok += usize::from(ok);
        parts.push(format!(
            "n_c={nc}: spring {s:.4} < spring+sd {ssd:.4}, centrifuge {c:.4} < centrifuge+sd {csd:.4} {}",
            if ok { "ok" } else { "no" }
        ));
    }
    let norm_cfg = ExperimentConfig {
        nc_list: vec![10],
        normalize: true,
        methods: vec![trained(Spring), trained(Centrifuge)],
        reps: 10,
        seed: SEED,
        ..Default::default()
    };
    let norm = run_experiment(&norm_cfg, progress).expect("normalized experiment");
    let s = norm.mean(trained(Spring), 10, 3.0).unwrap_or(f64::NAN);
    let c = norm.mean(trained(Centrifuge), 10, 3.0).unwrap_or(f64::NAN);
    let b_ok = c > s;
    let failures = raw.failures() + norm.failures();
    let a_ok = cells_ok >= 2;
    Outcome::new(
        a_ok && b_ok,
        format!(
            "(a) SD beats vanilla in {cells_ok}/3 raw cells [{}]; (b) normalized n_c=10: centrifuge {c:.4} vs spring {s:.4} {}; {failures} failed rows",
            parts.join("; "),
            if b_ok { "ok" } else { "no" }
        ),
    )
}
