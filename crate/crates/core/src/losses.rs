//! Contrastive losses on pairwise distances, with and without the batch
//! standard-deviation term.
//!
//! Labels follow the convention `0 = matching`, `1 = non-matching`. For a
//! batch of `n` pairs the loss is
//!
//! ```text
//! L = λ · mean_i pair(Y_i, D_i) + (1 − λ) · (σ₀ + σ₁)
//! ```
//!
//! where `pair` is the spring or centrifuge term and `σ_Y` is the population
//! standard deviation of the distances carrying label `Y`. The plain variants
//! use `λ = 1`, which drops the SD term entirely.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Below this, a class SD is treated as zero and contributes no gradient.
pub const SIGMA_FLOOR: f64 = 1e-12;

pub const DEFAULT_LAMBDA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Matching = 0,
    NonMatching = 1,
}

impl Label {
    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Label::Matching),
            1 => Ok(Label::NonMatching),
            other => Err(Error::domain(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossVariant {
    Spring,
    Centrifuge,
    SpringSd,
    CentrifugeSd,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] =
        [LossVariant::Spring, LossVariant::Centrifuge, LossVariant::SpringSd, LossVariant::CentrifugeSd];

    pub fn has_sd(self) -> bool {
        matches!(self, LossVariant::SpringSd | LossVariant::CentrifugeSd)
    }

    /// The per-pair potential underlying this variant.
    pub fn base(self) -> LossVariant {
        match self {
            LossVariant::Spring | LossVariant::SpringSd => LossVariant::Spring,
            LossVariant::Centrifuge | LossVariant::CentrifugeSd => LossVariant::Centrifuge,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Spring => "spring",
            LossVariant::Centrifuge => "centrifuge",
            LossVariant::SpringSd => "spring+sd",
            LossVariant::CentrifugeSd => "centrifuge+sd",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "+").as_str() {
            "spring" => Ok(LossVariant::Spring),
            "centrifuge" => Ok(LossVariant::Centrifuge),
            "spring+sd" | "springsd" => Ok(LossVariant::SpringSd),
            "centrifuge+sd" | "centrifugesd" => Ok(LossVariant::CentrifugeSd),
            _ => Err(Error::Config(format!("unknown loss variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub margin: f64,
    pub lambda: f64,
}

impl LossConfig {
    pub fn new(variant: LossVariant, margin: f64, lambda: f64) -> Result<Self> {
        let cfg = Self { variant, margin, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0, 1], got {}", self.lambda)));
        }
        Ok(())
    }

    /// λ actually applied: variants without the SD term always use 1.
    pub fn effective_lambda(&self) -> f64 {
        if self.variant.has_sd() {
            self.lambda
        } else {
            1.0
        }
    }
}

/// Distances of a batch of pairs together with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBatch {
    distances: Vec<f64>,
    labels: Vec<Label>,
}

impl DistanceBatch {
    pub fn new(distances: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if distances.len() != labels.len() {
            return Err(Error::dim(format!(
                "{} distances but {} labels",
                distances.len(),
                labels.len()
            )));
        }
        if let Some(d) = distances.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(Error::domain(format!("distances must be finite and non-negative, got {d}")));
        }
        Ok(Self { distances, labels })
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    fn class_count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Mean and population SD of the distances with the given label.
    fn class_stats(&self, label: Label) -> (usize, f64, f64) {
        let mut n = 0usize;
        let mut sum = 0.0;
        for (d, l) in self.distances.iter().zip(&self.labels) {
            if *l == label {
                n += 1;
                sum += d;
            }
        }
        let mean = sum / n as f64;
        let var = self
            .distances
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == label)
            .map(|(d, _)| (d - mean) * (d - mean))
            .sum::<f64>()
            / n as f64;
        (n, mean, var.sqrt())
    }
}

/// Loss of one pair under the spring or centrifuge potential.
///
/// SD variants are accepted and evaluated with their base potential.
pub fn pair_loss(variant: LossVariant, label: Label, distance: f64, margin: f64) -> Result<f64> {
    if !(distance >= 0.0) {
        return Err(Error::domain(format!("distance must be non-negative, got {distance}")));
    }
    if !(margin > 0.0) {
        return Err(Error::domain(format!("margin must be positive, got {margin}")));
    }
    Ok(pair_value(variant.base(), label, distance, margin))
}

fn pair_value(base: LossVariant, label: Label, d: f64, m: f64) -> f64 {
    match (label, base) {
        (Label::Matching, _) => 0.5 * d * d,
        (Label::NonMatching, LossVariant::Spring) => {
            let h = (m - d).max(0.0);
            0.5 * h * h
        }
        (Label::NonMatching, _) => 0.5 * (m * m - d * d).max(0.0),
    }
}

fn pair_derivative(base: LossVariant, label: Label, d: f64, m: f64) -> f64 {
    match (label, base) {
        (Label::Matching, _) => d,
        // The hinge point itself takes the inactive branch.
        (Label::NonMatching, LossVariant::Spring) if d < m => -(m - d),
        (Label::NonMatching, LossVariant::Centrifuge) if d < m => -d,
        (Label::NonMatching, _) => 0.0,
    }
}

fn check_batch(config: &LossConfig, batch: &DistanceBatch) -> Result<()> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::DegenerateBatch("empty batch".into()));
    }
    if config.variant.has_sd() {
        let n0 = batch.class_count(Label::Matching);
        let n1 = batch.class_count(Label::NonMatching);
        if n0 < 2 || n1 < 2 {
            return Err(Error::DegenerateBatch(format!(
                "{} needs at least 2 pairs per class, got {n0} matching and {n1} non-matching",
                config.variant
            )));
        }
    }
    Ok(())
}

pub fn batch_loss(config: &LossConfig, batch: &DistanceBatch) -> Result<f64> {
    check_batch(config, batch)?;
    let base = config.variant.base();
    let lambda = config.effective_lambda();
    let pair_mean = batch
        .distances
        .iter()
        .zip(&batch.labels)
        .map(|(&d, &l)| pair_value(base, l, d, config.margin))
        .sum::<f64>()
        / batch.len() as f64;
    let mut loss = lambda * pair_mean;
    if config.variant.has_sd() {
        let (_, _, s0) = batch.class_stats(Label::Matching);
        let (_, _, s1) = batch.class_stats(Label::NonMatching);
        loss += (1.0 - lambda) * (s0 + s1);
    }
    Ok(loss)
}

/// Derivative of [`batch_loss`] with respect to every distance in the batch.
///
/// The SD term couples all pairs of a class:
/// `∂σ_Y/∂D_i = (D_i − μ_Y) / (n_Y σ_Y)`, taken as 0 when `σ_Y` is below
/// [`SIGMA_FLOOR`].
pub fn batch_loss_grad(config: &LossConfig, batch: &DistanceBatch) -> Result<Vec<f64>> {
    check_batch(config, batch)?;
    let base = config.variant.base();
    let lambda = config.effective_lambda();
    let n = batch.len() as f64;
    let mut grad: Vec<f64> = batch
        .distances
        .iter()
        .zip(&batch.labels)
        .map(|(&d, &l)| lambda * pair_derivative(base, l, d, config.margin) / n)
        .collect();
    if config.variant.has_sd() {
        for label in [Label::Matching, Label::NonMatching] {
            let (count, mean, sigma) = batch.class_stats(label);
            if sigma < SIGMA_FLOOR {
                continue;
            }
            let scale = (1.0 - lambda) / (count as f64 * sigma);
            for ((g, &d), &l) in grad.iter_mut().zip(&batch.distances).zip(&batch.labels) {
                if l == label {
                    *g += scale * (d - mean);
                }
            }
        }
    }
    Ok(grad)
}
