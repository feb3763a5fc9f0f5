//! AdaDelta: per-coordinate step sizes from running averages of squared
//! gradients and squared updates.
//!
//! ```text
//! E[g²]  ← ρ E[g²] + (1 − ρ) g²
//! Δx     = −sqrt(E[Δx²] + ε) / sqrt(E[g²] + ε) · g
//! E[Δx²] ← ρ E[Δx²] + (1 − ρ) Δx²
//! x      ← x + Δx
//! ```

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    sq_grad: Vec<Tensor>,
    sq_update: Vec<Tensor>,
}

impl Default for AdaDelta {
    fn default() -> Self {
        Self::new(DEFAULT_RHO, DEFAULT_EPS)
    }
}

impl AdaDelta {
    pub fn new(rho: f64, eps: f64) -> Self {
        Self { rho, eps, sq_grad: Vec::new(), sq_update: Vec::new() }
    }

    /// Running averages, one pair of tensors per parameter (empty before the first step).
    pub fn state(&self) -> (&[Tensor], &[Tensor]) {
        (&self.sq_grad, &self.sq_update)
    }

    /// Applies one update in place. State is allocated on the first call and
    /// must keep matching the parameter shapes afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::dim(format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
        }
        if self.sq_grad.is_empty() {
            self.sq_grad = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.sq_update = self.sq_grad.clone();
        } else if self.sq_grad.len() != params.len()
            || self.sq_grad.iter().zip(params.iter()).any(|(s, p)| s.shape() != p.shape())
        {
            return Err(Error::dim("optimizer state does not match parameter shapes"));
        }
        let (rho, eps) = (self.rho, self.eps);
        for ((p, g), (eg, ex)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.sq_grad.iter_mut().zip(self.sq_update.iter_mut()))
        {
            for (((x, &gi), a), b) in
                p.data_mut().iter_mut().zip(g.data()).zip(eg.data_mut()).zip(ex.data_mut())
            {
                *a = rho * *a + (1.0 - rho) * gi * gi;
                let dx = -((*b + eps).sqrt() / (*a + eps).sqrt()) * gi;
                *b = rho * *b + (1.0 - rho) * dx * dx;
                *x += dx;
            }
        }
        Ok(())
    }
}
