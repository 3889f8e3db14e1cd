use alloc::vec;
use alloc::vec::Vec;

use crate::ggconv::EntropyParams;
use crate::math::{softplus, softplus_inv};

/// Context-free per-channel Gaussian used for level-1 attributes. Scales are
/// stored raw; `sigma = softplus(raw) + sigma_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelOnePrior {
    pub mu: Vec<f64>,
    pub raw_sigma: Vec<f64>,
    pub delta_adj: Vec<f64>,
}

impl LevelOnePrior {
    pub fn zeros(channels: usize) -> Self {
        Self { mu: vec![0.0; channels], raw_sigma: vec![0.0; channels], delta_adj: vec![0.0; channels] }
    }

    /// Zero mean, unit scale.
    pub fn unit(channels: usize, sigma_min: f64) -> Self {
        let raw = softplus_inv((1.0 - sigma_min).max(1e-12));
        Self { mu: vec![0.0; channels], raw_sigma: vec![raw; channels], delta_adj: vec![0.0; channels] }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn param_count(&self) -> usize {
        3 * self.mu.len()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.mu.iter().chain(&self.raw_sigma).chain(&self.delta_adj).copied()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.mu.iter_mut().chain(self.raw_sigma.iter_mut()).chain(self.delta_adj.iter_mut())
    }

    pub fn entropy_params(&self, sigma_min: f64) -> EntropyParams {
        EntropyParams {
            mu: self.mu.clone(),
            sigma: self.raw_sigma.iter().map(|&r| softplus(r) + sigma_min).collect(),
            delta_adj: self.delta_adj.clone(),
        }
    }
}
