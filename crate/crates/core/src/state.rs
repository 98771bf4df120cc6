//! Parameter state of one MCMC iteration.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::spec::ModelSpec;

/// Parameters specific to one latent class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassParams {
    /// Fixed effects `β_g`.
    pub beta: Vec<f64>,
    /// Random-effects covariance `Σ_bg`.
    pub sigma_b: DMatrix<f64>,
    /// Survival covariate coefficients `γ_g`.
    pub gamma: Vec<f64>,
    /// Association `α_g`.
    pub alpha: f64,
    /// Log baseline hazard: intercept followed by the B-spline coefficients,
    /// which sum to zero.
    pub gamma_h0: Vec<f64>,
}

impl ClassParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            beta: vec![0.0; spec.n_fixed()],
            sigma_b: DMatrix::identity(spec.n_random(), spec.n_random()),
            gamma: vec![0.0; spec.n_survival_covariates()],
            alpha: 0.0,
            gamma_h0: vec![0.0; spec.n_hazard()],
        }
    }
}

/// Full sampler state: class parameters, shared parameters and latent
/// variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub classes: Vec<ClassParams>,
    /// Shared residual variance `σ_y²`.
    pub sigma_y2: f64,
    /// Class probabilities.
    pub pi: Vec<f64>,
    /// Class indicator per subject (0-based).
    pub v: Vec<usize>,
    /// `b[i][g]`: random effects of subject `i` under class `g`.
    pub b: Vec<Vec<Vec<f64>>>,
}

impl ParameterState {
    pub fn zeros(spec: &ModelSpec, n: usize) -> Self {
        let g = spec.classes;
        Self {
            classes: (0..g).map(|_| ClassParams::zeros(spec)).collect(),
            sigma_y2: 1.0,
            pi: vec![1.0 / g as f64; g],
            v: vec![0; n],
            b: vec![vec![vec![0.0; spec.n_random()]; g]; n],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Random effects currently driving subject `i`'s likelihood.
    pub fn active_b(&self, i: usize) -> &[f64] {
        &self.b[i][self.v[i]]
    }

    pub fn occupancy(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &g in &self.v {
            counts[g] += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.pi.iter().sum();
        if (s - 1.0).abs() > 1e-12 || self.pi.iter().any(|&p| p < 0.0) {
            return Err(Error::Config(format!("class probabilities invalid (sum {s})")));
        }
        if !(self.sigma_y2 > 0.0) {
            return Err(Error::Config("sigma_y2 must be positive".into()));
        }
        for (g, c) in self.classes.iter().enumerate() {
            let sym = (&c.sigma_b - c.sigma_b.transpose()).abs().max();
            if sym > 1e-12 * c.sigma_b.abs().max().max(1.0) || c.sigma_b.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite(format!("Sigma_b of class {}", g + 1)));
            }
        }
        if self.v.iter().any(|&g| g >= self.classes.len()) {
            return Err(Error::Config("class indicator out of range".into()));
        }
        Ok(())
    }

    /// Relabel classes so that new class `k` is old class `perm[k]`.
    pub fn permute(&mut self, perm: &[usize]) {
        let inverse = invert(perm);
        self.classes = perm.iter().map(|&old| self.classes[old].clone()).collect();
        self.pi = perm.iter().map(|&old| self.pi[old]).collect();
        for v in &mut self.v {
            *v = inverse[*v];
        }
        for bi in &mut self.b {
            *bi = perm.iter().map(|&old| bi[old].clone()).collect();
        }
    }
}

/// Inverse of a permutation given as `perm[new] = old`.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}
