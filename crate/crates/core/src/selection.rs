//! Overfitted-mixture selection of the number of classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spec::ModelSpec;

/// Emptiness thresholds reported by default.
pub const PSI_SWEEP: [f64; 7] = [0.01, 0.02, 0.05, 0.08, 0.10, 0.12, 0.15];

/// Number of class-specific parameters `d`.
///
/// The hazard block counts its free coefficients: the intercept plus the
/// B-spline coefficients minus the sum-to-zero constraint. `Σ_bg` counts its
/// `q(q+1)/2` free entries.
pub fn class_specific_parameter_count(spec: &ModelSpec) -> usize {
    let q = spec.n_random();
    spec.n_fixed() + spec.n_survival_covariates() + (spec.n_hazard() - 1) + q * (q + 1) / 2 + 1
}

/// Default symmetric Dirichlet concentration, `0.45 d`.
pub fn default_dirichlet_a(spec: &ModelSpec) -> f64 {
    0.45 * class_specific_parameter_count(spec) as f64
}

/// `G − #{g : n_g / n ≤ ψ}`.
pub fn nonempty_count(occupancy: &[usize], n: usize, psi: f64) -> usize {
    let nf = n as f64;
    occupancy.len() - occupancy.iter().filter(|&&c| c as f64 / nf <= psi).count()
}

/// Most frequent value; ties go to the smaller count.
pub fn posterior_mode_classes(counts: &BTreeMap<usize, usize>) -> Option<usize> {
    // BTreeMap iterates in ascending key order, so strict `>` keeps the
    // smallest of tied keys.
    let mut best: Option<(usize, usize)> = None;
    for (&k, &c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k)
}

/// Options of the selection procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub g_max: usize,
    /// Threshold used for the headline answer.
    pub psi: f64,
    /// Thresholds reported in the sweep.
    pub psi_sweep: Vec<f64>,
    /// Symmetric Dirichlet concentration; `None` uses `0.45 d`.
    pub dirichlet_a: Option<f64>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { g_max: 6, psi: 0.10, psi_sweep: PSI_SWEEP.to_vec(), dirichlet_a: None }
    }
}

impl SelectionConfig {
    /// Check the thresholds and the `a < d/2` rule against `spec`.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.g_max < 1 {
            return Err(Error::Config("g_max must be >= 1".into()));
        }
        for &psi in std::iter::once(&self.psi).chain(&self.psi_sweep) {
            if !(0.0..1.0).contains(&psi) {
                return Err(Error::Config(format!("psi must lie in [0, 1), got {psi}")));
            }
        }
        let d = class_specific_parameter_count(spec) as f64;
        let a = self.dirichlet_a.unwrap_or(0.45 * d);
        if !(a > 0.0 && a < d / 2.0) {
            return Err(Error::Config(format!("dirichlet_a = {a} violates 0 < a < d/2 = {}", d / 2.0)));
        }
        Ok(())
    }
}

/// Distribution of the non-empty class count at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiSummary {
    pub psi: f64,
    pub mode: Option<usize>,
    /// Iterations per non-empty class count.
    pub frequency: BTreeMap<usize, usize>,
}

/// Tally `g_opt` over occupancy rows at each threshold.
pub fn summarize_occupancy(rows: &[Vec<usize>], n: usize, psis: &[f64]) -> Vec<PsiSummary> {
    psis.iter()
        .map(|&psi| {
            let mut frequency = BTreeMap::new();
            for row in rows {
                *frequency.entry(nonempty_count(row, n, psi)).or_insert(0) += 1;
            }
            PsiSummary { psi, mode: posterior_mode_classes(&frequency), frequency }
        })
        .collect()
}

/// Result of one selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub g_max: usize,
    pub n: usize,
    pub dirichlet_a: f64,
    pub psi: f64,
    /// Posterior mode of the non-empty class count at `psi`.
    pub selected: Option<usize>,
    pub sweep: Vec<PsiSummary>,
    pub post_burn_in_iterations: usize,
}

impl SelectionReport {
    pub fn mode_at(&self, psi: f64) -> Option<usize> {
        self.sweep.iter().find(|s| (s.psi - psi).abs() < 1e-12).and_then(|s| s.mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonempty_examples() {
        assert_eq!(nonempty_count(&[420, 315, 210, 52, 32, 21], 1050, 0.10), 3);
        assert_eq!(nonempty_count(&[10, 10, 10, 10, 10, 0], 50, 0.0), 5);
        assert_eq!(nonempty_count(&[0, 0, 7, 0], 7, 0.9), 1);
        assert_eq!(nonempty_count(&[5, 5], 10, 0.5), 0);
    }

    #[test]
    fn mode_examples() {
        let m = |pairs: &[(usize, usize)]| posterior_mode_classes(&pairs.iter().cloned().collect());
        assert_eq!(m(&[(3, 80), (4, 20)]), Some(3));
        assert_eq!(m(&[(2, 50), (3, 50)]), Some(2));
        assert_eq!(m(&[(6, 1)]), Some(6));
        assert_eq!(m(&[]), None);
    }
}
