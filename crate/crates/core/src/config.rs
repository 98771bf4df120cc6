//! Run configuration file and its self-documenting schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::PriorConfig;
use crate::sampler::ChainConfig;
use crate::selection::SelectionConfig;
use crate::spec::ModelConfig;

/// Options of the replication harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    /// Subjects per generating component; `None` uses the scenario default.
    pub n_per_component: Option<usize>,
    /// Write simulated data, draws and occupancy for each replication.
    pub write_replication_artifacts: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self { n_per_component: Some(200), write_replication_artifacts: true }
    }
}

/// Everything a `fit`, `select` or `replicate` run needs besides data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub priors: PriorConfig,
    pub chain: ChainConfig,
    pub selection: SelectionConfig,
    pub harness: HarnessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::simulation_default(),
            priors: PriorConfig::default(),
            chain: ChainConfig::default(),
            selection: SelectionConfig::default(),
            harness: HarnessConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.chain.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

const FIELD_DOCS: &[(&str, &str)] = &[
    ("model.classes", "number of latent classes for `fit`; `select` and `replicate` use selection.g_max"),
    ("model.time_effect", "`{\"kind\":\"linear\"}` or a natural spline `{\"kind\":\"natural_spline\",\"knots\":[..],\"boundary\":[lo,hi]}`"),
    ("model.fixed_effects", "intercept, longitudinal covariates by name, time terms, covariate-by-time interactions"),
    ("model.random_effects", "random intercept and/or random time terms"),
    ("model.survival_covariates", "baseline hazard covariates by name (the survival file's columns)"),
    ("model.hazard", "B-spline baseline log hazard: degree, internal knot count, placement (percentile|equidistant), optional explicit knots and boundary"),
    ("model.dirichlet_a", "symmetric Dirichlet concentration; null means 0.45 times the class-specific parameter count"),
    ("model.quadrature_nodes", "Gauss-Legendre nodes for the cumulative hazard"),
    ("model.quadrature_grading", "power k of the node map s = T u^k (1 = plain rule)"),
    ("model.standardize_covariates", "center and scale non-binary covariates before fitting"),
    ("model.standardize_outcome", "center and scale the longitudinal outcome"),
    ("priors.beta_var", "prior variance of fixed effects"),
    ("priors.gamma_var", "prior variance of hazard covariate effects"),
    ("priors.gamma_h0_var", "prior variance of baseline hazard coefficients"),
    ("priors.alpha_var", "prior variance of the association parameter"),
    ("priors.sigma_y2_shape", "inverse-gamma shape for the error variance"),
    ("priors.sigma_y2_rate", "inverse-gamma rate for the error variance"),
    ("priors.wishart_scale_diag", "diagonal of the inverse-Wishart scale matrix"),
    ("priors.wishart_df", "inverse-Wishart degrees of freedom; null means the random-effect dimension"),
    ("chain.iterations", "total sweeps"),
    ("chain.burn_in", "discarded sweeps"),
    ("chain.thin", "keep every k-th post-burn-in sweep"),
    ("chain.seed", "master seed; every random draw derives from it"),
    ("chain.adapt_until", "stop proposal adaptation at this sweep; null means burn_in / 2"),
    ("chain.initial_step_sizes", "initial proposal scales for b, beta, gamma, alpha, gamma_h0"),
    ("chain.pseudo_prior", "`conditional` or `prior`: auxiliary density for inactive random effects"),
    ("chain.store_latent", "keep class indicators and random effects in the draws"),
    ("chain.parallelism", "`parallel` or `sequential` per-subject updates"),
    ("selection.g_max", "overfitted class count"),
    ("selection.psi", "emptiness threshold for the headline answer"),
    ("selection.psi_sweep", "thresholds reported in the sweep"),
    ("selection.dirichlet_a", "concentration for the overfitted fit; must satisfy 0 < a < d/2"),
    ("harness.n_per_component", "subjects per generating component in `replicate`"),
    ("harness.write_replication_artifacts", "write data, draws and occupancy for each replication"),
];

/// Default configuration plus a description of every field.
pub fn schema() -> serde_json::Value {
    let docs: serde_json::Map<String, serde_json::Value> =
        FIELD_DOCS.iter().map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string()))).collect();
    serde_json::json!({
        "defaults": RunConfig::default().to_value(),
        "fields": docs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_round_trip() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_section_rejected() {
        assert!(RunConfig::from_json(r#"{"chian": {}}"#).is_err());
    }

    #[test]
    fn every_default_leaf_is_documented() {
        let defaults = RunConfig::default().to_value();
        for (section, body) in defaults.as_object().unwrap() {
            for key in body.as_object().unwrap().keys() {
                let path = format!("{section}.{key}");
                assert!(FIELD_DOCS.iter().any(|(k, _)| *k == path), "{path} undocumented");
            }
        }
    }
}
