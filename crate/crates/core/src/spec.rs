//! Model specification: design layouts, hazard basis and class count.

use serde::{Deserialize, Serialize};

use crate::basis::{
    knots_equidistant, knots_from_quantiles, BSplineSpec, NaturalSplineBasis, NaturalSplineSpec,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::quadrature::{QuadratureRule, DEFAULT_GRADING, DEFAULT_NODES};

/// How measurement time enters the longitudinal design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeEffect {
    Linear,
    NaturalSpline(NaturalSplineSpec),
}

/// Columns of `x_i(t)`, in order: intercept, covariates, time terms,
/// covariate-by-time interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedEffectLayout {
    pub intercept: bool,
    pub covariates: Vec<String>,
    pub time: bool,
    /// Each listed covariate is multiplied by every time term.
    pub time_interactions: Vec<String>,
}

impl Default for FixedEffectLayout {
    fn default() -> Self {
        Self { intercept: true, covariates: Vec::new(), time: true, time_interactions: Vec::new() }
    }
}

/// Columns of `z_i(t)`: intercept, then time terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomEffectLayout {
    pub intercept: bool,
    pub time: bool,
}

impl Default for RandomEffectLayout {
    fn default() -> Self {
        Self { intercept: true, time: true }
    }
}

/// A fully resolved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Number of latent classes `G`.
    pub classes: usize,
    pub time_effect: TimeEffect,
    pub fixed_effects: FixedEffectLayout,
    pub random_effects: RandomEffectLayout,
    pub survival_covariates: Vec<String>,
    /// Basis of the log baseline hazard (an explicit intercept is added).
    pub hazard_basis: BSplineSpec,
    /// Dirichlet concentration per class.
    pub dirichlet_a: Vec<f64>,
    pub quadrature_nodes: usize,
    pub quadrature_grading: u32,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::Config("number of classes must be >= 1".into()));
        }
        if self.dirichlet_a.len() != self.classes {
            return Err(Error::Config(format!(
                "dirichlet_a has {} entries for {} classes",
                self.dirichlet_a.len(),
                self.classes
            )));
        }
        if self.dirichlet_a.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config("dirichlet_a entries must be positive".into()));
        }
        if self.random_effects.intercept && !self.fixed_effects.intercept {
            return Err(Error::Config("random intercept requires a fixed intercept".into()));
        }
        if self.random_effects.time && !self.fixed_effects.time {
            return Err(Error::Config("random time effects require fixed time effects".into()));
        }
        if !self.random_effects.intercept && !self.random_effects.time {
            return Err(Error::Config("at least one random effect is required".into()));
        }
        if let TimeEffect::NaturalSpline(ns) = &self.time_effect {
            ns.validate()?;
        }
        if self.n_random() > crate::linalg::SMALL_MAX {
            return Err(Error::Config(format!(
                "at most {} random effects are supported, layout has {}",
                crate::linalg::SMALL_MAX,
                self.n_random()
            )));
        }
        self.hazard_basis.validate()?;
        Ok(())
    }

    pub fn time_dimension(&self) -> usize {
        match &self.time_effect {
            TimeEffect::Linear => 1,
            TimeEffect::NaturalSpline(ns) => ns.dimension(),
        }
    }

    /// Length of `β_g`.
    pub fn n_fixed(&self) -> usize {
        let fe = &self.fixed_effects;
        let td = self.time_dimension();
        usize::from(fe.intercept)
            + fe.covariates.len()
            + if fe.time { td } else { 0 }
            + fe.time_interactions.len() * td
    }

    /// Length of `b_ig`.
    pub fn n_random(&self) -> usize {
        usize::from(self.random_effects.intercept) + if self.random_effects.time { self.time_dimension() } else { 0 }
    }

    pub fn n_survival_covariates(&self) -> usize {
        self.survival_covariates.len()
    }

    /// Length of `γ_h0g` including the intercept.
    pub fn n_hazard(&self) -> usize {
        self.hazard_basis.dimension() + 1
    }

    pub fn rule(&self) -> Result<QuadratureRule> {
        QuadratureRule::gauss_legendre(self.quadrature_nodes, self.quadrature_grading)
    }

    /// Names of the fixed-effect columns.
    pub fn fixed_effect_names(&self) -> Vec<String> {
        let fe = &self.fixed_effects;
        let td = self.time_dimension();
        let time_names: Vec<String> = match td {
            1 => vec!["time".into()],
            _ => (1..=td).map(|k| format!("ns{k}(time)")).collect(),
        };
        let mut names = Vec::new();
        if fe.intercept {
            names.push("(Intercept)".into());
        }
        names.extend(fe.covariates.iter().cloned());
        if fe.time {
            names.extend(time_names.iter().cloned());
        }
        for c in &fe.time_interactions {
            names.extend(time_names.iter().map(|t| format!("{t}:{c}")));
        }
        names
    }
}

/// Resolved design: covariate names mapped to dataset columns.
#[derive(Debug, Clone)]
pub struct Design {
    time_basis: Option<NaturalSplineBasis>,
    fe_intercept: bool,
    fe_time: bool,
    fe_covariates: Vec<usize>,
    fe_interactions: Vec<usize>,
    re_intercept: bool,
    re_time: bool,
    pub(crate) surv_covariates: Vec<usize>,
    p: usize,
    q: usize,
    td: usize,
}

impl Design {
    pub fn new(spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        spec.validate()?;
        let fe = &spec.fixed_effects;
        let time_basis = match &spec.time_effect {
            TimeEffect::Linear => None,
            TimeEffect::NaturalSpline(ns) => Some(NaturalSplineBasis::new(ns.clone())?),
        };
        Ok(Self {
            time_basis,
            fe_intercept: fe.intercept,
            fe_time: fe.time,
            fe_covariates: fe.covariates.iter().map(|c| data.long_covariate_index(c)).collect::<Result<_>>()?,
            fe_interactions: fe
                .time_interactions
                .iter()
                .map(|c| data.long_covariate_index(c))
                .collect::<Result<_>>()?,
            re_intercept: spec.random_effects.intercept,
            re_time: spec.random_effects.time,
            surv_covariates: spec
                .survival_covariates
                .iter()
                .map(|c| data.surv_covariate_index(c))
                .collect::<Result<_>>()?,
            p: spec.n_fixed(),
            q: spec.n_random(),
            td: spec.time_dimension(),
        })
    }

    pub fn n_fixed(&self) -> usize {
        self.p
    }

    pub fn n_random(&self) -> usize {
        self.q
    }

    fn time_terms(&self, t: f64, out: &mut [f64]) {
        match &self.time_basis {
            None => out[0] = t,
            Some(ns) => out.copy_from_slice(&ns.eval(t)),
        }
    }

    /// Fill `x(t)` and `z(t)` for covariate row `covs`.
    pub fn fill_rows(&self, t: f64, covs: &[f64], x: &mut [f64], z: &mut [f64]) {
        let mut tt = [0.0f64; 32];
        let tt = &mut tt[..self.td];
        self.time_terms(t, tt);
        let mut k = 0;
        if self.fe_intercept {
            x[k] = 1.0;
            k += 1;
        }
        for &c in &self.fe_covariates {
            x[k] = covs[c];
            k += 1;
        }
        if self.fe_time {
            x[k..k + self.td].copy_from_slice(tt);
            k += self.td;
        }
        for &c in &self.fe_interactions {
            for v in tt.iter() {
                x[k] = covs[c] * v;
                k += 1;
            }
        }
        let mut k = 0;
        if self.re_intercept {
            z[k] = 1.0;
            k += 1;
        }
        if self.re_time {
            z[k..k + self.td].copy_from_slice(tt);
        }
    }
}

/// Hazard knot placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotPlacement {
    /// Equally spaced percentiles of the observed event times.
    Percentile,
    /// Equally spaced over the boundary interval.
    Equidistant,
}

/// Hazard basis options resolved against data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HazardConfig {
    pub degree: usize,
    pub internal_knots: usize,
    pub placement: KnotPlacement,
    /// Explicit knots override `internal_knots`/`placement`.
    pub knots: Option<Vec<f64>>,
    /// Defaults to `(0, max observed time)`.
    pub boundary: Option<(f64, f64)>,
}

impl Default for HazardConfig {
    fn default() -> Self {
        Self { degree: 2, internal_knots: 3, placement: KnotPlacement::Percentile, knots: None, boundary: None }
    }
}

/// Serializable model options; see [`ModelConfig::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub classes: usize,
    pub time_effect: TimeEffect,
    pub fixed_effects: FixedEffectLayout,
    pub random_effects: RandomEffectLayout,
    pub survival_covariates: Vec<String>,
    pub hazard: HazardConfig,
    /// Symmetric Dirichlet concentration; `None` uses `0.45 d`.
    pub dirichlet_a: Option<f64>,
    pub quadrature_nodes: usize,
    pub quadrature_grading: u32,
    /// Center and scale non-binary covariates before fitting.
    pub standardize_covariates: bool,
    pub standardize_outcome: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            classes: 1,
            time_effect: TimeEffect::Linear,
            fixed_effects: FixedEffectLayout::default(),
            random_effects: RandomEffectLayout::default(),
            survival_covariates: Vec::new(),
            hazard: HazardConfig::default(),
            dirichlet_a: None,
            quadrature_nodes: DEFAULT_NODES,
            quadrature_grading: DEFAULT_GRADING,
            standardize_covariates: false,
            standardize_outcome: false,
        }
    }
}

impl ModelConfig {
    /// Layout used for the simulated scenarios: fixed intercept, `male` and
    /// time; random intercept and slope; `age` in the hazard.
    pub fn simulation_default() -> Self {
        Self {
            fixed_effects: FixedEffectLayout {
                intercept: true,
                covariates: vec!["male".into()],
                time: true,
                time_interactions: vec![],
            },
            survival_covariates: vec!["age".into()],
            standardize_covariates: true,
            ..Self::default()
        }
    }

    /// Resolve knots against `data` and produce a [`ModelSpec`].
    pub fn build(&self, data: &Dataset) -> Result<ModelSpec> {
        let max_time = data.survival.iter().map(|s| s.event_time).fold(0.0, f64::max);
        let boundary = self.hazard.boundary.unwrap_or((0.0, max_time));
        let internal = match &self.hazard.knots {
            Some(k) => k.clone(),
            None if self.hazard.internal_knots == 0 => Vec::new(),
            None => match self.hazard.placement {
                KnotPlacement::Equidistant => knots_equidistant(boundary.0, boundary.1, self.hazard.internal_knots),
                KnotPlacement::Percentile => {
                    let events: Vec<f64> =
                        data.survival.iter().filter(|s| s.event).map(|s| s.event_time).collect();
                    let mut distinct = events.clone();
                    distinct.sort_by(f64::total_cmp);
                    distinct.dedup();
                    let source = if distinct.len() > self.hazard.internal_knots {
                        events
                    } else {
                        data.survival.iter().map(|s| s.event_time).collect()
                    };
                    knots_from_quantiles(&source, self.hazard.internal_knots)?
                }
            },
        };
        let mut spec = ModelSpec {
            classes: self.classes,
            time_effect: self.time_effect.clone(),
            fixed_effects: self.fixed_effects.clone(),
            random_effects: self.random_effects.clone(),
            survival_covariates: self.survival_covariates.clone(),
            hazard_basis: BSplineSpec { degree: self.hazard.degree, internal_knots: internal, boundary },
            dirichlet_a: vec![1.0; self.classes],
            quadrature_nodes: self.quadrature_nodes,
            quadrature_grading: self.quadrature_grading,
        };
        let a = self
            .dirichlet_a
            .unwrap_or_else(|| crate::selection::default_dirichlet_a(&spec));
        spec.dirichlet_a = vec![a; self.classes];
        spec.validate()?;
        Design::new(&spec, data)?;
        Ok(spec)
    }
}

/// Centering and scaling applied to the data before fitting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub outcome: Option<(f64, f64)>,
    /// Per longitudinal covariate column: `(mean, sd)` when scaled.
    pub long_covariates: Vec<Option<(f64, f64)>>,
    pub surv_covariates: Vec<Option<(f64, f64)>>,
    #[serde(default)]
    pub long_covariate_names: Vec<String>,
    #[serde(default)]
    pub surv_covariate_names: Vec<String>,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64)> {
    let n = values.clone().count();
    if n < 2 {
        return None;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var > 0.0).then(|| (mean, var.sqrt()))
}

fn is_binary(values: impl Iterator<Item = f64>) -> bool {
    values.into_iter().all(|v| v == 0.0 || v == 1.0)
}

impl Standardization {
    /// Compute and apply standardization; binary columns are left untouched.
    pub fn apply(data: &Dataset, covariates: bool, outcome: bool) -> Result<(Dataset, Self)> {
        let mut long = data.longitudinal.clone();
        let mut surv = data.survival.clone();
        let mut st = Standardization {
            outcome: None,
            long_covariates: vec![None; data.long_covariate_names.len()],
            surv_covariates: vec![None; data.surv_covariate_names.len()],
            long_covariate_names: data.long_covariate_names.clone(),
            surv_covariate_names: data.surv_covariate_names.clone(),
        };
        if outcome {
            st.outcome = mean_sd(long.iter().map(|r| r.y));
            if let Some((m, s)) = st.outcome {
                long.iter_mut().for_each(|r| r.y = (r.y - m) / s);
            }
        }
        if covariates {
            for j in 0..st.long_covariates.len() {
                let col = long.iter().map(|r| r.x_covariates[j]);
                if is_binary(col.clone()) {
                    continue;
                }
                st.long_covariates[j] = mean_sd(col);
                if let Some((m, s)) = st.long_covariates[j] {
                    long.iter_mut().for_each(|r| r.x_covariates[j] = (r.x_covariates[j] - m) / s);
                }
            }
            for j in 0..st.surv_covariates.len() {
                let col = surv.iter().map(|r| r.w_covariates[j]);
                if is_binary(col.clone()) {
                    continue;
                }
                st.surv_covariates[j] = mean_sd(col);
                if let Some((m, s)) = st.surv_covariates[j] {
                    surv.iter_mut().for_each(|r| r.w_covariates[j] = (r.w_covariates[j] - m) / s);
                }
            }
        }
        let out = crate::data::validate_dataset(long, surv)?
            .with_covariate_names(data.long_covariate_names.clone(), data.surv_covariate_names.clone())?;
        Ok((out, st))
    }

    /// Whether the named covariate (longitudinal or survival) was rescaled.
    pub fn is_scaled(&self, name: &str) -> bool {
        let hit = |names: &[String], cols: &[Option<(f64, f64)>]| {
            names.iter().zip(cols).any(|(n, c)| n == name && c.is_some())
        };
        hit(&self.long_covariate_names, &self.long_covariates) || hit(&self.surv_covariate_names, &self.surv_covariates)
    }

    pub fn is_identity(&self) -> bool {
        self.outcome.is_none()
            && self.long_covariates.iter().all(Option::is_none)
            && self.surv_covariates.iter().all(Option::is_none)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_dataset, LongRecord, SurvRecord};

    fn toy() -> Dataset {
        let long = (0..4)
            .map(|i| LongRecord {
                subject_id: format!("s{i}"),
                time: 0.0,
                y: i as f64,
                x_covariates: vec![(i % 2) as f64, 10.0 + i as f64],
            })
            .collect();
        let surv = (0..4)
            .map(|i| SurvRecord {
                subject_id: format!("s{i}"),
                event_time: 1.0 + i as f64,
                event: i % 2 == 0,
                w_covariates: vec![40.0 + 3.0 * i as f64],
            })
            .collect();
        validate_dataset(long, surv)
            .unwrap()
            .with_covariate_names(vec!["male".into(), "bmi".into()], vec!["age".into()])
            .unwrap()
    }

    #[test]
    fn simulation_layout_dimensions() {
        let data = toy();
        let mut cfg = ModelConfig::simulation_default();
        cfg.hazard.internal_knots = 1;
        let spec = cfg.build(&data).unwrap();
        assert_eq!(spec.n_fixed(), 3);
        assert_eq!(spec.n_random(), 2);
        assert_eq!(spec.fixed_effect_names(), vec!["(Intercept)", "male", "time"]);
        let design = Design::new(&spec, &data).unwrap();
        let (mut x, mut z) = (vec![0.0; 3], vec![0.0; 2]);
        design.fill_rows(2.5, &[1.0, 0.0], &mut x, &mut z);
        assert_eq!(x, vec![1.0, 1.0, 2.5]);
        assert_eq!(z, vec![1.0, 2.5]);
    }

    #[test]
    fn spline_interactions_expand() {
        let data = toy();
        let cfg = ModelConfig {
            time_effect: TimeEffect::NaturalSpline(NaturalSplineSpec {
                internal_knots: vec![1.0, 2.0],
                boundary_knots: (0.0, 3.0),
            }),
            fixed_effects: FixedEffectLayout {
                intercept: true,
                covariates: vec!["male".into()],
                time: true,
                time_interactions: vec!["male".into()],
            },
            hazard: HazardConfig { internal_knots: 0, ..Default::default() },
            ..ModelConfig::default()
        };
        let spec = cfg.build(&data).unwrap();
        assert_eq!(spec.n_fixed(), 1 + 1 + 3 + 3);
        assert_eq!(spec.n_random(), 4);
    }

    #[test]
    fn unknown_covariate_rejected() {
        let data = toy();
        let cfg = ModelConfig { survival_covariates: vec!["height".into()], ..ModelConfig::default() };
        assert!(matches!(cfg.build(&data), Err(Error::Config(_))));
    }

    #[test]
    fn standardization_skips_binary_columns() {
        let data = toy();
        let (out, st) = Standardization::apply(&data, true, false).unwrap();
        assert!(st.long_covariates[0].is_none());
        assert!(st.long_covariates[1].is_some());
        let ages: Vec<f64> = out.survival.iter().map(|s| s.w_covariates[0]).collect();
        assert!(ages.iter().sum::<f64>().abs() < 1e-12);
    }
}
