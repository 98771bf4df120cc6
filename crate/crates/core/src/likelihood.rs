//! Log-density kernels and the augmented log posterior.

use crate::basis::BSplineBasis;
use crate::data::Dataset;
use crate::dist::{dirichlet_logpdf, inv_gamma_logpdf, inv_wishart_logpdf, mvn_zero_mean_logpdf, normal_logpdf};
use crate::error::{Error, Result};
use crate::parallel::{ordered_sum, Parallelism};
use crate::priors::PriorConfig;
use crate::quadrature::QuadratureRule;
use crate::spec::{Design, ModelSpec};
use crate::state::{ClassParams, ParameterState};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-subject design, precomputed once per fit.
#[derive(Debug, Clone)]
pub struct SubjectDesign {
    pub y: Vec<f64>,
    /// `n_i × p`, row-major.
    pub x: Vec<f64>,
    /// `n_i × q`, row-major.
    pub z: Vec<f64>,
    pub times: Vec<f64>,
    pub event_time: f64,
    pub event: bool,
    /// Survival covariates entering `γ_gᵀ w_i`.
    pub w: Vec<f64>,
    /// `[1, B(T)]`, `x(T)`, `z(T)`.
    pub(crate) basis_t: Vec<f64>,
    pub(crate) x_t: Vec<f64>,
    pub(crate) z_t: Vec<f64>,
    /// Quadrature weights and design rows at the mapped nodes.
    pub(crate) node_weight: Vec<f64>,
    pub(crate) node_basis: Vec<f64>,
    pub(crate) node_x: Vec<f64>,
    pub(crate) node_z: Vec<f64>,
    /// Covariate rows for last-observation-carried-forward lookup.
    covariate_rows: Vec<Vec<f64>>,
}

impl SubjectDesign {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }
}

/// See [`JointModel::translation_directions`].
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationDirection {
    pub fixed: usize,
    pub random: usize,
    /// `c_i` per subject.
    pub factors: Vec<f64>,
}

/// A model bound to a dataset: everything needed to evaluate densities.
#[derive(Debug, Clone)]
pub struct JointModel {
    spec: ModelSpec,
    design: Design,
    hazard: BSplineBasis,
    rule: QuadratureRule,
    subjects: Vec<SubjectDesign>,
    likelihood: bool,
    parallelism: Parallelism,
    p: usize,
    q: usize,
    nb: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl JointModel {
    pub fn new(spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        let design = Design::new(spec, data)?;
        let hazard = BSplineBasis::new(spec.hazard_basis.clone())?;
        let rule = spec.rule()?;
        let (p, q) = (spec.n_fixed(), spec.n_random());
        let nb = spec.n_hazard();
        let mut model = Self {
            spec: spec.clone(),
            design,
            hazard,
            rule,
            subjects: Vec::with_capacity(data.n),
            likelihood: true,
            parallelism: Parallelism::default(),
            p,
            q,
            nb,
        };
        for i in 0..data.n {
            let s = model.build_subject(data, i);
            model.subjects.push(s);
        }
        Ok(model)
    }

    fn build_subject(&self, data: &Dataset, i: usize) -> SubjectDesign {
        let (p, q, nb) = (self.p, self.q, self.nb);
        let rows = data.subject_rows(i);
        let surv = &data.survival[i];
        let mut s = SubjectDesign {
            y: Vec::with_capacity(rows.len()),
            x: vec![0.0; rows.len() * p],
            z: vec![0.0; rows.len() * q],
            times: Vec::with_capacity(rows.len()),
            event_time: surv.event_time,
            event: surv.event,
            w: self.design.surv_covariates.iter().map(|&c| surv.w_covariates[c]).collect(),
            basis_t: vec![0.0; nb],
            x_t: vec![0.0; p],
            z_t: vec![0.0; q],
            node_weight: Vec::with_capacity(self.rule.len()),
            node_basis: vec![0.0; self.rule.len() * nb],
            node_x: vec![0.0; self.rule.len() * p],
            node_z: vec![0.0; self.rule.len() * q],
            covariate_rows: Vec::with_capacity(rows.len()),
        };
        for (k, &r) in rows.iter().enumerate() {
            let rec = &data.longitudinal[r];
            s.y.push(rec.y);
            s.times.push(rec.time);
            s.covariate_rows.push(rec.x_covariates.clone());
            self.design.fill_rows(rec.time, &rec.x_covariates, &mut s.x[k * p..(k + 1) * p], &mut s.z[k * q..(k + 1) * q]);
        }
        let t = surv.event_time;
        self.fill_hazard_row(t, &mut s.basis_t);
        let covs = locf(&s.times, &s.covariate_rows, t).to_vec();
        self.design.fill_rows(t, &covs, &mut s.x_t, &mut s.z_t);
        for (k, (node, weight)) in self.rule.mapped(t).enumerate() {
            s.node_weight.push(weight);
            self.fill_hazard_row(node, &mut s.node_basis[k * nb..(k + 1) * nb]);
            let covs = locf(&s.times, &s.covariate_rows, node).to_vec();
            self.design
                .fill_rows(node, &covs, &mut s.node_x[k * p..(k + 1) * p], &mut s.node_z[k * q..(k + 1) * q]);
        }
        s
    }

    fn fill_hazard_row(&self, t: f64, out: &mut [f64]) {
        out[0] = 1.0;
        self.hazard.eval_clamped_into(t, &mut out[1..]);
    }

    /// Switch off every data term, leaving a prior-only target (diagnostic).
    pub fn prior_only(mut self) -> Self {
        self.likelihood = false;
        self
    }

    pub fn with_parallelism(mut self, parallelism: Parallelism) -> Self {
        self.parallelism = parallelism;
        self
    }

    pub fn parallelism(&self) -> Parallelism {
        self.parallelism
    }

    pub fn has_likelihood(&self) -> bool {
        self.likelihood
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn subject(&self, i: usize) -> &SubjectDesign {
        &self.subjects[i]
    }

    /// Observations entering the likelihood (zero in prior-only mode).
    pub fn n_observations(&self) -> usize {
        if self.likelihood {
            self.subjects.iter().map(SubjectDesign::n_obs).sum()
        } else {
            0
        }
    }

    /// Pairs of a fixed-effect column `j` and a random-effect column `r` with
    /// `x_ij(t) = c_i z_ir(t)` on every design row of every subject, so that
    /// moving `β_j` by `δ` and each `b_ir` by `-δ c_i` leaves all linear
    /// predictors unchanged. Each fixed column gets at most one partner.
    pub fn translation_directions(&self) -> Vec<TranslationDirection> {
        let (p, q) = (self.p, self.q);
        let mut out = Vec::new();
        for j in 0..p {
            'random: for r in 0..q {
                let mut factors = Vec::with_capacity(self.subjects.len());
                for s in &self.subjects {
                    let rows = s.x.chunks(p).zip(s.z.chunks(q));
                    let extra = std::iter::once((&s.x_t[..], &s.z_t[..]))
                        .chain(s.node_x.chunks(p).zip(s.node_z.chunks(q)));
                    let mut c: Option<f64> = None;
                    let mut pairs = Vec::new();
                    for (x, z) in rows.chain(extra) {
                        if c.is_none() && z[r] != 0.0 {
                            c = Some(x[j] / z[r]);
                        }
                        pairs.push((x[j], z[r]));
                    }
                    let c = c.unwrap_or(0.0);
                    let fits = pairs
                        .iter()
                        .all(|&(x, z)| (x - c * z).abs() <= 1e-12 * (1.0 + x.abs()));
                    if !fits {
                        continue 'random;
                    }
                    factors.push(c);
                }
                if factors.iter().any(|&c| c != 0.0) {
                    out.push(TranslationDirection { fixed: j, random: r, factors });
                    break;
                }
            }
        }
        out
    }

    /// `x_i(t)` and `z_i(t)` with covariates carried forward from the last
    /// measurement at or before `t`.
    pub fn design_rows(&self, i: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
        let s = &self.subjects[i];
        let covs = locf(&s.times, &s.covariate_rows, t);
        let mut x = vec![0.0; self.p];
        let mut z = vec![0.0; self.q];
        self.design.fill_rows(t, covs, &mut x, &mut z);
        (x, z)
    }

    /// `η_ig(t) = x_i(t)ᵀβ_g + z_i(t)ᵀb_ig`.
    pub fn eta(&self, t: f64, i: usize, g: usize, state: &ParameterState) -> f64 {
        let (x, z) = self.design_rows(i, t);
        dot(&x, &state.classes[g].beta) + dot(&z, &state.b[i][g])
    }

    /// Gaussian log density of subject `i`'s measurements under class `g`.
    pub fn longitudinal_logdensity(&self, i: usize, g: usize, state: &ParameterState) -> f64 {
        if !self.likelihood {
            return 0.0;
        }
        let ssr = self.ssr(i, &state.classes[g].beta, &state.b[i][g]);
        self.long_from_ssr(i, ssr, state.sigma_y2)
    }

    /// Log hazard at `t`; the baseline spline is evaluated at `t` clamped
    /// to its boundary.
    pub fn log_hazard(&self, t: f64, i: usize, g: usize, state: &ParameterState) -> f64 {
        let c = &state.classes[g];
        let mut row = vec![0.0; self.nb];
        self.fill_hazard_row(t, &mut row);
        dot(&row, &c.gamma_h0) + dot(&c.gamma, &self.subjects[i].w) + c.alpha * self.eta(t, i, g, state)
    }

    /// `∫_0^T h_ig(s) ds` by quadrature.
    pub fn cumulative_hazard(&self, upper: f64, i: usize, g: usize, state: &ParameterState) -> Result<f64> {
        let mut total = 0.0;
        for (s, w) in self.rule.mapped(upper) {
            let lh = self.log_hazard(s, i, g, state);
            let h = lh.exp();
            if !h.is_finite() {
                return Err(Error::NonFiniteHazard { subject: i, class: g, node: s, log_hazard: lh });
            }
            total += w * h;
        }
        Ok(total)
    }

    /// `δ_i log h(T_i) − H(T_i)`.
    pub fn survival_logdensity(&self, i: usize, g: usize, state: &ParameterState) -> Result<f64> {
        if !self.likelihood {
            return Ok(0.0);
        }
        let v = self.survival_fast(i, &state.classes[g], &state.b[i][g]);
        match v {
            Ok(x) if x == f64::NEG_INFINITY => {
                let s = &self.subjects[i];
                // report the first offending node
                for (k, _) in s.node_weight.iter().enumerate() {
                    let lh = self.node_log_hazard(i, k, &state.classes[g], &state.b[i][g]);
                    if !lh.exp().is_finite() {
                        let node = self.rule.mapped(s.event_time).nth(k).map_or(f64::NAN, |n| n.0);
                        return Err(Error::NonFiniteHazard { subject: i, class: g, node, log_hazard: lh });
                    }
                }
                Ok(x)
            }
            other => other,
        }
    }

    /// Longitudinal plus survival log density given `b_ig`.
    pub fn class_conditional_loglik(&self, i: usize, g: usize, state: &ParameterState) -> Result<f64> {
        Ok(self.longitudinal_logdensity(i, g, state) + self.survival_logdensity(i, g, state)?)
    }

    /// Sum of all prior log densities.
    pub fn log_prior(&self, state: &ParameterState, priors: &PriorConfig) -> Result<f64> {
        let q = self.q;
        let mut lp = inv_gamma_logpdf(state.sigma_y2, priors.sigma_y2_shape, priors.sigma_y2_rate);
        lp += dirichlet_logpdf(&state.pi, &self.spec.dirichlet_a);
        let scale = priors.wishart_scale(q);
        let df = priors.wishart_df(q);
        for c in &state.classes {
            lp += c.beta.iter().map(|&b| normal_logpdf(b, 0.0, priors.beta_var)).sum::<f64>();
            lp += c.gamma.iter().map(|&b| normal_logpdf(b, 0.0, priors.gamma_var)).sum::<f64>();
            lp += c.gamma_h0.iter().map(|&b| normal_logpdf(b, 0.0, priors.gamma_h0_var)).sum::<f64>();
            lp += normal_logpdf(c.alpha, 0.0, priors.alpha_var);
            lp += inv_wishart_logpdf(&c.sigma_b, df, &scale)?;
        }
        Ok(lp)
    }

    /// Per-subject term of the augmented log posterior.
    pub fn subject_log_posterior(&self, i: usize, state: &ParameterState) -> Result<f64> {
        let g = state.v[i];
        Ok(state.pi[g].ln()
            + self.class_conditional_loglik(i, g, state)?
            + mvn_zero_mean_logpdf(&state.b[i][g], &state.classes[g].sigma_b)?)
    }

    /// Augmented log posterior (class indicators and active random effects
    /// included), up to the normalizing constant.
    pub fn log_posterior(&self, state: &ParameterState, priors: &PriorConfig) -> Result<f64> {
        if state.v.len() != self.n_subjects() || state.b.len() != self.n_subjects() {
            return Err(Error::Config("state lacks latent variables for every subject".into()));
        }
        let terms = self.parallelism.map(self.n_subjects(), |i| self.subject_log_posterior(i, state));
        let terms: Vec<f64> = terms.into_iter().collect::<Result<_>>()?;
        Ok(ordered_sum(&terms) + self.log_prior(state, priors)?)
    }

    /// `Σ_i log Σ_g π_g p(y_i, T_i | b_ig)` with the current per-class random
    /// effects; a diagnostic of class fit.
    pub fn mixture_loglik(&self, state: &ParameterState) -> Result<f64> {
        let terms = self.parallelism.map(self.n_subjects(), |i| -> Result<f64> {
            let w: Vec<f64> = (0..state.n_classes())
                .map(|g| Ok(state.pi[g].ln() + self.class_conditional_loglik(i, g, state)?))
                .collect::<Result<_>>()?;
            Ok(log_sum_exp(&w))
        });
        let terms: Vec<f64> = terms.into_iter().collect::<Result<_>>()?;
        Ok(ordered_sum(&terms))
    }

    // ---- allocation-free kernels used by the sampler ----

    /// Sum of squared residuals of subject `i`.
    pub(crate) fn ssr(&self, i: usize, beta: &[f64], b: &[f64]) -> f64 {
        let s = &self.subjects[i];
        let (p, q) = (self.p, self.q);
        let mut acc = 0.0;
        for k in 0..s.n_obs() {
            let r = s.y[k] - dot(&s.x[k * p..(k + 1) * p], beta) - dot(&s.z[k * q..(k + 1) * q], b);
            acc += r * r;
        }
        acc
    }

    pub(crate) fn long_from_ssr(&self, i: usize, ssr: f64, sigma_y2: f64) -> f64 {
        if !self.likelihood {
            return 0.0;
        }
        let n = self.subjects[i].n_obs() as f64;
        -n * HALF_LN_2PI - 0.5 * n * sigma_y2.ln() - 0.5 * ssr / sigma_y2
    }

    fn node_log_hazard(&self, i: usize, k: usize, c: &ClassParams, b: &[f64]) -> f64 {
        let s = &self.subjects[i];
        let (p, q, nb) = (self.p, self.q, self.nb);
        dot(&s.node_basis[k * nb..(k + 1) * nb], &c.gamma_h0)
            + dot(&c.gamma, &s.w)
            + c.alpha * (dot(&s.node_x[k * p..(k + 1) * p], &c.beta) + dot(&s.node_z[k * q..(k + 1) * q], b))
    }

    /// Survival log density; `-∞` when the cumulative hazard overflows and an
    /// error only for NaN.
    pub(crate) fn survival_fast(&self, i: usize, c: &ClassParams, b: &[f64]) -> Result<f64> {
        if !self.likelihood {
            return Ok(0.0);
        }
        let s = &self.subjects[i];
        let (p, q, nb) = (self.p, self.q, self.nb);
        let lin = dot(&c.gamma, &s.w);
        let mut cum = 0.0;
        let nodes = s
            .node_weight
            .iter()
            .zip(s.node_basis.chunks_exact(nb))
            .zip(s.node_x.chunks_exact(p))
            .zip(s.node_z.chunks_exact(q));
        for (((&w, basis), x), z) in nodes {
            let lh = dot(basis, &c.gamma_h0) + lin + c.alpha * (dot(x, &c.beta) + dot(z, b));
            cum += w * lh.exp();
        }
        let mut out = -cum;
        if s.event {
            out += dot(&s.basis_t, &c.gamma_h0) + lin + c.alpha * (dot(&s.x_t, &c.beta) + dot(&s.z_t, b));
        }
        if out.is_nan() {
            return Err(Error::NonFiniteHazard { subject: i, class: usize::MAX, node: f64::NAN, log_hazard: f64::NAN });
        }
        Ok(out)
    }
}

/// Covariate row in effect at time `t`.
fn locf<'a>(times: &[f64], rows: &'a [Vec<f64>], t: f64) -> &'a [f64] {
    let k = times.partition_point(|&s| s <= t);
    &rows[k.saturating_sub(1)]
}

/// `log Σ exp(w)`, `-∞` when every entry is `-∞`.
pub fn log_sum_exp(w: &[f64]) -> f64 {
    let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + w.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
