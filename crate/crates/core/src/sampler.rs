//! Metropolis-within-Gibbs sampler over the augmented posterior.
//!
//! One sweep updates, in order: class indicators, mixture weights, random
//! effects, fixed effects, residual variance, random-effects covariances and
//! the survival blocks. The mixture weights, residual variance and
//! covariances have conjugate updates; everything else uses adaptive
//! random-walk Metropolis steps whose scales are frozen after
//! `adapt_until`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::{normal_logpdf, sample_dirichlet, sample_inv_gamma, sample_inv_wishart};
use crate::error::{Error, Result};
use crate::likelihood::{log_sum_exp, JointModel, TranslationDirection};
use crate::linalg::{add_outer, cholesky_inverse, cholesky_lower, cholesky_solve, ridge_solve, Small, SMALL_MAX};
use crate::parallel::Parallelism;
use crate::priors::PriorConfig;
use crate::rng::substream;
use crate::state::ParameterState;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

mod block {
    pub const INIT: u64 = 0;
    pub const INDICATORS: u64 = 1;
    pub const WEIGHTS: u64 = 2;
    pub const RANDOM: u64 = 3;
    pub const BETA: u64 = 4;
    pub const SIGMA_Y: u64 = 5;
    pub const SIGMA_B: u64 = 6;
    pub const GAMMA: u64 = 7;
    pub const ALPHA: u64 = 8;
    pub const GAMMA_H0: u64 = 9;
    pub const TRANSLATE: u64 = 10;
}

/// Distribution used to refresh random effects of classes a subject does not
/// currently belong to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoPrior {
    /// Gaussian full conditional of `b_ig` under the longitudinal model.
    #[default]
    Conditional,
    /// The random-effects distribution `N(0, Σ_bg)`.
    Prior,
}

/// Survival parameter blocks updated per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalBlock {
    Gamma,
    Alpha,
    GammaH0,
}

/// Chain length, seeding and tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Iteration at which adaptation stops; defaults to `burn_in / 2`.
    pub adapt_until: Option<usize>,
    /// Initial random-walk scales. `b` and `beta` are multipliers on a
    /// data-shaped proposal covariance; `gamma`, `alpha` and `gamma_h0` are
    /// proposal standard deviations.
    pub initial_step_sizes: BTreeMap<String, f64>,
    pub pseudo_prior: PseudoPrior,
    /// Keep class indicators and active random effects in the draws.
    pub store_latent: bool,
    pub parallelism: Parallelism,
}

pub const STEP_KEYS: [&str; 5] = ["b", "beta", "gamma", "alpha", "gamma_h0"];

fn default_steps() -> BTreeMap<String, f64> {
    [("b", 1.0), ("beta", 1.0), ("gamma", 0.05), ("alpha", 0.02), ("gamma_h0", 0.05)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 5,
            seed: 1,
            adapt_until: None,
            initial_step_sizes: default_steps(),
            pseudo_prior: PseudoPrior::Conditional,
            store_latent: false,
            parallelism: Parallelism::Parallel,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "need 0 <= burn_in < iterations (got burn_in {}, iterations {})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if self.adapt_until() > self.burn_in {
            return Err(Error::Config("adapt_until must not exceed burn_in".into()));
        }
        for (k, &v) in &self.initial_step_sizes {
            if !STEP_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown step-size block '{k}'")));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("step size for '{k}' must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn adapt_until(&self) -> usize {
        self.adapt_until.unwrap_or(self.burn_in / 2)
    }

    pub fn retained_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub fn step(&self, key: &str) -> f64 {
        self.initial_step_sizes
            .get(key)
            .copied()
            .unwrap_or_else(|| default_steps()[key])
    }

    /// Whether iteration `t` (0-based) is retained.
    pub fn is_retained(&self, t: usize) -> bool {
        t >= self.burn_in && (t - self.burn_in + 1).is_multiple_of(self.thin)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl AcceptanceStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Retained draws and per-iteration diagnostics of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    /// Thinned post-burn-in states. Latent variables are kept only when
    /// requested; inactive random effects are always dropped.
    pub draws: Vec<ParameterState>,
    pub draw_iterations: Vec<usize>,
    /// Augmented log posterior at each retained draw (NaN when latents are
    /// not stored).
    pub log_posterior: Vec<f64>,
    /// Class counts after every iteration, burn-in included.
    pub occupancy: Vec<Vec<usize>>,
    /// Post-burn-in acceptance counts per block type.
    pub acceptance: BTreeMap<String, AcceptanceStats>,
    pub config_echo: ChainConfig,
    pub n: usize,
}

impl ChainOutput {
    pub fn post_burn_in_occupancy(&self) -> &[Vec<usize>] {
        &self.occupancy[self.config_echo.burn_in.min(self.occupancy.len())..]
    }

    pub fn acceptance_rates(&self) -> BTreeMap<String, f64> {
        self.acceptance.iter().map(|(k, s)| (k.clone(), s.rate())).collect()
    }
}

/// Robbins-Monro scale adaptation with an optional empirical covariance.
#[derive(Debug, Clone)]
struct Adaptive {
    dim: usize,
    base: f64,
    log_scale: f64,
    target: f64,
    empirical: Option<Empirical>,
}

#[derive(Debug, Clone)]
struct Empirical {
    count: usize,
    mean: Vec<f64>,
    m2: DMatrix<f64>,
    factor: Option<DMatrix<f64>>,
}

impl Adaptive {
    fn new(dim: usize, base: f64, empirical: bool) -> Self {
        Self {
            dim,
            base,
            log_scale: 0.0,
            target: if dim == 1 { 0.44 } else { 0.234 },
            empirical: (empirical && base > 0.0 && dim > 1).then(|| Empirical {
                count: 0,
                mean: vec![0.0; dim],
                m2: DMatrix::zeros(dim, dim),
                factor: None,
            }),
        }
    }

    fn scale(&self) -> f64 {
        self.base * self.log_scale.exp()
    }

    fn robbins_monro(&mut self, t: usize, accept_prob: f64) {
        if self.base == 0.0 || !accept_prob.is_finite() {
            return;
        }
        let gain = 1.0 / ((t + 1) as f64).powf(0.6);
        self.log_scale = (self.log_scale + gain * (accept_prob - self.target)).clamp(-30.0, 30.0);
    }

    fn observe(&mut self, x: &[f64]) {
        let dim = self.dim;
        let Some(e) = self.empirical.as_mut() else { return };
        e.count += 1;
        let n = e.count as f64;
        let delta: Vec<f64> = x.iter().zip(&e.mean).map(|(a, m)| a - m).collect();
        for (m, d) in e.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        let delta2: Vec<f64> = x.iter().zip(&e.mean).map(|(a, m)| a - m).collect();
        for i in 0..dim {
            for j in 0..dim {
                e.m2[(i, j)] += delta[i] * delta2[j];
            }
        }
        let warm = 10 * dim + 50;
        if e.count >= warm && e.count % 50 == 0 {
            let mut cov = &e.m2 / (n - 1.0);
            cov = (&cov + cov.transpose()) * 0.5;
            let ridge = 1e-10 * (1.0 + cov.diagonal().max());
            for i in 0..dim {
                cov[(i, i)] += ridge;
            }
            if let Ok(l) = cholesky_lower(&cov, "empirical proposal covariance") {
                if e.factor.is_none() {
                    self.log_scale = 0.0;
                }
                e.factor = Some(l * (2.38 / (dim as f64).sqrt()));
            }
        }
    }

    fn increment<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        match self.empirical.as_ref().and_then(|e| e.factor.as_ref()) {
            Some(l) => {
                let s = self.log_scale.exp();
                (0..self.dim).map(|i| s * (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>()).collect()
            }
            None => z.iter().map(|v| self.scale() * v).collect(),
        }
    }
}

/// Metropolis accept/reject on a log ratio, treating `-∞` targets as
/// inadmissible. Returns (accepted, acceptance probability).
fn metropolis<R: Rng + ?Sized>(rng: &mut R, current: f64, proposed: f64) -> (bool, f64) {
    if proposed == f64::NEG_INFINITY || proposed.is_nan() {
        return (false, 0.0);
    }
    if current == f64::NEG_INFINITY {
        return (true, 1.0);
    }
    let log_ratio = proposed - current;
    let prob = log_ratio.min(0.0).exp();
    let u: f64 = rng.random();
    (log_ratio >= 0.0 || u < prob, prob)
}

/// Draw a category from unnormalized log weights.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> Option<usize> {
    let probs = normalize_log_weights(log_weights)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (g, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(g);
        }
    }
    probs.iter().rposition(|&p| p > 0.0)
}

/// Softmax of log weights; `None` when every weight is `-∞`.
pub fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return None;
    }
    Some(log_weights.iter().map(|w| (w - lse).exp()).collect())
}

/// Conjugate draw `π ~ Dirichlet(a + n)`.
pub fn update_mixture_weights<R: Rng + ?Sized>(rng: &mut R, counts: &[usize], a: &[f64]) -> Vec<f64> {
    let post: Vec<f64> = a.iter().zip(counts).map(|(&a, &n)| a + n as f64).collect();
    sample_dirichlet(rng, &post)
}

/// Conjugate draw `σ_y² ~ IG(shape + N/2, rate + SSR/2)`.
pub fn update_error_variance<R: Rng + ?Sized>(rng: &mut R, ssr: f64, n_obs: usize, priors: &PriorConfig) -> f64 {
    sample_inv_gamma(rng, priors.sigma_y2_shape + 0.5 * n_obs as f64, priors.sigma_y2_rate + 0.5 * ssr)
}

/// Conjugate draw `Σ ~ IW(df + n, M + Σ b bᵀ)` from the active random effects
/// of one class.
pub fn update_re_covariance<R: Rng + ?Sized>(
    rng: &mut R,
    effects: &[&[f64]],
    q: usize,
    priors: &PriorConfig,
) -> Result<DMatrix<f64>> {
    let mut scale = priors.wishart_scale(q);
    for b in effects {
        add_outer(&mut scale, b, 1.0);
    }
    sample_inv_wishart(rng, priors.wishart_df(q) + effects.len() as f64, &scale)
}

/// Per-class quantities reused across subjects within one update.
struct ClassCache {
    sigma_l: Small,
    sigma_inv: Small,
}

/// `log N(b; 0, L Lᵀ)`.
fn small_mvn_logpdf(l: &Small, b: &[f64]) -> f64 {
    let q = l.dim();
    let mut u = [0.0; SMALL_MAX];
    u[..q].copy_from_slice(b);
    l.solve_lower(&mut u[..q]);
    let quad: f64 = u[..q].iter().map(|x| x * x).sum();
    -0.5 * (q as f64 * LN_2PI + quad) - l.log_diag_sum()
}

/// Draw `L z` for `z ~ N(0, I)`.
fn small_mvn_draw<R: Rng + ?Sized>(rng: &mut R, l: &Small) -> Vec<f64> {
    let q = l.dim();
    let z: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
    (0..q).map(|i| (0..=i).map(|j| l.get(i, j) * z[j]).sum()).collect()
}

/// Result of one subject's class-indicator update.
struct IndicatorDraw {
    class: usize,
    refreshed: Vec<Vec<f64>>,
    ssr: f64,
    surv: f64,
}

struct RandomEffectDraw {
    b: Vec<f64>,
    accepted: bool,
    prob: f64,
    ssr: f64,
    surv: f64,
}

/// An MCMC chain in progress.
pub struct Sampler<'m> {
    model: &'m JointModel,
    priors: PriorConfig,
    config: ChainConfig,
    state: ParameterState,
    ssr: Vec<f64>,
    surv: Vec<f64>,
    ztz: Vec<Small>,
    xtx: Vec<DMatrix<f64>>,
    members: Vec<Vec<usize>>,
    translations: Vec<TranslationDirection>,
    adapt_b: Vec<Adaptive>,
    adapt_beta: Vec<Adaptive>,
    adapt_gamma: Vec<Adaptive>,
    adapt_alpha: Vec<Adaptive>,
    adapt_h0: Vec<Adaptive>,
    stats: BTreeMap<String, AcceptanceStats>,
    iteration: usize,
}

impl<'m> Sampler<'m> {
    /// Start a chain from the default initialization.
    pub fn new(model: &'m JointModel, priors: PriorConfig, config: ChainConfig) -> Result<Self> {
        let state = initial_state(model, &config)?;
        Self::from_state(model, priors, config, state)
    }

    /// Start a chain from a given state, which must have a finite log
    /// posterior.
    pub fn from_state(
        model: &'m JointModel,
        priors: PriorConfig,
        config: ChainConfig,
        state: ParameterState,
    ) -> Result<Self> {
        let spec = model.spec();
        config.validate()?;
        priors.validate(spec.n_random())?;
        state.validate()?;
        let g = spec.classes;
        if state.n_classes() != g || state.v.len() != model.n_subjects() || state.b.len() != model.n_subjects() {
            return Err(Error::Config("state dimensions do not match the model".into()));
        }
        let (p, q) = (spec.n_fixed(), spec.n_random());
        let (ztz, xtx) = (0..model.n_subjects())
            .map(|i| {
                let s = model.subject(i);
                let mut ztz = DMatrix::zeros(q, q);
                let mut xtx = DMatrix::zeros(p, p);
                for k in 0..s.n_obs() {
                    add_outer(&mut ztz, &s.z[k * q..(k + 1) * q], 1.0);
                    add_outer(&mut xtx, &s.x[k * p..(k + 1) * p], 1.0);
                }
                (Small::from_dmatrix(&ztz), xtx)
            })
            .unzip();
        let nw = spec.n_survival_covariates();
        let nh = spec.n_hazard();
        let mk = |dim: usize, key: &str, emp: bool| -> Vec<Adaptive> {
            (0..g).map(|_| Adaptive::new(dim, config.step(key), emp)).collect()
        };
        let mut sampler = Self {
            model,
            adapt_b: mk(q, "b", false),
            adapt_beta: mk(p, "beta", false),
            adapt_gamma: mk(nw, "gamma", true),
            adapt_alpha: mk(1, "alpha", true),
            adapt_h0: mk(nh, "gamma_h0", true),
            priors,
            config,
            state,
            ssr: Vec::new(),
            surv: Vec::new(),
            ztz,
            xtx,
            members: Vec::new(),
            translations: model.translation_directions(),
            stats: STEP_KEYS.iter().map(|k| (k.to_string(), AcceptanceStats::default())).collect(),
            iteration: 0,
        };
        match sampler.model.log_posterior(&sampler.state, &sampler.priors) {
            Ok(lp) if lp.is_finite() => {}
            Ok(lp) => return Err(Error::BadInitialization(format!("initial log posterior is {lp}"))),
            Err(e) => return Err(Error::BadInitialization(e.to_string())),
        }
        sampler.refresh_caches()?;
        Ok(sampler)
    }

    pub fn state(&self) -> &ParameterState {
        &self.state
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    /// Recompute the per-subject residual and survival caches.
    pub fn refresh_caches(&mut self) -> Result<()> {
        let (model, state) = (self.model, &self.state);
        self.ssr = (0..model.n_subjects())
            .map(|i| model.ssr(i, &state.classes[state.v[i]].beta, state.active_b(i)))
            .collect();
        self.surv = (0..model.n_subjects())
            .map(|i| model.survival_fast(i, &state.classes[state.v[i]], state.active_b(i)))
            .collect::<Result<_>>()?;
        self.rebuild_members();
        Ok(())
    }

    fn rebuild_members(&mut self) {
        let mut members = vec![Vec::new(); self.state.n_classes()];
        for (i, &g) in self.state.v.iter().enumerate() {
            members[g].push(i);
        }
        self.members = members;
    }

    fn rng(&self, block: u64, index: u64) -> ChaCha8Rng {
        substream(self.config.seed, self.iteration as u64 + 1, block, index)
    }

    fn adapting(&self) -> bool {
        self.iteration < self.config.adapt_until()
    }

    fn record(&mut self, key: &str, accepted: bool) {
        if self.iteration >= self.config.burn_in {
            let s = self.stats.get_mut(key).expect("known block");
            s.proposed += 1;
            s.accepted += u64::from(accepted);
        }
    }

    fn class_caches(&self) -> Result<Vec<ClassCache>> {
        self.state
            .classes
            .iter()
            .enumerate()
            .map(|(g, c)| {
                let l = cholesky_lower(&c.sigma_b, &format!("Sigma_b of class {}", g + 1))?;
                let sigma_inv = Small::from_dmatrix(&cholesky_inverse(&l));
                Ok(ClassCache { sigma_l: Small::from_dmatrix(&l), sigma_inv })
            })
            .collect()
    }

    /// Cholesky factor of the conditional precision `ZᵀZ/σ² + Σ⁻¹` of `b_ig`
    /// and the conditional mean.
    fn conditional_re(&self, i: usize, g: usize, cache: &ClassCache) -> Result<(Small, [f64; SMALL_MAX])> {
        let q = self.model.spec().n_random();
        let mut rhs = [0.0; SMALL_MAX];
        let prec = if self.model.has_likelihood() {
            let s2 = self.state.sigma_y2;
            let s = self.model.subject(i);
            let p = self.model.spec().n_fixed();
            let beta = &self.state.classes[g].beta;
            for k in 0..s.n_obs() {
                let r = s.y[k] - s.x[k * p..(k + 1) * p].iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
                for (j, rj) in rhs[..q].iter_mut().enumerate() {
                    *rj += s.z[k * q + j] * r / s2;
                }
            }
            cache.sigma_inv.add_scaled(&self.ztz[i], 1.0 / s2)
        } else {
            cache.sigma_inv
        };
        let l = prec
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("random-effects conditional precision".into()))?;
        l.solve_lower(&mut rhs[..q]);
        l.solve_lower_transpose(&mut rhs[..q]);
        Ok((l, rhs))
    }

    /// `log N(b; m, P⁻¹)` given the lower factor of `P`.
    fn log_density_precision(l: &Small, mean: &[f64], b: &[f64]) -> f64 {
        let q = b.len();
        // u = Lᵀ (b - m)
        let mut quad = 0.0;
        for i in 0..q {
            let u: f64 = (i..q).map(|k| l.get(k, i) * (b[k] - mean[k])).sum();
            quad += u * u;
        }
        -0.5 * (q as f64 * LN_2PI + quad) + l.log_diag_sum()
    }

    /// Class log weights of subject `i` for the current random effects.
    ///
    /// Each weight is `log π_g + log p(y_i, T_i | b_ig) + log N(b_ig; 0, Σ_g)
    /// − log q_g(b_ig)`, where `q_g` is the pseudo-prior that generated
    /// `b_ig` for classes the subject is not in.
    pub fn class_log_weights(&self, i: usize) -> Result<Vec<f64>> {
        let caches = self.class_caches()?;
        (0..self.state.n_classes())
            .map(|g| {
                let b = &self.state.b[i][g];
                let (ssr, surv) = self.subject_terms(i, g, b)?;
                let cond = match self.config.pseudo_prior {
                    PseudoPrior::Conditional => Some(self.conditional_re(i, g, &caches[g])?),
                    PseudoPrior::Prior => None,
                };
                Ok(self.class_weight(i, g, b, ssr, surv, &caches[g], cond.as_ref()))
            })
            .collect()
    }

    fn subject_terms(&self, i: usize, g: usize, b: &[f64]) -> Result<(f64, f64)> {
        let c = &self.state.classes[g];
        Ok((self.model.ssr(i, &c.beta, b), self.model.survival_fast(i, c, b)?))
    }

    #[allow(clippy::too_many_arguments)]
    fn class_weight(
        &self,
        i: usize,
        g: usize,
        b: &[f64],
        ssr: f64,
        surv: f64,
        cache: &ClassCache,
        conditional: Option<&(Small, [f64; SMALL_MAX])>,
    ) -> f64 {
        let mut w = self.state.pi[g].ln() + self.model.long_from_ssr(i, ssr, self.state.sigma_y2) + surv;
        if let Some((l, m)) = conditional {
            w += small_mvn_logpdf(&cache.sigma_l, b) - Self::log_density_precision(l, m, b);
        }
        w
    }

    fn draw_indicator(&self, i: usize, caches: &[ClassCache]) -> Result<IndicatorDraw> {
        let g_count = self.state.n_classes();
        let q = self.model.spec().n_random();
        let current = self.state.v[i];
        let mut rng = self.rng(block::INDICATORS, i as u64);
        let mut refreshed = Vec::with_capacity(g_count);
        let mut weights = Vec::with_capacity(g_count);
        let mut terms = Vec::with_capacity(g_count);
        for g in 0..g_count {
            let cond = match self.config.pseudo_prior {
                PseudoPrior::Conditional => Some(self.conditional_re(i, g, &caches[g])?),
                PseudoPrior::Prior => None,
            };
            let b = if g == current {
                self.state.b[i][g].clone()
            } else {
                match &cond {
                    None => small_mvn_draw(&mut rng, &caches[g].sigma_l),
                    Some((l, m)) => {
                        let mut z = [0.0; SMALL_MAX];
                        for zj in z[..q].iter_mut() {
                            *zj = rng.sample(StandardNormal);
                        }
                        l.solve_lower_transpose(&mut z[..q]);
                        (0..q).map(|j| m[j] + z[j]).collect()
                    }
                }
            };
            let (ssr, surv) = self.subject_terms(i, g, &b)?;
            weights.push(self.class_weight(i, g, &b, ssr, surv, &caches[g], cond.as_ref()));
            terms.push((ssr, surv));
            refreshed.push(b);
        }
        let class = sample_categorical(&mut rng, &weights).ok_or(Error::NoAdmissibleClass(i))?;
        Ok(IndicatorDraw { class, refreshed, ssr: terms[class].0, surv: terms[class].1 })
    }

    /// Redraw every class indicator, refreshing inactive random effects from
    /// the pseudo-prior first.
    pub fn update_class_indicators(&mut self) -> Result<()> {
        if self.state.n_classes() == 1 {
            return Ok(());
        }
        let caches = self.class_caches()?;
        let draws = self
            .config
            .parallelism
            .map(self.model.n_subjects(), |i| self.draw_indicator(i, &caches));
        for (i, d) in draws.into_iter().enumerate() {
            let d = d?;
            self.state.v[i] = d.class;
            self.state.b[i] = d.refreshed;
            self.ssr[i] = d.ssr;
            self.surv[i] = d.surv;
        }
        self.rebuild_members();
        Ok(())
    }

    pub fn update_mixture_weights(&mut self) {
        let mut rng = self.rng(block::WEIGHTS, 0);
        let counts = self.state.occupancy();
        self.state.pi = update_mixture_weights(&mut rng, &counts, &self.model.spec().dirichlet_a);
    }

    fn draw_random_effect(&self, i: usize, caches: &[ClassCache]) -> Result<RandomEffectDraw> {
        let g = self.state.v[i];
        let q = self.model.spec().n_random();
        let mut rng = self.rng(block::RANDOM, i as u64);
        let b = self.state.active_b(i);
        let (l, _) = self.conditional_re(i, g, &caches[g])?;
        let scale = self.adapt_b[g].scale() * 2.38 / (q as f64).sqrt();
        let mut dz = [0.0; SMALL_MAX];
        for d in dz[..q].iter_mut() {
            *d = scale * rng.sample::<f64, _>(StandardNormal);
        }
        l.solve_lower_transpose(&mut dz[..q]);
        let prop: Vec<f64> = b.iter().zip(&dz).map(|(a, d)| a + d).collect();
        let s2 = self.state.sigma_y2;
        let current =
            self.model.long_from_ssr(i, self.ssr[i], s2) + self.surv[i] + small_mvn_logpdf(&caches[g].sigma_l, b);
        let (ssr, surv) = self.subject_terms(i, g, &prop)?;
        let proposed = self.model.long_from_ssr(i, ssr, s2) + surv + small_mvn_logpdf(&caches[g].sigma_l, &prop);
        let (accepted, prob) = metropolis(&mut rng, current, proposed);
        Ok(if accepted {
            RandomEffectDraw { b: prop, accepted, prob, ssr, surv }
        } else {
            RandomEffectDraw { b: b.to_vec(), accepted, prob, ssr: self.ssr[i], surv: self.surv[i] }
        })
    }

    /// Metropolis update of each subject's active random effects; inactive
    /// ones are redrawn from `N(0, Σ_bg)` under the prior pseudo-prior.
    pub fn update_random_effects(&mut self) -> Result<()> {
        let caches = self.class_caches()?;
        let draws = self
            .config
            .parallelism
            .map(self.model.n_subjects(), |i| self.draw_random_effect(i, &caches));
        let g_count = self.state.n_classes();
        let mut prob_sum = vec![0.0; g_count];
        for (i, d) in draws.into_iter().enumerate() {
            let d = d?;
            let g = self.state.v[i];
            self.state.b[i][g] = d.b;
            self.ssr[i] = d.ssr;
            self.surv[i] = d.surv;
            prob_sum[g] += d.prob;
            self.record("b", d.accepted);
        }
        if self.adapting() {
            let t = self.iteration;
            for g in 0..g_count {
                let n = self.members[g].len();
                if n > 0 {
                    self.adapt_b[g].robbins_monro(t, prob_sum[g] / n as f64);
                }
            }
        }
        if self.config.pseudo_prior == PseudoPrior::Prior && g_count > 1 {
            for i in 0..self.model.n_subjects() {
                let mut rng = self.rng(block::RANDOM, (self.model.n_subjects() + i) as u64);
                for g in 0..g_count {
                    if g != self.state.v[i] {
                        self.state.b[i][g] = small_mvn_draw(&mut rng, &caches[g].sigma_l);
                    }
                }
            }
        }
        Ok(())
    }

    /// Sum over class members of longitudinal and survival log densities
    /// under fixed effects `beta`, with the new per-subject terms.
    fn beta_terms(&self, g: usize, beta: &[f64]) -> Result<Vec<(f64, f64)>> {
        let mut c = self.state.classes[g].clone();
        c.beta = beta.to_vec();
        let members = &self.members[g];
        self.config
            .parallelism
            .map(members.len(), |k| {
                let i = members[k];
                let b = self.state.active_b(i);
                Ok((self.model.ssr(i, beta, b), self.model.survival_fast(i, &c, b)?))
            })
            .into_iter()
            .collect()
    }

    fn beta_prior(&self, beta: &[f64]) -> f64 {
        beta.iter().map(|&b| normal_logpdf(b, 0.0, self.priors.beta_var)).sum()
    }

    fn current_class_target(&self, g: usize, with_long: bool) -> f64 {
        let s2 = self.state.sigma_y2;
        self.members[g]
            .iter()
            .map(|&i| self.surv[i] + if with_long { self.model.long_from_ssr(i, self.ssr[i], s2) } else { 0.0 })
            .sum()
    }

    /// Log acceptance ratio of replacing `β_g` by `proposal`.
    pub fn beta_log_ratio(&self, g: usize, proposal: &[f64]) -> Result<f64> {
        let s2 = self.state.sigma_y2;
        let terms = self.beta_terms(g, proposal)?;
        let new: f64 = self.members[g]
            .iter()
            .zip(&terms)
            .map(|(&i, &(ssr, surv))| self.model.long_from_ssr(i, ssr, s2) + surv)
            .sum::<f64>()
            + self.beta_prior(proposal);
        Ok(new - (self.current_class_target(g, true) + self.beta_prior(&self.state.classes[g].beta)))
    }

    /// Joint random-walk update of each `β_g`, with proposal covariance
    /// shaped by the class's longitudinal design.
    pub fn update_fixed_effects(&mut self) -> Result<()> {
        let p = self.model.spec().n_fixed();
        for g in 0..self.state.n_classes() {
            let mut prec = DMatrix::from_diagonal_element(p, p, 1.0 / self.priors.beta_var);
            if self.model.has_likelihood() {
                for &i in &self.members[g] {
                    prec += &self.xtx[i] / self.state.sigma_y2;
                }
            }
            let l = cholesky_lower(&prec, "fixed-effect proposal precision")?;
            let mut rng = self.rng(block::BETA, g as u64);
            let scale = self.adapt_beta[g].scale() * 2.38 / (p as f64).sqrt();
            let z: Vec<f64> = (0..p).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let dz = crate::linalg::solve_lower_transpose(&l, &z);
            let beta = &self.state.classes[g].beta;
            let prop: Vec<f64> = beta.iter().zip(&dz).map(|(a, d)| a + d).collect();
            let s2 = self.state.sigma_y2;
            let terms = self.beta_terms(g, &prop)?;
            let new = self.members[g]
                .iter()
                .zip(&terms)
                .map(|(&i, &(ssr, surv))| self.model.long_from_ssr(i, ssr, s2) + surv)
                .sum::<f64>()
                + self.beta_prior(&prop);
            let cur = self.current_class_target(g, true) + self.beta_prior(beta);
            let (accepted, prob) = metropolis(&mut rng, cur, new);
            if accepted {
                self.state.classes[g].beta = prop;
                for (&i, &(ssr, surv)) in self.members[g].iter().zip(&terms) {
                    self.ssr[i] = ssr;
                    self.surv[i] = surv;
                }
            }
            self.record("beta", accepted);
            if self.adapting() {
                self.adapt_beta[g].robbins_monro(self.iteration, prob);
            }
            self.translate_fixed_effects(g)?;
        }
        Ok(())
    }

    /// Exact Gibbs draws along each direction that shifts `β_gj` against the
    /// matching active random effects. The linear predictors do not move, so
    /// only the two Gaussian priors enter and the caches stay valid. Without
    /// this step `β_g` and the random effects mix very slowly.
    fn translate_fixed_effects(&mut self, g: usize) -> Result<()> {
        if self.translations.is_empty() {
            return Ok(());
        }
        let l = cholesky_lower(&self.state.classes[g].sigma_b, &format!("Sigma_b of class {}", g + 1))?;
        let sigma_inv = cholesky_inverse(&l);
        let mut rng = self.rng(block::TRANSLATE, g as u64);
        for dir in &self.translations {
            let (j, r) = (dir.fixed, dir.random);
            let beta_j = self.state.classes[g].beta[j];
            let mut precision = 1.0 / self.priors.beta_var;
            let mut linear = -beta_j / self.priors.beta_var;
            for &i in &self.members[g] {
                let c = dir.factors[i];
                if c == 0.0 {
                    continue;
                }
                let b = &self.state.b[i][g];
                precision += c * c * sigma_inv[(r, r)];
                linear += c * (0..b.len()).map(|k| sigma_inv[(r, k)] * b[k]).sum::<f64>();
            }
            let delta = linear / precision + rng.sample::<f64, _>(StandardNormal) / precision.sqrt();
            self.state.classes[g].beta[j] += delta;
            for &i in &self.members[g] {
                self.state.b[i][g][r] -= delta * dir.factors[i];
            }
        }
        Ok(())
    }

    pub fn update_error_variance(&mut self) {
        let mut rng = self.rng(block::SIGMA_Y, 0);
        let ssr: f64 = if self.model.has_likelihood() { self.ssr.iter().sum() } else { 0.0 };
        self.state.sigma_y2 = update_error_variance(&mut rng, ssr, self.model.n_observations(), &self.priors);
    }

    pub fn update_re_covariance(&mut self) -> Result<()> {
        let q = self.model.spec().n_random();
        for g in 0..self.state.n_classes() {
            let mut rng = self.rng(block::SIGMA_B, g as u64);
            let effects: Vec<&[f64]> = self.members[g].iter().map(|&i| self.state.active_b(i)).collect();
            self.state.classes[g].sigma_b = update_re_covariance(&mut rng, &effects, q, &self.priors)?;
        }
        Ok(())
    }

    fn survival_prior(&self, block: SurvivalBlock, values: &[f64]) -> f64 {
        let var = match block {
            SurvivalBlock::Gamma => self.priors.gamma_var,
            SurvivalBlock::Alpha => self.priors.alpha_var,
            SurvivalBlock::GammaH0 => self.priors.gamma_h0_var,
        };
        values.iter().map(|&x| normal_logpdf(x, 0.0, var)).sum()
    }

    fn block_values(&self, g: usize, block: SurvivalBlock) -> Vec<f64> {
        let c = &self.state.classes[g];
        match block {
            SurvivalBlock::Gamma => c.gamma.clone(),
            SurvivalBlock::Alpha => vec![c.alpha],
            SurvivalBlock::GammaH0 => c.gamma_h0.clone(),
        }
    }

    fn survival_terms(&self, g: usize, block: SurvivalBlock, values: &[f64]) -> Result<Vec<f64>> {
        let mut c = self.state.classes[g].clone();
        match block {
            SurvivalBlock::Gamma => c.gamma = values.to_vec(),
            SurvivalBlock::Alpha => c.alpha = values[0],
            SurvivalBlock::GammaH0 => c.gamma_h0 = values.to_vec(),
        }
        let members = &self.members[g];
        self.config
            .parallelism
            .map(members.len(), |k| {
                let i = members[k];
                self.model.survival_fast(i, &c, self.state.active_b(i))
            })
            .into_iter()
            .collect()
    }

    /// Log acceptance ratio of replacing one survival block of class `g`.
    pub fn survival_log_ratio(&self, g: usize, block: SurvivalBlock, proposal: &[f64]) -> Result<f64> {
        let new: f64 = self.survival_terms(g, block, proposal)?.iter().sum::<f64>() + self.survival_prior(block, proposal);
        let cur = self.current_class_target(g, false) + self.survival_prior(block, &self.block_values(g, block));
        Ok(new - cur)
    }

    fn update_survival_block(&mut self, g: usize, block: SurvivalBlock) -> Result<()> {
        let (tag, key) = match block {
            SurvivalBlock::Gamma => (block::GAMMA, "gamma"),
            SurvivalBlock::Alpha => (block::ALPHA, "alpha"),
            SurvivalBlock::GammaH0 => (block::GAMMA_H0, "gamma_h0"),
        };
        let current = self.block_values(g, block);
        if current.is_empty() {
            return Ok(());
        }
        let mut rng = self.rng(tag, g as u64);
        let adapt = match block {
            SurvivalBlock::Gamma => &self.adapt_gamma[g],
            SurvivalBlock::Alpha => &self.adapt_alpha[g],
            SurvivalBlock::GammaH0 => &self.adapt_h0[g],
        };
        let mut step = adapt.increment(&mut rng);
        if block == SurvivalBlock::GammaH0 && step.len() > 2 {
            // keep the spline coefficients on the sum-to-zero plane
            let mean = step[1..].iter().sum::<f64>() / (step.len() - 1) as f64;
            step[1..].iter_mut().for_each(|s| *s -= mean);
        }
        let prop: Vec<f64> = current.iter().zip(&step).map(|(a, d)| a + d).collect();
        let terms = self.survival_terms(g, block, &prop)?;
        let new = terms.iter().sum::<f64>() + self.survival_prior(block, &prop);
        let cur = self.current_class_target(g, false) + self.survival_prior(block, &current);
        let (accepted, prob) = metropolis(&mut rng, cur, new);
        if accepted {
            let c = &mut self.state.classes[g];
            match block {
                SurvivalBlock::Gamma => c.gamma = prop,
                SurvivalBlock::Alpha => c.alpha = prop[0],
                SurvivalBlock::GammaH0 => c.gamma_h0 = prop,
            }
            for (&i, &s) in self.members[g].iter().zip(&terms) {
                self.surv[i] = s;
            }
        }
        self.record(key, accepted);
        if self.adapting() {
            let t = self.iteration;
            let value = self.block_values(g, block);
            let adapt = match block {
                SurvivalBlock::Gamma => &mut self.adapt_gamma[g],
                SurvivalBlock::Alpha => &mut self.adapt_alpha[g],
                SurvivalBlock::GammaH0 => &mut self.adapt_h0[g],
            };
            adapt.robbins_monro(t, prob);
            adapt.observe(&value);
        }
        Ok(())
    }

    pub fn update_survival_parameters(&mut self) -> Result<()> {
        for g in 0..self.state.n_classes() {
            for block in [SurvivalBlock::Gamma, SurvivalBlock::Alpha, SurvivalBlock::GammaH0] {
                self.update_survival_block(g, block)?;
            }
        }
        Ok(())
    }

    /// One full sweep in the fixed block order.
    pub fn sweep(&mut self) -> Result<()> {
        let t = self.iteration;
        let wrap = |e: Error| Error::Chain { iteration: t, source: Box::new(e) };
        self.update_class_indicators().map_err(wrap)?;
        self.update_mixture_weights();
        self.update_random_effects().map_err(wrap)?;
        self.update_fixed_effects().map_err(wrap)?;
        self.update_error_variance();
        self.update_re_covariance().map_err(wrap)?;
        self.update_survival_parameters().map_err(wrap)?;
        self.iteration += 1;
        Ok(())
    }

    /// Current step scales per block type (mean over classes).
    pub fn step_scales(&self) -> BTreeMap<String, f64> {
        let mean = |v: &[Adaptive]| v.iter().map(Adaptive::scale).sum::<f64>() / v.len().max(1) as f64;
        [
            ("b", mean(&self.adapt_b)),
            ("beta", mean(&self.adapt_beta)),
            ("gamma", mean(&self.adapt_gamma)),
            ("alpha", mean(&self.adapt_alpha)),
            ("gamma_h0", mean(&self.adapt_h0)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn snapshot(&self) -> ParameterState {
        let mut s = self.state.clone();
        if self.config.store_latent {
            for (i, bi) in s.b.iter_mut().enumerate() {
                let g = self.state.v[i];
                for (k, b) in bi.iter_mut().enumerate() {
                    if k != g {
                        *b = Vec::new();
                    }
                }
            }
        } else {
            s.v.clear();
            s.b.clear();
        }
        s
    }

    /// Run the configured number of iterations.
    pub fn run(mut self) -> Result<ChainOutput> {
        let cfg = self.config.clone();
        let mut out = ChainOutput {
            draws: Vec::with_capacity(cfg.retained_draws()),
            draw_iterations: Vec::with_capacity(cfg.retained_draws()),
            log_posterior: Vec::with_capacity(cfg.retained_draws()),
            occupancy: Vec::with_capacity(cfg.iterations),
            acceptance: BTreeMap::new(),
            config_echo: cfg.clone(),
            n: self.model.n_subjects(),
        };
        for t in 0..cfg.iterations {
            self.sweep()?;
            out.occupancy.push(self.state.occupancy());
            if cfg.is_retained(t) {
                let lp = if cfg.store_latent {
                    self.model
                        .log_posterior(&self.state, &self.priors)
                        .map_err(|e| Error::Chain { iteration: t, source: Box::new(e) })?
                } else {
                    f64::NAN
                };
                out.log_posterior.push(lp);
                out.draws.push(self.snapshot());
                out.draw_iterations.push(t);
            }
        }
        out.acceptance = self.stats.clone();
        Ok(out)
    }
}

/// Run one chain from the default initialization.
pub fn run_chain(model: &JointModel, priors: &PriorConfig, config: &ChainConfig) -> Result<ChainOutput> {
    Sampler::new(model, priors.clone(), config.clone())?.run()
}

/// Deterministic starting point: k-means on per-subject intercept/slope
/// summaries, per-class least squares for `β_g`, pooled residual variance,
/// `Σ_bg = 0.1 I`, conditional-mean random effects and a constant baseline
/// hazard at the crude event rate.
pub fn initial_state(model: &JointModel, config: &ChainConfig) -> Result<ParameterState> {
    let spec = model.spec();
    let n = model.n_subjects();
    let g_count = spec.classes;
    let (p, q) = (spec.n_fixed(), spec.n_random());
    let mut state = ParameterState::zeros(spec, n);

    // per-subject summaries
    let summaries: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let s = model.subject(i);
            let mut ztz = DMatrix::zeros(q, q);
            let mut zty = vec![0.0; q];
            for k in 0..s.n_obs() {
                let z = &s.z[k * q..(k + 1) * q];
                add_outer(&mut ztz, z, 1.0);
                for j in 0..q {
                    zty[j] += z[j] * s.y[k];
                }
            }
            ridge_solve(&ztz, &zty, 1e-3).unwrap_or_else(|| vec![0.0; q])
        })
        .collect();
    state.v = kmeans(&summaries, g_count);
    let mut rng = substream(config.seed, 0, block::INIT, 0);
    // classes k-means left empty get a few random subjects so every class
    // starts with a least-squares fit
    let counts = state.occupancy();
    if counts.contains(&0) && n >= g_count {
        for g in 0..g_count {
            if state.occupancy()[g] == 0 {
                let i = rng.random_range(0..n);
                state.v[i] = g;
            }
        }
    }

    let fit = |members: &[usize]| -> Option<Vec<f64>> {
        let mut xtx = DMatrix::zeros(p, p);
        let mut xty = vec![0.0; p];
        let mut nobs = 0;
        for &i in members {
            let s = model.subject(i);
            for k in 0..s.n_obs() {
                let x = &s.x[k * p..(k + 1) * p];
                add_outer(&mut xtx, x, 1.0);
                for j in 0..p {
                    xty[j] += x[j] * s.y[k];
                }
                nobs += 1;
            }
        }
        if nobs <= p {
            return None;
        }
        ridge_solve(&xtx, &xty, 1e-6 * (1.0 + xtx.diagonal().max()))
    };
    let all: Vec<usize> = (0..n).collect();
    let pooled = fit(&all).unwrap_or_else(|| vec![0.0; p]);
    let mut ssr = 0.0;
    for g in 0..g_count {
        let members: Vec<usize> = (0..n).filter(|&i| state.v[i] == g).collect();
        state.classes[g].beta = fit(&members).unwrap_or_else(|| pooled.clone());
        for &i in &members {
            ssr += model.ssr(i, &state.classes[g].beta, &vec![0.0; q]);
        }
        state.classes[g].sigma_b = DMatrix::from_diagonal_element(q, q, 0.1);
    }
    let nobs: usize = (0..n).map(|i| model.subject(i).n_obs()).sum();
    state.sigma_y2 = (ssr / nobs.max(1) as f64).max(1e-3);

    let events = (0..n).filter(|&i| model.subject(i).event).count().max(1) as f64;
    let exposure: f64 = (0..n).map(|i| model.subject(i).event_time).sum();
    for c in &mut state.classes {
        c.gamma_h0[0] = (events / exposure).ln();
    }

    let counts = state.occupancy();
    let total: f64 = spec.dirichlet_a.iter().sum::<f64>() + n as f64;
    state.pi = counts.iter().zip(&spec.dirichlet_a).map(|(&c, &a)| (a + c as f64) / total).collect();
    let last = g_count - 1;
    state.pi[last] = 1.0 - state.pi[..last].iter().sum::<f64>();

    // conditional-mean random effects
    for i in 0..n {
        let s = model.subject(i);
        for g in 0..g_count {
            let mut prec = DMatrix::from_diagonal_element(q, q, 10.0);
            let mut rhs = vec![0.0; q];
            for k in 0..s.n_obs() {
                let z = &s.z[k * q..(k + 1) * q];
                add_outer(&mut prec, z, 1.0 / state.sigma_y2);
                let r = s.y[k] - s.x[k * p..(k + 1) * p].iter().zip(&state.classes[g].beta).map(|(a, b)| a * b).sum::<f64>();
                for j in 0..q {
                    rhs[j] += z[j] * r / state.sigma_y2;
                }
            }
            let l = cholesky_lower(&prec, "initial random-effects precision")?;
            state.b[i][g] = cholesky_solve(&l, &rhs);
        }
    }
    Ok(state)
}

/// Lloyd's algorithm on standardized rows, seeded at quantiles of the first
/// coordinate.
fn kmeans(rows: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = rows.len();
    if k == 1 || n == 0 {
        return vec![0; n];
    }
    let dim = rows[0].len();
    let mut scaled = rows.to_vec();
    for j in 0..dim {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        for r in &mut scaled {
            r[j] = (r[j] - mean) / sd;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scaled[a][0].total_cmp(&scaled[b][0]).then(a.cmp(&b)));
    let mut centers: Vec<Vec<f64>> = (0..k)
        .map(|c| scaled[order[((c as f64 + 0.5) / k as f64 * n as f64) as usize % n]].clone())
        .collect();
    let mut assign = vec![0; n];
    for _ in 0..50 {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .min_by(|&a, &b| {
                    let da: f64 = scaled[i].iter().zip(&centers[a]).map(|(x, c)| (x - c).powi(2)).sum();
                    let db: f64 = scaled[i].iter().zip(&centers[b]).map(|(x, c)| (x - c).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap_or(0);
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| assign[i] == c).map(|i| &scaled[i]).collect();
            if !members.is_empty() {
                for j in 0..dim {
                    center[j] = members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    assign
}
