//! Synthetic joint data from the three-component simulation design.
//!
//! Each component draws `age ~ N(45, 15.7²)`, `male ~ Bernoulli(0.5)`, a
//! random intercept and slope, ten uniform measurement times plus a baseline
//! record, a Weibull-type event time whose hazard depends on the current
//! value of the longitudinal predictor, and an exponential censoring time.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, Dataset, LongRecord, SurvRecord};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;
use crate::rng::substream;

/// Generating parameters of one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    /// Intercept, male, time.
    pub beta: [f64; 3],
    pub sigma_y: f64,
    /// Variances of the random intercept and slope.
    pub sigma_b_diag: [f64; 2],
    /// Weibull shape `ξ`.
    pub xi: f64,
    /// Mean of the exponential censoring time.
    pub mu_c: f64,
    /// Hazard intercept and age coefficient.
    pub gamma: [f64; 2],
    pub alpha: f64,
    /// Subjects drawn from this component.
    pub n: usize,
}

impl ComponentParams {
    /// Data set `k` (1, 2 or 3) of the design table with `n` subjects.
    pub fn data_set(k: usize, n: usize) -> Result<Self> {
        let (beta, sigma_b_diag, xi, gamma, alpha) = match k {
            1 => ([8.03, -5.86, -0.16], [0.87, 0.02], 1.8, [-4.85, -0.02], 0.38),
            2 => ([-8.03, 12.20, 0.46], [0.02, 0.91], 1.4, [-4.85, 0.09], 0.08),
            3 => ([0.03, -1.96, -0.01], [0.28, 0.31], 1.8, [2.85, -0.12], 0.58),
            _ => return Err(Error::Config(format!("no data set {k}; expected 1, 2 or 3"))),
        };
        Ok(Self { beta, sigma_y: 0.69, sigma_b_diag, xi, mu_c: 10.0, gamma, alpha, n })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_y > 0.0
            && self.sigma_b_diag.iter().all(|&v| v > 0.0)
            && self.xi > 0.0
            && self.mu_c > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("component parameters out of range".into()))
        }
    }

    /// Linear predictor `η(t)` for given covariates and random effects.
    pub fn eta(&self, t: f64, male: f64, b: &[f64; 2]) -> f64 {
        self.beta[0] + self.beta[1] * male + self.beta[2] * t + b[0] + b[1] * t
    }

    pub fn log_hazard(&self, t: f64, age: f64, male: f64, b: &[f64; 2]) -> f64 {
        self.xi.ln() + (self.xi - 1.0) * t.ln() + self.gamma[0] + self.gamma[1] * age + self.alpha * self.eta(t, male, b)
    }
}

/// The simulation scenarios: which components are mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    I,
    II,
    III,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(Scenario::I),
            "II" | "2" => Ok(Scenario::II),
            "III" | "3" => Ok(Scenario::III),
            other => Err(Error::Config(format!("unknown scenario '{other}'; expected I, II or III"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::I => "I",
            Scenario::II => "II",
            Scenario::III => "III",
        })
    }
}

impl Scenario {
    pub fn data_sets(self) -> &'static [usize] {
        match self {
            Scenario::I => &[1, 2, 3],
            Scenario::II => &[1, 2],
            Scenario::III => &[1],
        }
    }

    pub fn true_classes(self) -> usize {
        self.data_sets().len()
    }

    /// Default subjects per component (1050 in total).
    pub fn default_n_per_component(self) -> usize {
        1050 / self.true_classes()
    }

    /// Scenario configuration; `n_per_component` overrides the default size.
    pub fn config(self, n_per_component: Option<usize>) -> ScenarioConfig {
        let n = n_per_component.unwrap_or_else(|| self.default_n_per_component());
        ScenarioConfig {
            components: self
                .data_sets()
                .iter()
                .map(|&k| ComponentParams::data_set(k, n).expect("known data set"))
                .collect(),
            ..ScenarioConfig::default()
        }
    }
}

/// Full simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub components: Vec<ComponentParams>,
    pub max_obs: usize,
    pub time_horizon: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub male_prob: f64,
    /// Open interval the realized censoring fraction must fall in.
    pub censoring_band: (f64, f64),
    /// Rescale censoring means by bisection when outside the band.
    pub calibrate_censoring: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            components: Vec::new(),
            max_obs: 10,
            time_horizon: 19.5,
            age_mean: 45.0,
            age_sd: 15.7,
            male_prob: 0.5,
            censoring_band: (0.40, 0.60),
            calibrate_censoring: true,
        }
    }
}

/// Everything drawn for one subject before censoring is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSubject {
    pub component: usize,
    pub age: f64,
    pub male: f64,
    pub b: [f64; 2],
    /// Baseline plus candidate measurement times, sorted.
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    /// Event time, `+∞` when beyond the horizon.
    pub event_time: f64,
    /// Unit-mean exponential; the censoring time is `μ_c` times this.
    pub censor_unit: f64,
}

/// Accurate rule for the generating hazard.
fn simulation_rule() -> QuadratureRule {
    QuadratureRule::gauss_legendre(32, 3).expect("valid rule")
}

/// `H(t) = ∫_0^t h(s) ds` of the generating hazard.
pub fn generating_cumulative_hazard(p: &ComponentParams, age: f64, male: f64, b: &[f64; 2], t: f64) -> f64 {
    generating_cumulative_hazard_with(&simulation_rule(), p, age, male, b, t)
}

fn generating_cumulative_hazard_with(
    rule: &QuadratureRule,
    p: &ComponentParams,
    age: f64,
    male: f64,
    b: &[f64; 2],
    t: f64,
) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    rule.integrate(t, |s| p.log_hazard(s, age, male, b).exp())
}

/// Solve `H(T) = −log u` on `(0, horizon]`; `+∞` when `H(horizon) < −log u`.
pub fn event_time_for_u(p: &ComponentParams, horizon: f64, age: f64, male: f64, b: &[f64; 2], u: f64) -> f64 {
    let rule = simulation_rule();
    let target = -u.ln();
    let h = |t: f64| generating_cumulative_hazard_with(&rule, p, age, male, b, t) - target;
    if h(horizon) < 0.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, horizon);
    let mut t = 0.5 * horizon;
    for _ in 0..200 {
        let f = h(t);
        if f.abs() < 1e-10 {
            return t;
        }
        if f < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        // Newton step, fall back to bisection when it leaves the bracket
        let slope = p.log_hazard(t, age, male, b).exp();
        let newton = t - f / slope;
        t = if slope.is_finite() && slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 * horizon.max(1.0) {
            break;
        }
    }
    t
}

/// Draw an event time by inversion of the cumulative hazard.
pub fn simulate_event_time<R: Rng + ?Sized>(
    p: &ComponentParams,
    horizon: f64,
    age: f64,
    male: f64,
    b: &[f64; 2],
    rng: &mut R,
) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    event_time_for_u(p, horizon, age, male, b, u)
}

/// Draw covariates, random effects, measurements and event time of one
/// subject.
pub fn simulate_subject<R: Rng + ?Sized>(
    component: usize,
    p: &ComponentParams,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> LatentSubject {
    let age = Normal::new(cfg.age_mean, cfg.age_sd).expect("valid age sd").sample(rng);
    let male = f64::from(u8::from(rng.random::<f64>() < cfg.male_prob));
    let b = [
        p.sigma_b_diag[0].sqrt() * rng.sample::<f64, _>(StandardNormal),
        p.sigma_b_diag[1].sqrt() * rng.sample::<f64, _>(StandardNormal),
    ];
    let mut times: Vec<f64> = (0..cfg.max_obs).map(|_| rng.random::<f64>() * cfg.time_horizon).collect();
    times.sort_by(f64::total_cmp);
    times.insert(0, 0.0);
    let y = times
        .iter()
        .map(|&t| p.eta(t, male, &b) + p.sigma_y * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let event_time = simulate_event_time(p, cfg.time_horizon, age, male, &b, rng);
    let censor_unit: f64 = rng.sample(Exp1);
    LatentSubject { component, age, male, b, times, y, event_time, censor_unit }
}

/// True parameters and memberships of a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub scenario: Option<Scenario>,
    pub seed: u64,
    pub components: Vec<ComponentParams>,
    /// Factor applied to every `μ_c` to hit the censoring band.
    pub censoring_scale: f64,
    pub censoring_rate: f64,
    pub subject_ids: Vec<String>,
    /// 1-based component of each subject.
    pub class: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub truth: Truth,
    pub subjects: Vec<LatentSubject>,
}

fn observed_time(s: &LatentSubject, p: &ComponentParams, scale: f64, horizon: f64) -> (f64, bool) {
    let censor = (p.mu_c * scale * s.censor_unit).min(horizon);
    if s.event_time <= censor {
        (s.event_time, true)
    } else {
        (censor, false)
    }
}

fn censoring_rate(subjects: &[LatentSubject], cfg: &ScenarioConfig, scale: f64) -> f64 {
    let censored = subjects
        .iter()
        .filter(|s| !observed_time(s, &cfg.components[s.component], scale, cfg.time_horizon).1)
        .count();
    censored as f64 / subjects.len() as f64
}

/// Censoring-mean scale putting the censoring fraction inside the band.
fn calibrate(subjects: &[LatentSubject], cfg: &ScenarioConfig) -> Result<(f64, f64)> {
    let (lo_band, hi_band) = cfg.censoring_band;
    let inside = |r: f64| r > lo_band && r < hi_band;
    let rate = censoring_rate(subjects, cfg, 1.0);
    if inside(rate) || !cfg.calibrate_censoring {
        return Ok((1.0, rate));
    }
    // the censoring fraction decreases in the scale
    let (mut lo, mut hi) = (-12.0f64, 12.0f64);
    let mut last = rate;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let r = censoring_rate(subjects, cfg, mid.exp());
        last = r;
        if inside(r) {
            return Ok((mid.exp(), r));
        }
        if r >= hi_band {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Censoring { steps: 50, rate: last })
}

/// Simulate every component of `cfg` with per-subject substreams of `seed`.
pub fn simulate(cfg: &ScenarioConfig, seed: u64) -> Result<SimulatedData> {
    if cfg.components.is_empty() {
        return Err(Error::Config("scenario has no components".into()));
    }
    for c in &cfg.components {
        c.validate()?;
    }
    let mut subjects = Vec::new();
    for (k, p) in cfg.components.iter().enumerate() {
        for _ in 0..p.n {
            let j = subjects.len() as u64;
            let mut rng = substream(seed, 0, 0x51u64, j);
            subjects.push(simulate_subject(k, p, cfg, &mut rng));
        }
    }
    let (scale, rate) = calibrate(&subjects, cfg)?;
    let width = subjects.len().to_string().len().max(4);
    let mut long = Vec::new();
    let mut surv = Vec::with_capacity(subjects.len());
    let mut ids = Vec::with_capacity(subjects.len());
    for (j, s) in subjects.iter().enumerate() {
        let id = format!("s{:0width$}", j + 1);
        let (t, event) = observed_time(s, &cfg.components[s.component], scale, cfg.time_horizon);
        for (&time, &y) in s.times.iter().zip(&s.y) {
            if time <= t {
                long.push(LongRecord { subject_id: id.clone(), time, y, x_covariates: vec![s.male] });
            }
        }
        surv.push(SurvRecord { subject_id: id.clone(), event_time: t, event, w_covariates: vec![s.age, s.male] });
        ids.push(id);
    }
    let dataset = validate_dataset(long, surv)?.with_covariate_names(vec!["male".into()], vec!["age".into(), "male".into()])?;
    let truth = Truth {
        scenario: None,
        seed,
        components: cfg.components.clone(),
        censoring_scale: scale,
        censoring_rate: rate,
        subject_ids: ids,
        class: subjects.iter().map(|s| s.component + 1).collect(),
    };
    Ok(SimulatedData { dataset, truth, subjects })
}

/// Simulate a named scenario at its default size.
pub fn simulate_scenario(which: Scenario, seed: u64) -> Result<SimulatedData> {
    simulate_scenario_sized(which, None, seed)
}

pub fn simulate_scenario_sized(which: Scenario, n_per_component: Option<usize>, seed: u64) -> Result<SimulatedData> {
    let mut sim = simulate(&which.config(n_per_component), seed)?;
    sim.truth.scenario = Some(which);
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plain(xi: f64) -> ComponentParams {
        ComponentParams {
            beta: [0.0; 3],
            sigma_y: 1.0,
            sigma_b_diag: [1.0, 1.0],
            xi,
            mu_c: 10.0,
            gamma: [0.0, 0.0],
            alpha: 0.0,
            n: 1,
        }
    }

    #[test]
    fn unit_hazard_inverse() {
        let t = event_time_for_u(&plain(1.0), 50.0, 0.0, 0.0, &[0.0, 0.0], (-2f64).exp());
        assert!((t - 2.0).abs() < 1e-8);
    }

    #[test]
    fn weibull_inverse_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = plain(1.8);
        for _ in 0..100 {
            let u: f64 = rng.random::<f64>().max(1e-6);
            let t = event_time_for_u(&p, 1e3, 0.0, 0.0, &[0.0, 0.0], u);
            assert!((t - (-u.ln()).powf(1.0 / 1.8)).abs() < 1e-8);
        }
    }

    #[test]
    fn beyond_horizon_is_infinite() {
        assert!(event_time_for_u(&plain(1.0), 1.0, 0.0, 0.0, &[0.0, 0.0], 0.01).is_infinite());
    }

    #[test]
    fn records_per_subject_in_range() {
        let sim = simulate_scenario_sized(Scenario::I, Some(40), 3).unwrap();
        for i in 0..sim.dataset.n {
            let k = sim.dataset.subject_rows(i).len();
            assert!((1..=11).contains(&k));
        }
        assert_eq!(sim.truth.class.len(), 120);
    }

    #[test]
    fn scenario_parsing() {
        assert_eq!("II".parse::<Scenario>().unwrap(), Scenario::II);
        assert!("IV".parse::<Scenario>().is_err());
    }
}
