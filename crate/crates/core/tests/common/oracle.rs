//! Independent reimplementations of the model densities.

use jlcm::data::Dataset;
use jlcm::spec::ModelSpec;
use jlcm::state::ParameterState;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, Dirichlet, InverseGamma, MultivariateNormal, Normal};
use statrs::function::gamma::ln_gamma;

use super::{cox_de_boor, golub_welsch};
use jlcm::priors::PriorConfig;

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

pub fn male(data: &Dataset, i: usize) -> f64 {
    data.survival[i].w_covariates[1]
}

pub fn oracle_eta(data: &Dataset, st: &ParameterState, i: usize, g: usize, t: f64) -> f64 {
    let c = &st.classes[g];
    let b = &st.b[i][g];
    c.beta[0] + c.beta[1] * male(data, i) + c.beta[2] * t + b[0] + b[1] * t
}

pub fn oracle_long(data: &Dataset, st: &ParameterState, i: usize, g: usize) -> f64 {
    data.subject_rows(i)
        .iter()
        .map(|&r| {
            let rec = &data.longitudinal[r];
            Normal::new(oracle_eta(data, st, i, g, rec.time), st.sigma_y2.sqrt()).unwrap().ln_pdf(rec.y)
        })
        .sum()
}

pub fn oracle_log_hazard(spec: &ModelSpec, data: &Dataset, st: &ParameterState, i: usize, g: usize, t: f64) -> f64 {
    let c = &st.classes[g];
    let knots = spec.hazard_basis.augmented_knots();
    let (lo, hi) = spec.hazard_basis.boundary;
    let tc = t.clamp(lo, hi);
    let spline: f64 = (0..spec.hazard_basis.dimension())
        .map(|k| c.gamma_h0[k + 1] * cox_de_boor(&knots, k, spec.hazard_basis.degree, tc))
        .sum();
    c.gamma_h0[0] + spline + c.gamma[0] * data.survival[i].w_covariates[0] + c.alpha * oracle_eta(data, st, i, g, t)
}

pub fn oracle_cumhaz(spec: &ModelSpec, data: &Dataset, st: &ParameterState, i: usize, g: usize, upper: f64) -> f64 {
    golub_welsch(15)
        .into_iter()
        .map(|(x, w)| {
            let u: f64 = 0.5 * (x + 1.0);
            let s = upper * u.powi(3);
            w * 0.5 * upper * 3.0 * u * u * oracle_log_hazard(spec, data, st, i, g, s).exp()
        })
        .sum()
}

pub fn oracle_inv_wishart(sigma: &DMatrix<f64>, df: f64, scale: &DMatrix<f64>) -> f64 {
    let p = sigma.nrows() as f64;
    let ln_mvg: f64 = (p * (p - 1.0) / 4.0) * std::f64::consts::PI.ln()
        + (0..sigma.nrows()).map(|j| ln_gamma(df / 2.0 - j as f64 / 2.0)).sum::<f64>();
    let inv = sigma.clone().try_inverse().unwrap();
    0.5 * df * scale.determinant().ln() - 0.5 * df * p * 2f64.ln() - ln_mvg - 0.5 * (df + p + 1.0) * sigma.determinant().ln()
        - 0.5 * (scale * inv).trace()
}

pub fn mvn(b: &[f64], sigma: &DMatrix<f64>) -> f64 {
    MultivariateNormal::new(vec![0.0; b.len()], sigma.as_slice().to_vec()).unwrap().ln_pdf(&DVector::from_column_slice(b))
}

pub fn oracle_log_prior(st: &ParameterState, spec: &ModelSpec, pr: &PriorConfig) -> f64 {
    let n = |v: f64, var: f64| Normal::new(0.0, var.sqrt()).unwrap().ln_pdf(v);
    let mut lp = InverseGamma::new(pr.sigma_y2_shape, pr.sigma_y2_rate).unwrap().ln_pdf(st.sigma_y2);
    if st.pi.len() > 1 {
        lp += Dirichlet::new(spec.dirichlet_a.clone()).unwrap().ln_pdf(&DVector::from_vec(st.pi.clone()));
    }
    let scale = DMatrix::identity(2, 2) * pr.wishart_scale_diag;
    for c in &st.classes {
        lp += c.beta.iter().map(|&b| n(b, pr.beta_var)).sum::<f64>();
        lp += c.gamma.iter().map(|&b| n(b, pr.gamma_var)).sum::<f64>();
        lp += c.gamma_h0.iter().map(|&b| n(b, pr.gamma_h0_var)).sum::<f64>();
        lp += n(c.alpha, pr.alpha_var);
        lp += oracle_inv_wishart(&c.sigma_b, 2.0, &scale);
    }
    lp
}


pub fn oracle_survival(spec: &ModelSpec, data: &Dataset, st: &ParameterState, i: usize, g: usize) -> f64 {
    let s = &data.survival[i];
    let mut e = -oracle_cumhaz(spec, data, st, i, g, s.event_time);
    if s.event {
        e += oracle_log_hazard(spec, data, st, i, g, s.event_time);
    }
    e
}

pub fn oracle_log_posterior(spec: &ModelSpec, data: &Dataset, st: &ParameterState, pr: &PriorConfig) -> f64 {
    let mut lp = oracle_log_prior(st, spec, pr);
    for i in 0..data.n {
        let g = st.v[i];
        lp += st.pi[g].ln()
            + oracle_long(data, st, i, g)
            + oracle_survival(spec, data, st, i, g)
            + mvn(&st.b[i][g], &st.classes[g].sigma_b);
    }
    lp
}
