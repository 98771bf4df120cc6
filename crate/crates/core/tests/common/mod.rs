#![allow(dead_code)]

pub mod oracle;

use jlcm::data::{validate_dataset, Dataset, LongRecord, SurvRecord};
use jlcm::spec::{HazardConfig, KnotPlacement, ModelConfig, ModelSpec};
use jlcm::state::ParameterState;
use nalgebra::DMatrix;

/// Three subjects, `male` in the longitudinal design, `age` and `male` in
/// the survival file.
pub fn toy_dataset() -> Dataset {
    let subj = [
        ("a", 0.0, 41.0, 6.5, true, &[(0.0, 1.3), (1.2, 0.7), (3.9, -0.4), (6.0, -1.1)][..]),
        ("b", 1.0, 55.0, 9.0, false, &[(0.0, 2.9), (2.5, 3.6)][..]),
        ("c", 1.0, 30.0, 2.2, true, &[(0.0, -0.5)][..]),
    ];
    let mut long = Vec::new();
    let mut surv = Vec::new();
    for (id, male, age, t, ev, obs) in subj {
        for &(time, y) in obs {
            long.push(LongRecord { subject_id: id.into(), time, y, x_covariates: vec![male] });
        }
        surv.push(SurvRecord { subject_id: id.into(), event_time: t, event: ev, w_covariates: vec![age, male] });
    }
    validate_dataset(long, surv)
        .unwrap()
        .with_covariate_names(vec!["male".into()], vec!["age".into(), "male".into()])
        .unwrap()
}

pub fn toy_model_config(classes: usize) -> ModelConfig {
    let mut mc = ModelConfig::simulation_default();
    mc.classes = classes;
    mc.standardize_covariates = false;
    mc.hazard = HazardConfig {
        degree: 2,
        internal_knots: 3,
        placement: KnotPlacement::Percentile,
        knots: Some(vec![2.5, 5.0, 7.5]),
        boundary: Some((0.0, 10.0)),
    };
    mc
}

pub fn toy_spec(classes: usize) -> ModelSpec {
    toy_model_config(classes).build(&toy_dataset()).unwrap()
}

/// Nonzero parameters with a sum-to-zero spline part; `spline` scales the
/// spline coefficients.
pub fn toy_state(spec: &ModelSpec, n: usize, spline: f64) -> ParameterState {
    let mut st = ParameterState::zeros(spec, n);
    for (g, c) in st.classes.iter_mut().enumerate() {
        let s = g as f64;
        c.beta = vec![1.1 - s, -0.6 + 0.3 * s, -0.12 + 0.05 * s];
        c.sigma_b = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.1, 0.05 + 0.01 * s]);
        c.gamma = vec![0.015 - 0.01 * s];
        c.alpha = 0.25 - 0.2 * s;
        let raw = [0.4, -0.3, 0.2, 0.5, -0.6, -0.2];
        c.gamma_h0 = std::iter::once(-3.0 + 0.4 * s).chain(raw.iter().map(|v| spline * v)).collect();
    }
    let g = spec.classes;
    st.pi = (0..g).map(|k| (k + 1) as f64).collect();
    let tot: f64 = st.pi.iter().sum();
    st.pi.iter_mut().for_each(|p| *p /= tot);
    st.sigma_y2 = 0.45;
    for i in 0..n {
        st.v[i] = i % g;
        for k in 0..g {
            st.b[i][k] = vec![0.3 * (i as f64 - 1.0) + 0.1 * k as f64, -0.02 * i as f64];
        }
    }
    st
}

/// Textbook Cox-de Boor recursion.
pub fn cox_de_boor(knots: &[f64], i: usize, p: usize, t: f64) -> f64 {
    if p == 0 {
        let last = *knots.last().unwrap();
        let inside = knots[i] <= t && t < knots[i + 1];
        let at_end = t == last && knots[i] < knots[i + 1] && knots[i + 1] == last;
        return f64::from(u8::from(inside || at_end));
    }
    let mut v = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        v += (t - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, t);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + p + 1] - t) / d2 * cox_de_boor(knots, i + 1, p - 1, t);
    }
    v
}

/// Gauss-Legendre nodes and weights on (-1, 1) from the eigen-decomposition
/// of the Jacobi matrix.
pub fn golub_welsch(n: usize) -> Vec<(f64, f64)> {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut out: Vec<(f64, f64)> =
        (0..n).map(|k| (eig.eigenvalues[k], 2.0 * eig.eigenvectors[(0, k)].powi(2))).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}
