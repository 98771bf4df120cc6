use jlcm::simulator::{
    event_time_for_u, generating_cumulative_hazard, simulate, simulate_scenario_sized, ComponentParams, Scenario,
    ScenarioConfig, Truth,
};

/// Kolmogorov statistic of a sample against a CDF that is continuous on
/// the finite line; infinite values form an atom at +inf and contribute no
/// jump of their own.
fn ks_statistic(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(k, &v)| {
            let f = cdf(v);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn weibull_only(n: usize) -> ScenarioConfig {
    let mut p = ComponentParams::data_set(1, n).unwrap();
    p.alpha = 0.0;
    p.gamma = [-4.85, 0.0];
    ScenarioConfig { components: vec![p], calibrate_censoring: false, ..ScenarioConfig::default() }
}

#[test]
fn event_times_follow_the_weibull_law() {
    let cfg = weibull_only(10_000);
    let sim = simulate(&cfg, 17).unwrap();
    let p = &cfg.components[0];
    let times: Vec<f64> = sim.subjects.iter().map(|s| s.event_time).collect();
    // beyond the horizon event times are reported as +inf
    assert!(times.iter().all(|&t| t.is_infinite() || t <= cfg.time_horizon));
    let d = ks_statistic(times, |t| 1.0 - (-p.gamma[0].exp() * t.powf(p.xi)).exp());
    let critical = 1.628 / (10_000f64).sqrt();
    assert!(d < critical, "KS statistic {d} >= {critical}");
}

#[test]
fn inversion_solves_the_cumulative_hazard_equation() {
    let p = ComponentParams::data_set(3, 1).unwrap();
    let b = [0.2, -0.1];
    for u in [0.9, 0.5, 0.1, 0.01] {
        let t = event_time_for_u(&p, 19.5, 50.0, 1.0, &b, u);
        if t.is_finite() {
            let h = generating_cumulative_hazard(&p, 50.0, 1.0, &b, t);
            assert!((h + u.ln()).abs() < 1e-6 * (1.0 + h), "u {u}: H {h} vs {}", -u.ln());
        } else {
            assert!(generating_cumulative_hazard(&p, 50.0, 1.0, &b, 19.5) < -u.ln());
        }
    }
}

#[test]
fn censoring_lands_in_band_for_every_scenario() {
    for sc in [Scenario::I, Scenario::II, Scenario::III] {
        let sim = simulate_scenario_sized(sc, None, 2).unwrap();
        let r = sim.dataset.censoring_rate();
        assert!(r > 0.4 && r < 0.6, "scenario {sc}: censoring {r}");
        assert_eq!(r, sim.truth.censoring_rate);
        assert_eq!(sim.dataset.n, 1050 / sc.true_classes() * sc.true_classes());
    }
}

#[test]
fn measurement_schedule() {
    let sim = simulate_scenario_sized(Scenario::I, Some(50), 4).unwrap();
    let d = &sim.dataset;
    for i in 0..d.n {
        let rows = d.subject_rows(i);
        assert!(!rows.is_empty() && rows.len() <= 11);
        assert_eq!(d.longitudinal[rows[0]].time, 0.0);
        let t = d.survival[i].event_time;
        assert!(rows.iter().all(|&r| d.longitudinal[r].time <= t));
        assert!(t <= 19.5);
    }
}

#[test]
fn seeds_are_reproducible() {
    let a = simulate_scenario_sized(Scenario::II, Some(40), 8).unwrap();
    let b = simulate_scenario_sized(Scenario::II, Some(40), 8).unwrap();
    let c = simulate_scenario_sized(Scenario::II, Some(40), 9).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.truth, b.truth);
    assert_ne!(a.dataset, c.dataset);
}

#[test]
fn truth_round_trips_through_json() {
    let sim = simulate_scenario_sized(Scenario::III, Some(20), 1).unwrap();
    let text = serde_json::to_string(&sim.truth).unwrap();
    let back: Truth = serde_json::from_str(&text).unwrap();
    assert_eq!(back, sim.truth);
    assert_eq!(back.class.iter().filter(|&&c| c == 1).count(), 20);
}

#[test]
fn baseline_means_match_generating_intercepts() {
    let sim = simulate_scenario_sized(Scenario::II, Some(1000), 3).unwrap();
    let d = &sim.dataset;
    for (k, comp) in sim.truth.components.iter().enumerate() {
        let mut sum = 0.0;
        let mut cnt = 0.0;
        for i in 0..d.n {
            if sim.truth.class[i] != k + 1 || d.survival[i].w_covariates[1] != 0.0 {
                continue;
            }
            sum += d.longitudinal[d.subject_rows(i)[0]].y;
            cnt += 1.0;
        }
        let sd = (comp.sigma_y.powi(2) + comp.sigma_b_diag[0]).sqrt();
        assert!((sum / cnt - comp.beta[0]).abs() < 4.0 * sd / cnt.sqrt());
    }
}

#[test]
fn invalid_components_rejected() {
    assert!(ComponentParams::data_set(4, 10).is_err());
    let mut p = ComponentParams::data_set(1, 10).unwrap();
    p.xi = -1.0;
    let cfg = ScenarioConfig { components: vec![p], ..ScenarioConfig::default() };
    assert!(simulate(&cfg, 1).is_err());
    assert!(simulate(&ScenarioConfig::default(), 1).is_err());
}
