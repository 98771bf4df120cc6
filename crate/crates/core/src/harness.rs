//! Fitting drivers, class selection, parameter recovery and the replication
//! harness.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::JointModel;
use crate::output::{self, quantile_sorted, Manifest};
use crate::priors::PriorConfig;
use crate::relabel::{ordering_permutation, ReferenceStatistic};
use crate::rng::{child_seed, mix};
use crate::sampler::{run_chain, ChainConfig, ChainOutput};
use crate::selection::{summarize_occupancy, SelectionConfig, SelectionReport};
use crate::simulator::{simulate_scenario_sized, Scenario, Truth};
use crate::spec::{ModelConfig, ModelSpec, Standardization};
use crate::state::ParameterState;

/// A fitted chain together with the resolved model.
#[derive(Debug, Clone)]
pub struct Fit {
    pub spec: ModelSpec,
    pub standardization: Standardization,
    pub output: ChainOutput,
}

/// Standardize (if requested), resolve the model and run one chain.
pub fn fit_model(data: &Dataset, model: &ModelConfig, priors: &PriorConfig, chain: &ChainConfig) -> Result<Fit> {
    chain.validate()?;
    let (data, standardization) = Standardization::apply(data, model.standardize_covariates, model.standardize_outcome)?;
    let spec = model.build(&data)?;
    priors.validate(spec.n_random())?;
    let jm = JointModel::new(&spec, &data)?.with_parallelism(chain.parallelism);
    let output = run_chain(&jm, priors, chain)?;
    Ok(Fit { spec, standardization, output })
}

/// Overfitted model with `selection.g_max` classes.
pub fn overfitted_model(model: &ModelConfig, selection: &SelectionConfig) -> ModelConfig {
    let mut m = model.clone();
    m.classes = selection.g_max;
    if selection.dirichlet_a.is_some() {
        m.dirichlet_a = selection.dirichlet_a;
    }
    m
}

/// Fit the overfitted mixture and tally the non-empty class count.
pub fn select_classes(data: &Dataset, cfg: &RunConfig) -> Result<(Fit, SelectionReport)> {
    let model = overfitted_model(&cfg.model, &cfg.selection);
    let (std_data, _) = Standardization::apply(data, model.standardize_covariates, model.standardize_outcome)?;
    let mut sel = cfg.selection.clone();
    sel.dirichlet_a = model.dirichlet_a;
    sel.validate(&model.build(&std_data)?)?;
    let fit = fit_model(data, &model, &cfg.priors, &cfg.chain)?;
    let report = selection_report(&fit, &cfg.selection);
    Ok((fit, report))
}

pub fn selection_report(fit: &Fit, sel: &SelectionConfig) -> SelectionReport {
    let rows = fit.output.post_burn_in_occupancy();
    let mut psis = sel.psi_sweep.clone();
    if !psis.iter().any(|p| (p - sel.psi).abs() < 1e-12) {
        psis.push(sel.psi);
        psis.sort_by(f64::total_cmp);
    }
    let sweep = summarize_occupancy(rows, fit.output.n, &psis);
    let selected = sweep.iter().find(|s| (s.psi - sel.psi).abs() < 1e-12).and_then(|s| s.mode);
    SelectionReport {
        g_max: fit.spec.classes,
        n: fit.output.n,
        dirichlet_a: fit.spec.dirichlet_a[0],
        psi: sel.psi,
        selected,
        sweep,
        post_burn_in_iterations: rows.len(),
    }
}

/// Operational convergence check: every retained draw is finite and every
/// block's post-burn-in acceptance rate lies in `(0.05, 0.95)`.
pub fn converged(output: &ChainOutput) -> bool {
    let finite = output.draws.iter().all(|d| output::state_row(d).iter().all(|v| v.is_finite()));
    let rates = output.acceptance_rates();
    finite && rates.values().all(|&r| r.is_nan() || (r > 0.05 && r < 0.95))
}

/// Parameters of one draw under name-keyed labels such as
/// `beta[2][time]`, `gamma[1][age]`, `sigma_b[1][2][2]`.
pub fn named_parameters(spec: &ModelSpec, state: &ParameterState) -> Vec<(String, f64)> {
    let fixed = spec.fixed_effect_names();
    let mut out = vec![("sigma_y2".to_string(), state.sigma_y2)];
    for (g, c) in state.classes.iter().enumerate() {
        let k = g + 1;
        out.push((format!("pi[{k}]"), state.pi[g]));
        out.extend(fixed.iter().zip(&c.beta).map(|(n, &v)| (format!("beta[{k}][{n}]"), v)));
        out.extend(spec.survival_covariates.iter().zip(&c.gamma).map(|(n, &v)| (format!("gamma[{k}][{n}]"), v)));
        out.push((format!("alpha[{k}]"), c.alpha));
        let q = c.sigma_b.nrows();
        for r in 0..q {
            for s in r..q {
                out.push((format!("sigma_b[{k}][{}][{}]", r + 1, s + 1), c.sigma_b[(r, s)]));
            }
        }
    }
    out
}

/// Generating values under the labels of [`named_parameters`]; components
/// are numbered by ascending longitudinal intercept.
pub fn truth_parameters(truth: &Truth) -> BTreeMap<String, f64> {
    let mut comps: Vec<_> = truth.components.iter().collect();
    comps.sort_by(|a, b| a.beta[0].total_cmp(&b.beta[0]));
    let mut m = BTreeMap::new();
    m.insert("sigma_y2".to_string(), truth.components[0].sigma_y.powi(2));
    for (g, c) in comps.iter().enumerate() {
        let k = g + 1;
        m.insert(format!("beta[{k}][(Intercept)]"), c.beta[0]);
        m.insert(format!("beta[{k}][male]"), c.beta[1]);
        m.insert(format!("beta[{k}][time]"), c.beta[2]);
        m.insert(format!("gamma[{k}][age]"), c.gamma[1]);
        m.insert(format!("alpha[{k}]"), c.alpha);
        m.insert(format!("sigma_b[{k}][1][1]"), c.sigma_b_diag[0]);
        m.insert(format!("sigma_b[{k}][2][2]"), c.sigma_b_diag[1]);
    }
    m
}

/// Posterior summary of one generating parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub bias: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
}

/// Compare draws with generating values by name.
///
/// Draws are relabeled by ascending intercept first. Coefficients of
/// covariates that were standardized before fitting are skipped, as are
/// truth entries the model has no counterpart for.
pub fn score_fit(
    spec: &ModelSpec,
    standardization: &Standardization,
    draws: &[ParameterState],
    truth: &BTreeMap<String, f64>,
) -> Result<Vec<RecoveryRow>> {
    let truth_classes = truth.keys().filter(|k| k.starts_with("alpha[")).count();
    if truth_classes != spec.classes {
        return Err(Error::ClassMismatch { fit: spec.classes, truth: truth_classes });
    }
    if draws.is_empty() {
        return Err(Error::Config("no draws to score".into()));
    }
    if standardization.outcome.is_some() {
        return Err(Error::Config("recovery scoring needs an unstandardized outcome".into()));
    }
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for d in draws {
        let mut d = d.clone();
        let (perm, _) = ordering_permutation(&d, ReferenceStatistic::Intercept);
        d.permute(&perm);
        for (name, v) in named_parameters(spec, &d) {
            columns.entry(name).or_default().push(v);
        }
    }
    let mut rows = Vec::new();
    for (name, &t) in truth {
        let covariate = name.rsplit('[').next().unwrap_or("").trim_end_matches(']');
        if (name.starts_with("gamma[") || name.starts_with("beta[")) && standardization.is_scaled(covariate) {
            continue;
        }
        let Some(col) = columns.get_mut(name) else { continue };
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        col.sort_by(f64::total_cmp);
        let lower = quantile_sorted(col, 0.025);
        let upper = quantile_sorted(col, 0.975);
        rows.push(RecoveryRow {
            parameter: name.clone(),
            truth: t,
            mean,
            sd,
            bias: mean - t,
            lower,
            upper,
            covered: lower <= t && t <= upper,
        });
    }
    Ok(rows)
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub converged: bool,
    pub censoring_rate: Option<f64>,
    /// Selected class count at each threshold of the sweep.
    pub selected: Vec<Option<usize>>,
    pub acceptance_rates: BTreeMap<String, f64>,
}

/// Selection accuracy at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiRow {
    pub psi: f64,
    pub runs: usize,
    pub correct: usize,
    pub percent_correct: f64,
    /// Replications per selected class count.
    pub distribution: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: Scenario,
    pub true_classes: usize,
    pub reps: usize,
    pub seed: u64,
    pub g_max: usize,
    pub n_per_component: Option<usize>,
    pub psi_sweep: Vec<f64>,
    pub completed: usize,
    pub failed: usize,
    pub not_converged: usize,
    /// Accuracy over completed replications.
    pub psi_rows: Vec<PsiRow>,
    pub replications: Vec<ReplicationRecord>,
}

impl ReplicationReport {
    pub fn row_at(&self, psi: f64) -> Option<&PsiRow> {
        self.psi_rows.iter().find(|r| (r.psi - psi).abs() < 1e-12)
    }
}

fn run_one(
    scenario: Scenario,
    rep: usize,
    seed: u64,
    cfg: &RunConfig,
    dir: Option<&Path>,
) -> Result<(f64, Fit, SelectionReport)> {
    let sim = simulate_scenario_sized(scenario, cfg.harness.n_per_component, seed)?;
    let mut cfg = cfg.clone();
    cfg.chain.seed = mix(&[seed, 1]);
    let (fit, report) = select_classes(&sim.dataset, &cfg)?;
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        sim.dataset.write_csv(&dir.join("longitudinal.csv"), &dir.join("survival.csv"))?;
        output::write_json(&dir.join("truth.json"), &sim.truth)?;
        output::write_chain_draws(&dir.join("draws.csv"), &fit.output)?;
        output::write_occupancy(std::fs::File::create(dir.join("occupancy.csv"))?, &fit.output.occupancy)?;
        output::write_json(&dir.join("selection.json"), &report)?;
        let mut manifest = Manifest::new("replicate", cfg.chain.seed, cfg.to_value()).with_chain(&fit.output);
        manifest.extra = serde_json::json!({ "scenario": scenario, "rep": rep, "data_seed": seed });
        output::write_json(&dir.join("manifest.json"), &manifest)?;
    }
    Ok((sim.truth.censoring_rate, fit, report))
}

/// Simulate `reps` data sets of a scenario, run the overfitted selection on
/// each and tally how often the true class count is recovered.
///
/// Replication `r` uses the data seed `child_seed(seed, r)`; chain failures
/// are recorded and excluded from the accuracy rows. When `out` is given,
/// one directory per replication plus `report.json`, `report.csv` and
/// `replications.csv` are written there.
pub fn run_replications(
    scenario: Scenario,
    reps: usize,
    cfg: &RunConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<ReplicationReport> {
    if reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    cfg.chain.validate()?;
    let mut psis = cfg.selection.psi_sweep.clone();
    if !psis.iter().any(|p| (p - cfg.selection.psi).abs() < 1e-12) {
        psis.push(cfg.selection.psi);
        psis.sort_by(f64::total_cmp);
    }
    let width = reps.to_string().len().max(2);
    let records = cfg.chain.parallelism.map(reps, |r| {
        let rep_seed = child_seed(seed, r as u64);
        let dir = out.filter(|_| cfg.harness.write_replication_artifacts).map(|o| o.join(format!("rep_{:0width$}", r + 1)));
        match run_one(scenario, r + 1, rep_seed, cfg, dir.as_deref()) {
            Ok((censoring, fit, report)) => ReplicationRecord {
                rep: r + 1,
                seed: rep_seed,
                status: "ok".into(),
                error: None,
                converged: converged(&fit.output),
                censoring_rate: Some(censoring),
                selected: psis.iter().map(|&p| report.mode_at(p)).collect(),
                acceptance_rates: fit.output.acceptance_rates(),
            },
            Err(e) => ReplicationRecord {
                rep: r + 1,
                seed: rep_seed,
                status: "failed".into(),
                error: Some(e.to_string()),
                converged: false,
                censoring_rate: None,
                selected: vec![None; psis.len()],
                acceptance_rates: BTreeMap::new(),
            },
        }
    });
    let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| r.status == "ok").collect();
    let truth = scenario.true_classes();
    let psi_rows = psis
        .iter()
        .enumerate()
        .map(|(j, &psi)| {
            let mut distribution = BTreeMap::new();
            for r in &ok {
                if let Some(g) = r.selected[j] {
                    *distribution.entry(g).or_insert(0) += 1;
                }
            }
            let correct = ok.iter().filter(|r| r.selected[j] == Some(truth)).count();
            PsiRow {
                psi,
                runs: ok.len(),
                correct,
                percent_correct: if ok.is_empty() { f64::NAN } else { 100.0 * correct as f64 / ok.len() as f64 },
                distribution,
            }
        })
        .collect();
    let report = ReplicationReport {
        scenario,
        true_classes: truth,
        reps,
        seed,
        g_max: cfg.selection.g_max,
        n_per_component: cfg.harness.n_per_component,
        psi_sweep: psis.clone(),
        completed: ok.len(),
        failed: reps - ok.len(),
        not_converged: ok.iter().filter(|r| !r.converged).count(),
        psi_rows,
        replications: records,
    };
    if let Some(out) = out {
        write_report(out, &report, cfg)?;
    }
    Ok(report)
}

fn write_report(out: &Path, report: &ReplicationReport, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    output::write_json(&out.join("report.json"), report)?;
    let mut w = csv::Writer::from_path(out.join("report.csv"))?;
    w.write_record(["psi", "runs", "correct", "percent_correct", "distribution"])?;
    for r in &report.psi_rows {
        let dist: Vec<String> = r.distribution.iter().map(|(g, c)| format!("{g}:{c}")).collect();
        w.write_record([
            output::fmt_f64(r.psi),
            r.runs.to_string(),
            r.correct.to_string(),
            output::fmt_f64(r.percent_correct),
            dist.join(" "),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("replications.csv"))?;
    let mut header = vec!["rep".to_string(), "seed".into(), "status".into(), "converged".into(), "censoring_rate".into()];
    header.extend(report.psi_sweep.iter().map(|p| format!("g_opt[{p}]")));
    w.write_record(&header)?;
    for r in &report.replications {
        let mut rec = vec![
            r.rep.to_string(),
            r.seed.to_string(),
            r.status.clone(),
            r.converged.to_string(),
            r.censoring_rate.map_or(String::new(), output::fmt_f64),
        ];
        rec.extend(r.selected.iter().map(|g| g.map_or(String::new(), |g| g.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut manifest = Manifest::new("replicate", report.seed, cfg.to_value());
    manifest.extra = serde_json::json!({ "scenario": report.scenario, "reps": report.reps });
    output::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::simulate_scenario_sized;

    #[test]
    fn truth_labels_follow_intercept_order() {
        let sim = simulate_scenario_sized(Scenario::II, Some(20), 3).unwrap();
        let t = truth_parameters(&sim.truth);
        assert_eq!(t["beta[1][(Intercept)]"], -8.03);
        assert_eq!(t["beta[2][(Intercept)]"], 8.03);
        assert_eq!(t["alpha[1]"], 0.08);
    }

    #[test]
    fn score_rejects_class_mismatch() {
        let sim = simulate_scenario_sized(Scenario::II, Some(20), 3).unwrap();
        let mut m = ModelConfig::simulation_default();
        m.classes = 3;
        let spec = m.build(&sim.dataset).unwrap();
        let err = score_fit(&spec, &Standardization::default(), &[], &truth_parameters(&sim.truth)).unwrap_err();
        assert!(matches!(err, Error::ClassMismatch { fit: 3, truth: 2 }));
    }
}
