mod common;

use common::{toy_dataset, toy_spec, toy_state};
use jlcm::likelihood::JointModel;
use jlcm::parallel::Parallelism;
use jlcm::priors::PriorConfig;
use jlcm::rng::substream;
use jlcm::sampler::{run_chain, sample_categorical, ChainConfig, PseudoPrior, Sampler};
use jlcm::simulator::{simulate_scenario_sized, Scenario};
use jlcm::spec::{ModelConfig, Standardization};
use jlcm::Error;

fn small_scenario_model(classes: usize, par: Parallelism) -> (JointModel, usize) {
    let sim = simulate_scenario_sized(Scenario::II, Some(30), 5).unwrap();
    let (data, _) = Standardization::apply(&sim.dataset, true, false).unwrap();
    let mut mc = ModelConfig::simulation_default();
    mc.classes = classes;
    let spec = mc.build(&data).unwrap();
    (JointModel::new(&spec, &data).unwrap().with_parallelism(par), data.n)
}

fn short(seed: u64, par: Parallelism) -> ChainConfig {
    ChainConfig { iterations: 60, burn_in: 20, thin: 4, seed, parallelism: par, store_latent: true, ..Default::default() }
}

#[test]
fn parallel_and_sequential_chains_are_identical() {
    let (mp, _) = small_scenario_model(3, Parallelism::Parallel);
    let (ms, _) = small_scenario_model(3, Parallelism::Sequential);
    let a = run_chain(&mp, &PriorConfig::default(), &short(9, Parallelism::Parallel)).unwrap();
    let b = run_chain(&ms, &PriorConfig::default(), &short(9, Parallelism::Sequential)).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_eq!(a.occupancy, b.occupancy);
    assert_eq!(a.log_posterior, b.log_posterior);
}

#[test]
fn seeds_control_the_chain() {
    let (m, _) = small_scenario_model(2, Parallelism::Parallel);
    let a = run_chain(&m, &PriorConfig::default(), &short(1, Parallelism::Parallel)).unwrap();
    let b = run_chain(&m, &PriorConfig::default(), &short(1, Parallelism::Parallel)).unwrap();
    let c = run_chain(&m, &PriorConfig::default(), &short(2, Parallelism::Parallel)).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_ne!(a.draws, c.draws);
}

#[test]
fn output_shapes() {
    let (m, n) = small_scenario_model(3, Parallelism::Parallel);
    let cfg = short(3, Parallelism::Parallel);
    let out = run_chain(&m, &PriorConfig::default(), &cfg).unwrap();
    assert_eq!(out.draws.len(), cfg.retained_draws());
    assert_eq!(out.draws.len(), 10);
    assert_eq!(out.occupancy.len(), cfg.iterations);
    assert!(out.occupancy.iter().all(|r| r.len() == 3 && r.iter().sum::<usize>() == n));
    assert_eq!(out.post_burn_in_occupancy().len(), 40);
    assert!(out.log_posterior.iter().all(|lp| lp.is_finite()));
    for d in &out.draws {
        d.validate().unwrap();
        assert_eq!(d.v.len(), n);
        // each subject keeps only its active random effects
        for (i, b) in d.b.iter().enumerate() {
            assert!(b[d.v[i]].len() == 2);
        }
    }
    for (k, r) in out.acceptance_rates() {
        assert!(r.is_nan() || (0.0..=1.0).contains(&r), "{k}: {r}");
    }
}

#[test]
fn latent_variables_dropped_by_default() {
    let (m, _) = small_scenario_model(2, Parallelism::Parallel);
    let cfg = ChainConfig { store_latent: false, ..short(3, Parallelism::Parallel) };
    let out = run_chain(&m, &PriorConfig::default(), &cfg).unwrap();
    assert!(out.draws.iter().all(|d| d.v.is_empty() && d.b.is_empty()));
    assert!(out.log_posterior.iter().all(|lp| lp.is_nan()));
}

#[test]
fn prior_pseudo_prior_runs_and_differs() {
    let (m, _) = small_scenario_model(3, Parallelism::Parallel);
    let a = run_chain(&m, &PriorConfig::default(), &short(4, Parallelism::Parallel)).unwrap();
    let cfg = ChainConfig { pseudo_prior: PseudoPrior::Prior, ..short(4, Parallelism::Parallel) };
    let b = run_chain(&m, &PriorConfig::default(), &cfg).unwrap();
    assert_ne!(a.draws, b.draws);
    assert!(b.log_posterior.iter().all(|lp| lp.is_finite()));
}

#[test]
fn infeasible_start_is_rejected() {
    let data = toy_dataset();
    let spec = toy_spec(2);
    let model = JointModel::new(&spec, &data).unwrap();
    let mut st = toy_state(&spec, data.n, 1.0);
    st.classes[0].gamma_h0[0] = 900.0;
    let cfg = ChainConfig { iterations: 10, burn_in: 5, thin: 1, ..Default::default() };
    let sampler = Sampler::from_state(&model, PriorConfig::default(), cfg.clone(), st.clone());
    assert!(matches!(sampler, Err(Error::BadInitialization(_))));
    st.classes[0].gamma_h0[0] = -3.0;
    st.pi = vec![0.5, 0.6];
    assert!(Sampler::from_state(&model, PriorConfig::default(), cfg, st).is_err());
}

#[test]
fn invalid_chain_configs() {
    for cfg in [
        ChainConfig { iterations: 10, burn_in: 10, ..Default::default() },
        ChainConfig { thin: 0, ..Default::default() },
        ChainConfig { adapt_until: Some(6000), ..Default::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn categorical_frequencies() {
    let mut rng = substream(5, 0, 0, 0);
    let w = [0.2f64.ln(), f64::NEG_INFINITY, 0.5f64.ln(), 0.3f64.ln()];
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[sample_categorical(&mut rng, &w).unwrap()] += 1;
    }
    assert_eq!(counts[1], 0);
    for (k, p) in [(0, 0.2), (2, 0.5), (3, 0.3)] {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((counts[k] as f64 / n as f64 - p).abs() < 4.0 * se);
    }
    assert!(sample_categorical(&mut rng, &[f64::NEG_INFINITY; 3]).is_none());
}

#[test]
fn single_class_chain_keeps_everyone_in_class_one() {
    let (m, n) = small_scenario_model(1, Parallelism::Parallel);
    let out = run_chain(&m, &PriorConfig::default(), &short(6, Parallelism::Parallel)).unwrap();
    assert!(out.occupancy.iter().all(|r| r == &vec![n]));
    assert!(out.draws.iter().all(|d| d.pi == vec![1.0]));
}
