use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jlcm::likelihood::JointModel;
use jlcm::parallel::Parallelism;
use jlcm::priors::PriorConfig;
use jlcm::sampler::{run_chain, ChainConfig};
use jlcm::simulator::{simulate_scenario_sized, Scenario};
use jlcm::spec::{ModelConfig, Standardization};

fn chain(c: &mut Criterion) {
    let sim = simulate_scenario_sized(Scenario::II, Some(200), 7).expect("simulate");
    let (data, _) = Standardization::apply(&sim.dataset, true, false).expect("standardize");
    let mut mc = ModelConfig::simulation_default();
    mc.classes = 6;
    let spec = mc.build(&data).expect("spec");
    let priors = PriorConfig::default();

    let mut group = c.benchmark_group("sweeps_g6_n400");
    group.sample_size(10);
    for par in [Parallelism::Sequential, Parallelism::Parallel] {
        let model = JointModel::new(&spec, &data).expect("model").with_parallelism(par);
        let cfg = ChainConfig { iterations: 20, burn_in: 10, thin: 1, seed: 3, parallelism: par, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{par:?}")), &cfg, |b, cfg| {
            b.iter(|| run_chain(&model, &priors, cfg).expect("chain"))
        });
    }
    group.finish();
}

criterion_group!(benches, chain);
criterion_main!(benches);
