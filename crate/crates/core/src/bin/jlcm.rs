use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jlcm::config::{self, RunConfig};
use jlcm::data::Dataset;
use jlcm::harness::{fit_model, run_replications, select_classes};
use jlcm::output::{self, Manifest};
use jlcm::relabel::{relabel_states, ReferenceStatistic};
use jlcm::simulator::{simulate_scenario_sized, Scenario};
use jlcm::Error;

/// Latent-class joint models for longitudinal and time-to-event data.
#[derive(Parser)]
#[command(name = "jlcm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one data set of a scenario.
    Simulate {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Subjects per generating component (default: scenario size).
        #[arg(long)]
        n_per_component: Option<usize>,
    },
    /// Fit a model with `model.classes` classes.
    Fit {
        #[arg(long)]
        long: PathBuf,
        #[arg(long)]
        surv: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an overfitted mixture and report the number of non-empty classes.
    Select {
        #[arg(long)]
        long: PathBuf,
        #[arg(long)]
        surv: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        gmax: Option<u64>,
        #[arg(long)]
        psi: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat simulation and selection and tally accuracy.
    Replicate {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        reps: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Posterior summaries of a draws file, optionally after relabeling.
    Summarize {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        relabel: bool,
        /// Ordering statistic for relabeling: intercept or alpha.
        #[arg(long, default_value = "intercept")]
        reference: ReferenceStatistic,
        /// Directory for relabeled draws and the permutation trace
        /// (default: next to the draws file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the configuration defaults and field documentation.
    ConfigSchema,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn input_map(pairs: &[(&str, &Path)]) -> std::collections::BTreeMap<String, String> {
    pairs.iter().map(|(k, p)| (k.to_string(), p.display().to_string())).collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { scenario, seed, out, n_per_component } => {
            std::fs::create_dir_all(&out)?;
            let sim = simulate_scenario_sized(scenario, n_per_component, seed)?;
            sim.dataset.write_csv(&out.join("longitudinal.csv"), &out.join("survival.csv"))?;
            output::write_json(&out.join("truth.json"), &sim.truth)?;
            let mut m = Manifest::new("simulate", seed, serde_json::json!({ "scenario": scenario, "n_per_component": n_per_component }));
            m.n_subjects = sim.dataset.n;
            m.extra = serde_json::json!({ "censoring_rate": sim.truth.censoring_rate });
            output::write_json(&out.join("manifest.json"), &m)?;
            println!("{} subjects, censoring rate {:.3}", sim.dataset.n, sim.truth.censoring_rate);
        }
        Command::Fit { long, surv, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let data = Dataset::read_csv(&long, &surv)?;
            std::fs::create_dir_all(&out)?;
            let fit = fit_model(&data, &cfg.model, &cfg.priors, &cfg.chain)?;
            output::write_chain_draws(&out.join("draws.csv"), &fit.output)?;
            output::write_occupancy(std::fs::File::create(out.join("occupancy.csv"))?, &fit.output.occupancy)?;
            let mut m = Manifest::new("fit", cfg.chain.seed, cfg.to_value()).with_chain(&fit.output);
            m.inputs = input_map(&[("long", &long), ("surv", &surv)]);
            m.extra = serde_json::json!({ "spec": fit.spec, "standardization": fit.standardization });
            output::write_json(&out.join("manifest.json"), &m)?;
            println!("{} draws written to {}", fit.output.draws.len(), out.join("draws.csv").display());
        }
        Command::Select { long, surv, config, gmax, psi, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(g) = gmax {
                cfg.selection.g_max = g as usize;
            }
            if let Some(p) = psi {
                cfg.selection.psi = p;
            }
            let data = Dataset::read_csv(&long, &surv)?;
            std::fs::create_dir_all(&out)?;
            let (fit, report) = select_classes(&data, &cfg)?;
            output::write_json(&out.join("selection.json"), &report)?;
            output::write_chain_draws(&out.join("draws.csv"), &fit.output)?;
            output::write_occupancy(std::fs::File::create(out.join("occupancy.csv"))?, &fit.output.occupancy)?;
            let mut m = Manifest::new("select", cfg.chain.seed, cfg.to_value()).with_chain(&fit.output);
            m.inputs = input_map(&[("long", &long), ("surv", &surv)]);
            m.extra = serde_json::json!({ "spec": fit.spec, "standardization": fit.standardization });
            output::write_json(&out.join("manifest.json"), &m)?;
            for s in &report.sweep {
                println!("psi {:<5} mode {}", s.psi, s.mode.map_or("-".into(), |g| g.to_string()));
            }
            println!("selected {} classes at psi = {}", report.selected.map_or("-".into(), |g| g.to_string()), report.psi);
        }
        Command::Replicate { scenario, reps, config, out, seed } => {
            let cfg = load_config(config.as_deref())?;
            let report = run_replications(scenario, reps as usize, &cfg, seed, Some(&out))?;
            println!(
                "scenario {scenario}: {} completed, {} failed, {} flagged as not converged",
                report.completed, report.failed, report.not_converged
            );
            for r in &report.psi_rows {
                println!("psi {:<5} correct {:>3}/{:<3} ({:.0}%)", r.psi, r.correct, r.runs, r.percent_correct);
            }
        }
        Command::Summarize { draws, relabel, reference, out } => {
            let file = std::fs::File::open(&draws)
                .map_err(|e| Error::Config(format!("cannot open draws file {}: {e}", draws.display())))?;
            let mut table = output::read_draws(file)?;
            if table.draws.is_empty() {
                return Err(Error::Config("draws file has no rows".into()));
            }
            if relabel {
                let dir = out.unwrap_or_else(|| draws.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
                std::fs::create_dir_all(&dir)?;
                let (perms, tied) = relabel_states(&mut table.draws, reference);
                let f = std::fs::File::create(dir.join("draws_relabeled.csv"))?;
                output::write_draws(f, &table.iterations, &table.draws)?;
                let f = std::fs::File::create(dir.join("permutations.csv"))?;
                output::write_permutations(f, &table.iterations, &perms, &tied)?;
                if !tied.is_empty() {
                    eprintln!("warning: {} draws had tied reference statistics", tied.len());
                }
            }
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(["parameter", "mean", "sd", "q2.5", "median", "q97.5"])?;
            for s in output::summarize_draws(&table.draws) {
                w.write_record([
                    s.parameter,
                    output::fmt_f64(s.mean),
                    output::fmt_f64(s.sd),
                    output::fmt_f64(s.lower),
                    output::fmt_f64(s.median),
                    output::fmt_f64(s.upper),
                ])
                ?;
            }
            w.flush()?;
        }
        Command::ConfigSchema => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&config::schema())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if is_data_error(&e) { 2 } else { 3 })
        }
    }
}

/// Unreadable input counts as a data problem; everything else that is not a
/// validation error is numerical.
fn is_data_error(e: &Error) -> bool {
    match e {
        Error::Chain { source, .. } => is_data_error(source),
        Error::Io(_) => true,
        other => other.is_data_error(),
    }
}
