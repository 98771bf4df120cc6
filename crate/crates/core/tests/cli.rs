use std::path::Path;
use std::process::{Command, Output};

fn jlcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jlcm")).args(args).output().expect("run jlcm")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SHORT: &str = r#"{"chain": {"iterations": 80, "burn_in": 40, "thin": 4, "seed": 2}, "model": {"classes": 2}}"#;

fn simulate(dir: &Path) -> (String, String) {
    let o = jlcm(&["simulate", "--scenario", "II", "--seed", "5", "--out", p(dir), "--n-per-component", "25"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (p(&dir.join("longitudinal.csv")).to_string(), p(&dir.join("survival.csv")).to_string())
}

#[test]
fn simulate_writes_data_truth_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path());
    for f in ["longitudinal.csv", "survival.csv", "truth.json", "manifest.json"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let truth: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["class"].as_array().unwrap().len(), 50);
    let head = std::fs::read_to_string(tmp.path().join("survival.csv")).unwrap();
    assert!(head.lines().next().unwrap().contains("age"));
}

#[test]
fn fit_then_summarize_with_relabeling() {
    let tmp = tempfile::tempdir().unwrap();
    let (long, surv) = simulate(&tmp.path().join("data"));
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, SHORT).unwrap();
    let out = tmp.path().join("fit");
    let o = jlcm(&["fit", "--long", &long, "--surv", &surv, "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let draws = std::fs::read_to_string(out.join("draws.csv")).unwrap();
    let header = draws.lines().next().unwrap();
    assert!(header.starts_with("iteration,pi[1],pi[2],sigma_y2,beta[1][1]"));
    assert!(header.contains("sigma_b[2][1][2]") && header.contains("gamma_h0[2][7]"));
    assert_eq!(draws.lines().count(), 11);
    let occ = std::fs::read_to_string(out.join("occupancy.csv")).unwrap();
    assert_eq!(occ.lines().next().unwrap(), "iteration,n_1,n_2");
    assert_eq!(occ.lines().count(), 81);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 2);
    assert_eq!(manifest["config"]["chain"]["iterations"], 80);
    assert!(manifest["acceptance_rates"]["beta"].is_number());

    let o = jlcm(&["summarize", "--draws", p(&out.join("draws.csv")), "--relabel"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("parameter,mean,sd,q2.5,median,q97.5"));
    let relabeled = std::fs::read_to_string(out.join("draws_relabeled.csv")).unwrap();
    for line in relabeled.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let cols: Vec<&str> = header.split(',').collect();
        let i1 = cols.iter().position(|c| *c == "beta[1][1]").unwrap();
        let i2 = cols.iter().position(|c| *c == "beta[2][1]").unwrap();
        assert!(v[i1] <= v[i2]);
    }
    let perms = std::fs::read_to_string(out.join("permutations.csv")).unwrap();
    assert_eq!(perms.lines().next().unwrap(), "draw,iteration,label_1,label_2,tied");
    assert_eq!(perms.lines().count(), 11);
}

#[test]
fn select_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (long, surv) = simulate(&tmp.path().join("data"));
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, SHORT).unwrap();
    let out = tmp.path().join("sel");
    let o = jlcm(&["select", "--long", &long, "--surv", &surv, "--config", p(&cfg), "--gmax", "3", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("selection.json")).unwrap()).unwrap();
    assert_eq!(rep["g_max"], 3);
    let sweep = rep["sweep"].as_array().unwrap();
    assert_eq!(sweep.len(), 7);
    for s in sweep {
        assert!(s["psi"].is_number() && s["frequency"].is_object());
        assert!(s["mode"].as_u64().unwrap() <= 3);
    }
    assert_eq!(std::fs::read_to_string(out.join("occupancy.csv")).unwrap().lines().next().unwrap(), "iteration,n_1,n_2,n_3");
}

#[test]
fn config_schema_is_json_with_defaults() {
    let o = jlcm(&["config-schema"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["defaults"]["chain"]["iterations"], 10000);
    assert_eq!(v["defaults"]["selection"]["g_max"], 6);
    assert!(v["fields"]["priors.alpha_var"].is_string());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&jlcm(&[])), 1);
    assert_eq!(code(&jlcm(&["fit", "--long", "x.csv"])), 1);
    assert_eq!(code(&jlcm(&["simulate", "--scenario", "IV", "--out", "x"])), 1);
    assert_eq!(code(&jlcm(&["replicate", "--scenario", "II", "--reps", "0", "--out", "x"])), 1);
    assert_eq!(code(&jlcm(&["--help"])), 0);
}

#[test]
fn data_and_config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jlcm(&["summarize", "--draws", p(&tmp.path().join("missing.csv"))]);
    assert_eq!(code(&o), 2);
    let (long, surv) = simulate(&tmp.path().join("data"));
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"chain": {"iterations": 10, "burn_in": 20}}"#).unwrap();
    let o = jlcm(&["fit", "--long", &long, "--surv", &surv, "--config", p(&bad), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2);
    std::fs::write(&bad, r#"{"chian": {}}"#).unwrap();
    let o = jlcm(&["fit", "--long", &long, "--surv", &surv, "--config", p(&bad), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2);
    // a measurement after the subject's event time
    let broken = tmp.path().join("long.csv");
    let text = std::fs::read_to_string(&long).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let first: Vec<&str> = lines[1].split(',').collect();
    let extra = format!("{},{},{}", first[0], 99.0, first[2..].join(","));
    lines.push(extra);
    std::fs::write(&broken, lines.join("\n")).unwrap();
    let o = jlcm(&["fit", "--long", p(&broken), "--surv", &surv, "--out", p(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn numerical_failures_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let long = tmp.path().join("long.csv");
    let surv = tmp.path().join("surv.csv");
    std::fs::write(&long, "subject_id,time,y\na,0,1e300\na,1,-1e300\nb,0,1e300\nb,2,1e300\n").unwrap();
    std::fs::write(&surv, "subject_id,event_time,event_indicator\na,3,1\nb,4,0\n").unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"chain": {"iterations": 10, "burn_in": 5, "thin": 1},
            "model": {"fixed_effects": {"covariates": []}, "survival_covariates": [], "hazard": {"internal_knots": 0}}}"#,
    )
    .unwrap();
    let o = jlcm(&["fit", "--long", p(&long), "--surv", p(&surv), "--config", p(&cfg), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
