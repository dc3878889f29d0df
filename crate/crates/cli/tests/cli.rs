use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn emcmc(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emcmc"))
        .args(args)
        .env("EMCMC_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

const SHORT_RUN: &[&str] = &[
    "run", "--model", "ricker", "--estimator", "enkf", "--n-particles", "50", "--iters", "200", "--rows", "30", "--seed", "7",
];

fn with_output<'a>(base: &[&'a str], dir: &'a str) -> Vec<&'a str> {
    let mut v = base.to_vec();
    v.extend(["--output", dir]);
    v
}

#[test]
fn ricker_run_writes_outputs_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out = emcmc(&with_output(SHORT_RUN, a.to_str().unwrap()), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trace.csv", "metadata.json", "summary.txt", "dataset.csv", "dataset_states.csv"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let out = emcmc(&with_output(SHORT_RUN, b.to_str().unwrap()), tmp.path());
    assert!(out.status.success());
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());

    let trace = fs::read_to_string(a.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,beta0,beta1,sigma_w,sigma_e,log_n0,log_like,accepted,early_stop"
    );
    assert_eq!(lines.count(), 200);

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["status"], "ok");
    assert_eq!(meta["seeds"]["master"], 7);
    assert!(meta["finished_unix"].as_f64().unwrap() >= meta["started_unix"].as_f64().unwrap());
    assert!(meta["chains"][0]["efficiency"]["acceptance_rate"].is_number());
    assert!(fs::read_to_string(a.join("summary.txt")).unwrap().starts_with("Filter"));
}

#[test]
fn metadata_replays_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let again = tmp.path().join("again");
    let out = emcmc(
        &with_output(
            &["run", "--model", "ricker", "--estimator", "bpf", "--n-particles", "40", "--iters", "100", "--rows", "20", "--seed", "3"],
            first.to_str().unwrap(),
        ),
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta = first.join("metadata.json");
    let out = emcmc(&["run", "--config", meta.to_str().unwrap(), "--output", again.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(first.join("trace.csv")).unwrap(), fs::read(again.join("trace.csv")).unwrap());
}

#[test]
fn parallel_chains_get_their_own_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("multi");
    let mut args = with_output(SHORT_RUN, dir.to_str().unwrap());
    args.extend(["--chains", "2"]);
    let out = emcmc(&args, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t0 = fs::read(dir.join("trace_0.csv")).unwrap();
    let t1 = fs::read(dir.join("trace_1.csv")).unwrap();
    assert_ne!(t0, t1);
}

#[test]
fn correlated_sampler_on_jump_process_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = emcmc(
        &["run", "--model", "lotka-volterra", "--estimator", "enkf-correlated", "--sigma-u", "0.1", "--iters", "10", "--rows", "5"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config");
}

#[test]
fn invalid_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[model]\nname = \"ricker\"\nunknown = 1\n").unwrap();
    let out = emcmc(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = emcmc(&["simulate", "--model", "no-such-model"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config");
}

#[test]
fn empty_candidate_list_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = emcmc(&["tune", "--model", "ricker", "--candidates", ""], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("empty"));
}

#[test]
fn tune_writes_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("tune");
    let out = emcmc(
        &["tune", "--model", "ricker", "--estimator", "enkf", "--rows", "30", "--candidates", "200,20", "--replicates", "20", "--output", dir.to_str().unwrap()],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.join("tuning.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "n,tau,zero_fraction");
    assert!(rows[1].starts_with("20,") && rows[2].starts_with("200,"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("recommended N = "));
}

#[test]
fn simulate_uses_default_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let out = emcmc(&["simulate", "--model", "lotka-volterra", "--rows", "6", "--seed", "2"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("simulate-lotka-volterra-enkf-2");
    let data = fs::read_to_string(dir.join("dataset.csv")).unwrap();
    assert_eq!(data.lines().next().unwrap(), "time,y1,y2");
    assert_eq!(data.lines().count(), 7);
    assert!(dir.join("metadata.json").is_file());
}

#[test]
fn compare_same_trace_twice_gives_identical_densities() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("r");
    let out = emcmc(&with_output(SHORT_RUN, run.to_str().unwrap()), tmp.path());
    assert!(out.status.success());
    let trace = run.join("trace.csv");
    let cmp = tmp.path().join("cmp");
    let t = trace.to_str().unwrap();
    let out = emcmc(&["compare", t, t, "--grid", "64", "--output", cmp.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let density = fs::read_to_string(cmp.join("density.csv")).unwrap();
    let mut lines = density.lines();
    assert_eq!(lines.next().unwrap(), "parameter,x,density_1,density_2");
    let mut count = 0;
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[2], f[3]);
        count += 1;
    }
    assert_eq!(count, 5 * 64);
    assert!(cmp.join("comparison.txt").is_file());
}

#[test]
fn compare_single_sample_is_a_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("one.csv");
    fs::write(&trace, "iteration,mu,log_like,accepted,early_stop\n1,0.5,-3.0,1,0\n").unwrap();
    let out = emcmc(&["compare", trace.to_str().unwrap(), "--output", tmp.path().join("c").to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "numerical");
}

#[test]
fn compare_rejects_mismatched_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    fs::write(&a, "iteration,mu,log_like,accepted,early_stop\n1,0.5,-3,1,0\n2,0.7,-3,1,0\n").unwrap();
    fs::write(&b, "iteration,nu,log_like,accepted,early_stop\n1,0.5,-3,1,0\n2,0.7,-3,1,0\n").unwrap();
    let out = emcmc(&["compare", a.to_str().unwrap(), b.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
