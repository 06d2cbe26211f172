//! End-to-end checks of runs, sweeps, config files and CSV output.

use std::fs;

use momo::harness::{
    emit_summary, read_trace, repro_e4, run, sweep, trace_to_string, ConfigFile, E4Options, HarnessError, RunConfig,
    TRACE_HEADER,
};
use momo::optimizers::OptimizerKind;
use momo::problems::ProblemKind;

const CONFIG: &str = r#"
[run]
iterations = 120
trace_interval = 7
seed = 4

[problem]
kind = "least-squares-noisy"
n = 80
d = 6
seed = 2

[optimizer]
name = "momo-adam-star"
alpha = 0.05
lb_mode = "online"
lb_init = -1.0

[schedule]
kind = "warmup-cosine"
warmup = 10
"#;

#[test]
fn trace_file_has_golden_header_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let cfg = RunConfig {
        iterations: 50,
        out: Some(path.clone()),
        ..RunConfig::default()
    };
    let s = run(&cfg).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "k,epoch,alpha,tau,zeta,lb,batch_loss,full_loss,dist");
    assert_eq!(text.lines().next().unwrap(), TRACE_HEADER);
    assert_eq!(read_trace(&path).unwrap(), s.trace);
    let ks: Vec<u64> = s.trace.iter().map(|r| r.k).collect();
    assert_eq!(ks, (1..=50).collect::<Vec<_>>());
}

#[test]
fn config_file_reproduces_runs() {
    let cfg = ConfigFile::parse(CONFIG).unwrap().resolve().unwrap();
    assert_eq!(cfg.problem.kind, ProblemKind::LeastSquaresNoisy);
    assert_eq!(cfg.optimizer, OptimizerKind::MomoAdamStar);
    let a = trace_to_string(&run(&cfg).unwrap().trace);
    let again = ConfigFile::parse(&cfg.to_config_file().to_text())
        .unwrap()
        .resolve()
        .unwrap();
    assert_eq!(again, cfg);
    let b = trace_to_string(&run(&again).unwrap().trace);
    assert_eq!(a, b);
    let rows = a.lines().count() - 1;
    assert_eq!(rows, 120 / 7 + 1);
}

#[test]
fn flags_override_file() {
    let file = ConfigFile::parse(CONFIG).unwrap();
    let flags = ConfigFile::parse("[optimizer]\nalpha = 0.5\n").unwrap();
    let cfg = file.overlay(&flags).resolve().unwrap();
    assert_eq!(cfg.optim.schedule.base_alpha(), 0.5);
    assert_eq!(cfg.iterations, 120);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(matches!(
        ConfigFile::parse("[run]\nitertions = 3\n"),
        Err(HarnessError::Config(_))
    ));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let cfg = RunConfig {
        iterations: 3,
        out: Some("/nonexistent-dir/x/trace.csv".into()),
        ..RunConfig::default()
    };
    let e = run(&cfg).unwrap_err();
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn sweep_summary_file() {
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig {
        iterations: 100,
        ..RunConfig::default()
    };
    let res = sweep(&base, &[0.01, 1.0, 1e3], &[0, 1], 2).unwrap();
    let path = dir.path().join("s.csv");
    emit_summary(&res.summary, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("alpha,runs,diverged,mean_final_loss,std_final_loss,mean_min_loss\n"));
}

#[test]
fn repro_writes_every_arm() {
    let dir = tempfile::tempdir().unwrap();
    let opts = E4Options {
        iterations: 300,
        alphas: vec![0.1, 1.0],
        ..E4Options::default()
    };
    let rep = repro_e4(&opts, Some(dir.path())).unwrap();
    assert_eq!(rep.arms.len(), 4);
    for arm in &rep.arms {
        assert!(dir.path().join(format!("{}_summary.csv", arm.label)).exists());
        assert!(dir.path().join(format!("{}_best_trace.csv", arm.label)).exists());
    }
}
