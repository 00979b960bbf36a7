use std::path::Path;
use std::process::{Command, Output};

fn dualgrad(dir: &Path, args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dualgrad"));
    cmd.args(args).current_dir(dir).env_remove("DUALGRAD_SEED");
    if let Some(s) = env_seed {
        cmd.env("DUALGRAD_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn equiv_writes_csv_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualgrad(dir.path(), &["equiv", "--reps", "2"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("seed,n_d,step,se,schedule,mode"));
    assert!(lines.all(|l| l.ends_with(",per-token,kernel")));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max terminal SE"));
}

#[test]
fn empty_config_matches_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.toml"), "").unwrap();
    let a = dualgrad(dir.path(), &["generate", "--config", "empty.toml"], None);
    let b = dualgrad(dir.path(), &["generate"], None);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), "seed = 4\n").unwrap();
    let run = |args: &[&str], env: Option<&str>| dualgrad(dir.path(), args, env).stdout;
    let flag = run(&["generate", "--seed", "7"], None);
    assert_eq!(run(&["generate", "--config", "s.toml", "--seed", "7"], Some("4")), flag);
    assert_eq!(run(&["generate", "--config", "s.toml"], Some("7")), run(&["generate", "--seed", "4"], None));
    assert_eq!(run(&["generate"], Some("7")), flag);
    assert_ne!(run(&["generate"], None), flag);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "d_inn = 3\n").unwrap();
    std::fs::write(dir.path().join("odd.toml"), "features = 127\n").unwrap();
    for args in [
        &["equiv", "--config", "bad.toml"][..],
        &["equiv", "--config", "odd.toml"],
        &["equiv", "--mode", "fast"],
        &["equiv", "--schedule", "fractional:0"],
    ] {
        assert_eq!(dualgrad(dir.path(), args, None).status.code(), Some(2), "{args:?}");
    }
    assert_eq!(dualgrad(dir.path(), &["generate"], Some("abc")).status.code(), Some(2));
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dualgrad(dir.path(), &["equiv", "--config", "missing.toml"], None).status.code(), Some(3));
    assert_eq!(dualgrad(dir.path(), &["plot", "missing.csv"], None).status.code(), Some(3));
    let o = dualgrad(dir.path(), &["equiv", "--reps", "1", "--out", "no/such/dir/x.csv"], None);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn props_fault_fails_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("few.toml"), "cases = 2\n").unwrap();
    let ok = dualgrad(dir.path(), &["props", "--config", "few.toml", "--out", "p.csv"], None);
    assert_eq!(ok.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert!(csv.starts_with("suite,cases,passed,failed\n"));
    let bad = dualgrad(dir.path(), &["props", "--config", "few.toml", "--fault", "flip-gradient-sign"], None);
    assert_eq!(bad.status.code(), Some(1));
    let out = stdout(&bad);
    let failed: Vec<&str> = out.lines().filter(|l| l.ends_with(",2,0,2")).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].starts_with("gradient,"));
}

#[test]
fn optimize_writes_per_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("o.toml"), "iterations = 3\npaired = true\n").unwrap();
    let o = dualgrad(
        dir.path(),
        &["optimize", "--config", "o.toml", "--reps", "2", "--seed", "10", "--out", "run.csv"],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["run-s10.csv", "run-s11.csv", "run-s10-baseline.csv", "run-s11-baseline.csv"] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.starts_with("iteration,path,effect_d,similarity,collapse,perturbed,demo_id\n"), "{name}");
    }
    assert!(!dir.path().join("run.csv").exists());
}

#[test]
fn plot_reads_command_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualgrad(dir.path(), &["equiv", "--reps", "2", "--out", "e.csv"], None);
    assert_eq!(o.status.code(), Some(0));
    let p = dualgrad(dir.path(), &["plot", "e.csv", "--log-y", "--title", "SE", "--out", "e.svg"], None);
    assert_eq!(p.status.code(), Some(0));
    let svg = std::fs::read_to_string(dir.path().join("e.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);

    std::fs::write(dir.path().join("empty.csv"), "step,se\n").unwrap();
    assert_eq!(dualgrad(dir.path(), &["plot", "empty.csv"], None).status.code(), Some(2));
    std::fs::write(dir.path().join("junk.csv"), "step,se\n1,x\n").unwrap();
    assert_eq!(dualgrad(dir.path(), &["plot", "junk.csv"], None).status.code(), Some(2));
}

#[test]
fn fig7_reports_both_demonstrations() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualgrad(dir.path(), &["fig7", "--out", "f.csv"], None);
    assert_eq!(o.status.code(), Some(0));
    let report = stdout(&o);
    assert!(report.contains("good demo (N_D=15)") && report.contains("hit at 1"));
    assert!(report.contains("bad demo (N_D=10)") && report.contains("hit at 3"));
    let csv = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert!(csv.starts_with("demo,n_d,output_index,step,se\n"));
}
