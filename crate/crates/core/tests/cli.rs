use std::path::PathBuf;
use std::process::{Command, Output};

fn fedsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim")).args(args).output().expect("run fedsim")
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).to_string_lossy().into_owned()
}

fn tmp(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("fedsim-cli-{}-{name}", std::process::id()))
}

#[test]
fn passing_scenario_exits_zero() {
    let out = fedsim(&["run", "--scenario", &scenario("fig5_symmetric_federation.fed"), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).ends_with("PASS\n"));
}

#[test]
fn failed_expectation_exits_one() {
    let path = tmp("fail.fed");
    std::fs::write(&path, "site a.example\nregister a.example alice\nexpect followers(alice@a.example) size 2\n").unwrap();
    let out = fedsim(&["run", "--scenario", path.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL line 3"));
}

#[test]
fn usage_and_parse_errors_exit_two() {
    assert_eq!(fedsim(&["run", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(fedsim(&["swat0", "--seed", "1", "--loss", "2"]).status.code(), Some(2));
    let path = tmp("bad.fed");
    std::fs::write(&path, "site a.example\nbogus\n").unwrap();
    let out = fedsim(&["run", "--scenario", path.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn trace_file_is_reproducible() {
    let (a, b) = (tmp("a.trace"), tmp("b.trace"));
    for p in [&a, &b] {
        let out = fedsim(&[
            "run", "--scenario", &scenario("swat0.fed"), "--seed", "9", "--loss", "0.2", "--reorder", "0.5",
            "--delay-max", "3", "--trace", p.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    assert!(fedsim::Trace::from_bytes(&ta).unwrap().len() > 10);
}

#[test]
fn swat0_and_oracle_subcommands() {
    assert_eq!(fedsim(&["swat0", "--seed", "4", "--loss", "0.2", "--retries", "16"]).status.code(), Some(0));
    let out = fedsim(&["oracle-check", "--sites", "2", "--ops", "50", "--seed", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fedsim(&["oracle-check", "--sites", "1", "--ops", "5", "--seed", "2"]).status.code(), Some(2));
}
