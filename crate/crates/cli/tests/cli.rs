use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn unav(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unav")).args(args).current_dir(cwd).output().expect("spawn unav")
}

fn maps_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../maps")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SEALED_MAP: &str = "type octile\nheight 5\nwidth 5\nmap\n.....\n.@@@.\n.@.@.\n.@@@.\n.....\n";

#[test]
fn gen_writes_reproducible_files() {
    let tmp = TempDir::new().unwrap();
    let map = maps_dir().join("empty-16-16.map");
    let args = ["gen", "--map", map.to_str().unwrap(), "--count", "2", "--n", "5", "--seed", "7", "--out", "scen"];
    assert!(unav(&args, tmp.path()).status.success());
    let mut names: Vec<_> = fs::read_dir(tmp.path().join("scen")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["empty-16-16-000.json", "empty-16-16-001.json"]);
    let first = fs::read(tmp.path().join("scen/empty-16-16-001.json")).unwrap();
    assert!(unav(&args, tmp.path()).status.success());
    assert_eq!(fs::read(tmp.path().join("scen/empty-16-16-001.json")).unwrap(), first);
}

#[test]
fn gen_zero_count_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let map = maps_dir().join("empty-16-16.map");
    let out = unav(&["gen", "--map", map.to_str().unwrap(), "--count", "0", "--out", "scen"], tmp.path());
    assert!(out.status.success());
    let dir = tmp.path().join("scen");
    assert!(!dir.exists() || fs::read_dir(dir).unwrap().next().is_none());
}

#[test]
fn gen_rejects_too_many_pairs() {
    let tmp = TempDir::new().unwrap();
    let map = write(tmp.path(), "tiny.map", "type octile\nheight 2\nwidth 2\nmap\n..\n..\n");
    let out = unav(&["gen", "--map", map.to_str().unwrap(), "--count", "1", "--n", "5", "--out", "scen"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn run_exit_codes() {
    let tmp = TempDir::new().unwrap();
    fs::copy(maps_dir().join("empty-16-16.map"), tmp.path().join("empty-16-16.map")).unwrap();
    write(tmp.path(), "sealed.map", SEALED_MAP);
    write(tmp.path(), "one.json", r#"{"map": "empty-16-16.map", "starts": [[2.5, 2.5]], "goals": [[6.5, 2.5]]}"#);
    write(tmp.path(), "sealed.json", r#"{"map": "sealed.map", "starts": [[2.5, 2.5]], "goals": [[0.5, 0.5]]}"#);
    write(tmp.path(), "broken.json", "{ not json");

    let ok = unav(&["run", "--scen", "one.json", "--algo", "dec-unav"], tmp.path());
    assert_eq!(ok.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(doc["outcome"], "success");

    let sealed = unav(&["run", "--scen", "sealed.json", "--algo", "dec-unav"], tmp.path());
    assert_eq!(sealed.status.code(), Some(2));
    let doc: serde_json::Value = serde_json::from_slice(&sealed.stdout).unwrap();
    assert_eq!(doc["outcome"], "fail_no_goal");

    let broken = unav(&["run", "--scen", "broken.json"], tmp.path());
    assert_eq!(broken.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&broken.stderr).contains("broken.json"));

    let bad_algo = unav(&["run", "--scen", "one.json", "--algo", "teleport"], tmp.path());
    assert_ne!(bad_algo.status.code(), Some(0));
}

#[test]
fn run_outputs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let map = maps_dir().join("random-32-32-10.map");
    assert!(unav(&["gen", "--map", map.to_str().unwrap(), "--count", "1", "--n", "8", "--seed", "3", "--out", "."], tmp.path())
        .status
        .success());
    for algo in ["dec-unav", "c-unav", "orca", "tswap"] {
        let mut outputs = Vec::new();
        for k in 0..2 {
            let (res, trace) = (format!("{algo}-{k}.json"), format!("{algo}-{k}.csv"));
            let out = unav(
                &["run", "--scen", "random-32-32-10-000.json", "--algo", algo, "--trace", &trace, "--out", &res],
                tmp.path(),
            );
            assert!(out.status.code().is_some_and(|c| c == 0 || c == 2));
            outputs.push((fs::read(tmp.path().join(res)).unwrap(), fs::read(tmp.path().join(trace)).unwrap()));
        }
        assert_eq!(outputs[0], outputs[1], "{algo}");
        let trace = String::from_utf8(outputs[0].1.clone()).unwrap();
        assert!(trace.starts_with("t,agent,x,y,goal,status\n"));
    }
}

#[test]
fn run_honors_config_and_truncation() {
    let tmp = TempDir::new().unwrap();
    fs::copy(maps_dir().join("empty-16-16.map"), tmp.path().join("empty-16-16.map")).unwrap();
    write(
        tmp.path(),
        "two.json",
        r#"{"map": "empty-16-16.map", "starts": [[2.5, 2.5], [9.5, 9.5]], "goals": [[6.5, 2.5], [12.5, 9.5]]}"#,
    );
    write(tmp.path(), "slow.json", r#"{"u_max": 0.05}"#);
    write(tmp.path(), "typo.json", r#"{"u_maximum": 0.05}"#);
    let out = unav(&["run", "--scen", "two.json", "--n", "1", "--config", "slow.json"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let sumdist = doc["metrics"]["sumdist"].as_f64().unwrap();
    let makespan = doc["metrics"]["makespan"].as_f64().unwrap();
    assert!((sumdist - makespan * 0.05).abs() < 1e-6, "{doc}");

    let typo = unav(&["run", "--scen", "two.json", "--config", "typo.json"], tmp.path());
    assert_eq!(typo.status.code(), Some(1));
}

fn bench_spec(dir: &Path, algorithms: &str) -> PathBuf {
    let maps = maps_dir();
    write(
        dir,
        "spec.json",
        &format!(
            r#"{{"maps": ["{}", "{}"], "agents": [3, 6], "instances": 3, "algorithms": {algorithms}, "seed": 5}}"#,
            maps.join("empty-16-16.map").display(),
            maps.join("two-room-32-32.map").display()
        ),
    )
}

#[test]
fn bench_is_independent_of_thread_count() {
    let tmp = TempDir::new().unwrap();
    let spec = bench_spec(tmp.path(), r#"["dec-unav", "c-unav", "orca", "tswap"]"#);
    let spec = spec.to_str().unwrap();
    assert!(unav(&["bench", spec, "--out", "one.csv", "--jobs", "1"], tmp.path()).status.success());
    let out = unav(&["bench", spec, "--out", "eight.csv", "--jobs", "8"], tmp.path());
    assert!(out.status.success());
    let one = fs::read_to_string(tmp.path().join("one.csv")).unwrap();
    assert_eq!(one, fs::read_to_string(tmp.path().join("eight.csv")).unwrap());
    assert_eq!(
        fs::read(tmp.path().join("one-summary.csv")).unwrap(),
        fs::read(tmp.path().join("eight-summary.csv")).unwrap()
    );
    // 2 maps x 4 algorithms x 2 sizes x 3 instances, plus the header
    assert_eq!(one.lines().count(), 49);
    assert!(one.starts_with("map,algorithm,n,instance,outcome,makespan,flowtime,maxdist,sumdist\n"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("success"));
}

#[test]
fn bench_timing_column_is_opt_in() {
    let tmp = TempDir::new().unwrap();
    let spec = bench_spec(tmp.path(), r#"["tswap"]"#);
    assert!(unav(&["bench", spec.to_str().unwrap(), "--out", "t.csv", "--timing"], tmp.path()).status.success());
    let text = fs::read_to_string(tmp.path().join("t.csv")).unwrap();
    assert!(text.lines().next().unwrap().ends_with(",wall_ms"));
}

#[test]
fn bench_rejects_empty_algorithm_list() {
    let tmp = TempDir::new().unwrap();
    let spec = bench_spec(tmp.path(), "[]");
    let out = unav(&["bench", spec.to_str().unwrap(), "--out", "x.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("x.csv").exists());
}
