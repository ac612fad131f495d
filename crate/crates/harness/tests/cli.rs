use std::path::Path;
use std::process::Command;

fn lldc(out: &Path, args: &[&str]) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_lldc"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("LLDC_SEED")
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stdout).into_owned())
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn ping_run_reports_every_rtt() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = lldc(dir.path(), &["run", "--preset", "lan", "--n", "10", "--m", "3", "--workload", "ping", "--rounds", "200", "--seed", "1"]);
    assert_eq!(code, 0);
    let r = report(dir.path());
    assert_eq!(r["simulated"], true);
    assert_eq!(r["report"]["ping_rtt"]["count"], 200);
    let pings = std::fs::read_to_string(dir.path().join("pings.csv")).unwrap();
    assert_eq!(pings.lines().count(), 201);
}

#[test]
fn disrupting_guard_is_reported_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = lldc(dir.path(), &["run", "--n", "5", "--m", "2", "--cell-len", "256", "--adversary", "disrupt-guard:flip0", "--rounds", "3"]);
    assert_eq!(code, 0);
    let v = &report(dir.path())["report"]["verdicts"];
    assert_eq!(v[0], "excluded S0");
}

#[test]
fn churn_replay_of_a_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = lldc(dir.path(), &["churn", "--synthetic", "cafe", "--D", "0.82"]);
    assert_eq!(code, 0);
    let trace = dir.path().join("trace.csv");
    let (code, out) = lldc(dir.path(), &["churn", "--trace", trace.to_str().unwrap(), "--strategy", "abrupt", "--D", "0.82"]);
    assert_eq!(code, 0);
    assert!(out.contains("abrupt: 32 interruptions"), "{out}");
    assert!(out.contains("max downtime 0.82 s"), "{out}");
    let series = std::fs::read_to_string(dir.path().join("set_series.csv")).unwrap();
    assert!(series.starts_with("time_ms,size,deviation_pct\n"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lldc(dir.path(), &["run", "--n", "1"]).0, 2);
    assert_eq!(lldc(dir.path(), &["run", "--adversary", "disrupt-client:nonsense"]).0, 2);
    assert_eq!(lldc(dir.path(), &["run", "--active-fraction", "2"]).0, 2);
    assert_eq!(lldc(dir.path(), &["sweep", "--ns", ""]).0, 2);
    assert_eq!(lldc(dir.path(), &["frobnicate"]).0, 2);
    let missing = dir.path().join("absent.csv");
    assert_eq!(lldc(dir.path(), &["churn", "--trace", missing.to_str().unwrap()]).0, 2);
}

#[test]
fn seed_variable_overrides_the_flag() {
    let run = |env: Option<&str>, seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Command::new(env!("CARGO_BIN_EXE_lldc"));
        c.arg("--out").arg(dir.path()).args(["run", "--n", "4", "--m", "1", "--cell-len", "128", "--rounds", "5", "--active-fraction", "1", "--seed", seed]);
        match env {
            Some(v) => c.env("LLDC_SEED", v),
            None => c.env_remove("LLDC_SEED"),
        };
        assert!(c.status().unwrap().success());
        std::fs::read(dir.path().join("events.jsonl")).unwrap()
    };
    assert_eq!(run(Some("9"), "1"), run(None, "9"));
    assert_ne!(run(None, "1"), run(None, "9"));
}

#[test]
fn blame_demo_and_setup_bench_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = lldc(dir.path(), &["blame-demo", "--adversary", "disrupt-client:2:flip0:lie"]);
    assert_eq!(code, 0);
    assert!(out.contains("lock-step verdict: excluded C2"), "{out}");
    let t: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("transcript.json")).unwrap()).unwrap();
    assert_eq!(t["verdict"]["kind"], "excluded");
    assert!(!t["transcript"]["reveals"].as_array().unwrap().is_empty());
    let (code, _) = lldc(dir.path(), &["setup-bench", "--ns", "2,5", "--m", "2", "--reps", "1"]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(dir.path().join("setup_bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
