use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn flexkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexkit"))
        .args(args)
        .env_remove("FLEXKIT_TOLERANCE")
        .output()
        .expect("spawn flexkit")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn validate_fixtures() {
    for name in ["sfo.json", "tecfo.json", "dfo.json", "ufo.json"] {
        let o = flexkit(&["validate", "--in", &fixture(name)]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).lines().last() == Some("feasible"), "{}", stdout(&o));
    }
}

#[test]
fn optimize_prints_objective() {
    let o = flexkit(&["optimize", "--in", &fixture("tecfo.json"), "--prices", &fixture("prices.csv")]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("objective 0.156540"));
    assert!(out.contains("4,0.471000,0.030000"), "{out}");
}

#[test]
fn stdout_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("p.csv");
    std::fs::write(&prices, "price_eur_per_kwh\n0.05\n0.1\n0.03\n0.07\n").unwrap();
    let args = ["optimize", "--in", &fixture("dfo.json"), "--prices", prices.to_str().unwrap()];
    let a = flexkit(&args);
    let b = flexkit(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn thresh_slice_two() {
    let o = flexkit(&["thresh", "--in", &fixture("ufo.json"), "--p0", "1"]);
    assert_eq!(code(&o), 0);
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    assert!(line.starts_with("slice 2: [0.32"), "{line}");
    let nums: Vec<f64> = line
        .trim_start_matches("slice 2: [")
        .trim_end_matches(']')
        .split(", ")
        .map(|s| s.parse().unwrap())
        .collect();
    assert!((nums[0] - 0.324).abs() < 1e-3 && (nums[1] - 0.427).abs() < 1e-3, "{line}");
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = flexkit(&["validate", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert!(o.stdout.is_empty());
}

#[test]
fn missing_file_is_io_error() {
    let o = flexkit(&["validate", "--in", "/nonexistent/fo.json"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn malformed_message_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, b"{\"flexOffer\": 3}").unwrap();
    let o = flexkit(&["validate", "--in", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn infeasible_schedule_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("sfo.json")).unwrap();
    // First default energy pushed above the slice maximum.
    let bad = text.replacen("0.423", "0.9", 1);
    assert_ne!(bad, text);
    let p = dir.path().join("bad.json");
    std::fs::write(&p, bad).unwrap();
    let o = flexkit(&["validate", "--in", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn tolerance_env_is_checked() {
    let o = Command::new(env!("CARGO_BIN_EXE_flexkit"))
        .args(["validate", "--in", &fixture("sfo.json")])
        .env("FLEXKIT_TOLERANCE", "-1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn aggregate_then_disaggregate() {
    let dir = tempfile::tempdir().unwrap();
    let agg = dir.path().join("agg.json");
    let opt = dir.path().join("opt.json");
    let (a, b) = (fixture("sfo.json"), fixture("tecfo.json"));
    let o = flexkit(&["aggregate", "--in", &a, &b, "--out", agg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let o = flexkit(&[
        "optimize",
        "--in",
        agg.to_str().unwrap(),
        "--prices",
        &fixture("prices.csv"),
        "--out",
        opt.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let o = flexkit(&[
        "disaggregate",
        "--agg",
        agg.to_str().unwrap(),
        "--schedule",
        opt.to_str().unwrap(),
        "--members",
        &a,
        &b,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 1 + 16);

    // Members that do not rebuild the stored aggregate are refused.
    let o = flexkit(&[
        "disaggregate",
        "--agg",
        agg.to_str().unwrap(),
        "--schedule",
        opt.to_str().unwrap(),
        "--members",
        &a,
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn failed_run_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("agg.json");
    let o = flexkit(&["aggregate", "--in", &fixture("ufo.json"), "--out", out.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn gen_export_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let fo = dir.path().join("dfo.json");
    let o = flexkit(&["gen", "--model", &fixture("heatpump.cfg"), "--kind", "dfo", "--out", fo.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let o = flexkit(&["validate", "--in", fo.to_str().unwrap()]);
    assert_eq!(code(&o), 0);

    let ttl = dir.path().join("dfo.ttl");
    let o = flexkit(&["export-rdf", "--in", fo.to_str().unwrap(), "--out", ttl.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&ttl).unwrap();
    assert!(text.contains("@prefix dco:") && text.contains("dco:dependencyEnergyConstraintList"));

    let csv = dir.path().join("plot.csv");
    let o = flexkit(&["plot", "--in", &fixture("sfo.json"), "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let plot = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = plot.lines().collect();
    assert_eq!(lines[0], "slice,lower,upper,schedule");
    assert_eq!(lines[1], "1,0.303000,0.478000,0.423000");
    assert_eq!(lines.len(), 9);
}

#[test]
fn coverage_table() {
    let o = flexkit(&["coverage", "--in", &fixture("tecfo.json")]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("EnergyMin") && out.contains("dco-only"), "{out}");
}

#[test]
fn metric_csv() {
    let o = flexkit(&["metric", "--model", &fixture("heatpump.cfg"), "--prices", &fixture("prices.csv")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "model_kind,baseline_cost,optimized_cost,profit,retained");
    let kinds: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(kinds, ["SFO", "TECFO", "DFO", "UFO"]);
    for l in &lines[1..] {
        let cols: Vec<f64> = l.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert!((cols[0] - cols[1] - cols[2]).abs() < 2e-6, "{l}");
    }

    let o = flexkit(&["metric", "--literature"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("not reproduced"));
}

#[test]
fn simulate_writes_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let o = flexkit(&[
        "simulate",
        "--n",
        "2",
        "--prices",
        &fixture("prices.csv"),
        "--policy",
        "accept-all",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).matches(",executed,").count(), 2);
    let text = std::fs::read_to_string(&log).unwrap();
    for line in text.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    let o = flexkit(&["simulate", "--n", "2", "--prices", &fixture("prices.csv"), "--policy", "min-flex=1000"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).matches(",rejected,").count(), 2);

    let o = flexkit(&["simulate", "--n", "2", "--prices", &fixture("prices.csv"), "--policy", "greedy"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bad_prices_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.csv");
    std::fs::write(&p, "price\n0.1\n").unwrap();
    let o = flexkit(&["optimize", "--in", &fixture("sfo.json"), "--prices", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
