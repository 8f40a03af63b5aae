use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_tipping");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn tipping(args: &[&str]) -> Command {
    let mut c = Command::new(BIN);
    c.args(args).env_remove("TIPPING_BASINS").env("RUST_LOG", "off");
    c
}

fn run(args: &[&str]) -> Output {
    tipping(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(args: &[&str]) -> Value {
    let mut all = vec!["--json"];
    all.extend_from_slice(args);
    let o = run(&all);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn basins() -> String {
    data("reference.json").display().to_string()
}

const SUBCOMMANDS: [&[&str]; 14] = [
    &[],
    &["predict"],
    &["rollout"],
    &["steer"],
    &["multilayer"],
    &["bifurcate"],
    &["bootstrap"],
    &["stats"],
    &["stats", "binomial"],
    &["stats", "clopper-pearson"],
    &["stats", "sentences"],
    &["monitor"],
    &["experiment"],
    &["report"],
];

#[test]
fn help_matches_golden() {
    let mut text = String::new();
    for sub in SUBCOMMANDS {
        let mut args = sub.to_vec();
        args.push("--help");
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{args:?}");
        text.push_str(&format!("==> tipping {}\n", args.join(" ")));
        text.push_str(&stdout(&o));
        text.push('\n');
    }
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/help.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &text).unwrap();
    }
    let want = std::fs::read_to_string(&golden).expect("golden help; regenerate with UPDATE_GOLDEN=1");
    assert_eq!(text, want);
    for sub in &SUBCOMMANDS[1..] {
        let section = text
            .split(&format!("==> tipping {} --help\n", sub.join(" ")))
            .nth(1)
            .unwrap();
        assert!(
            section.split("==> ").next().unwrap().contains("--seed"),
            "{sub:?} lacks --seed"
        );
    }
}

#[test]
fn predict_reference_conversation() {
    let v = json(&["predict", "--basins", &basins(), "--conv", "A,C+,C+,A", "--t-eff", "1"]);
    assert_eq!(v["prediction"]["n_star"], 1);
    let o = run(&["predict", "--basins", &basins(), "--conv", "A,C-,C-,A"]);
    let out = stdout(&o);
    assert!(out.lines().next().unwrap().split_whitespace().eq(["n*", "4"]), "{out}");
    assert!(out.contains("3.3449"), "{out}");
}

#[test]
fn rollout_reference_prompt() {
    let o = run(&["rollout", "--basins", &basins(), "--prompt", "A", "--steps", "300"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(
        out.lines().any(|l| l.split_whitespace().eq(["first_hit", "1"])),
        "{out}"
    );
    assert!(out.contains("ABDDD"), "{out}");
    let v = json(&["rollout", "--basins", &basins(), "--prompt", "A", "--steps", "300"]);
    assert_eq!(v["symbols"].as_str().unwrap(), format!("B{}", "D".repeat(299)));
}

#[test]
fn bifurcate_writes_scan_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scan.csv");
    let v = json(&[
        "bifurcate",
        "--r-min",
        "2.8",
        "--r-max",
        "3.6",
        "--out",
        out.to_str().unwrap(),
    ]);
    let r: Vec<f64> = v["doublings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["r"].as_f64().unwrap())
        .collect();
    assert!((r[0] - 3.0).abs() <= 0.01 && (r[1] - 3.449).abs() <= 0.01, "{r:?}");
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next(), Some("r,sample,period"));
    assert!(csv.lines().any(|l| l.ends_with(",2")) && csv.lines().any(|l| l.ends_with(",4")));

    let report_dir = dir.path().join("report");
    let o = run(&[
        "report",
        "--scan",
        out.to_str().unwrap(),
        "--out-dir",
        report_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(report_dir.join("bifurcation.svg").exists());
}

#[test]
fn symbolized_two_cycle_reads_bd() {
    let v = json(&["bifurcate", "--r-steps", "3", "--symbolize", "3.2"]);
    assert_eq!(v["symbolized"]["block"], "BD");
}

#[test]
fn basin_path_from_environment() {
    let o = tipping(&["predict", "--conv", "A"])
        .env("TIPPING_BASINS", basins())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["predict", "--conv", "A"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn resolved_config_is_printed() {
    let o = run(&["--seed", "7", "predict", "--basins", &basins(), "--conv", "A"]);
    let err = stderr(&o);
    let line = err.lines().find(|l| l.starts_with("config: ")).unwrap();
    let cfg: Value = serde_json::from_str(line.trim_start_matches("config: ")).unwrap();
    assert_eq!(cfg["seed"], 7);
    assert_eq!(cfg["command"]["predict"]["t_eff"], 1.0);
    assert_eq!(cfg["command"]["predict"]["epsilon"], 0.01);
}

#[test]
fn exit_codes() {
    assert_eq!(
        run(&["predict", "--basins", &basins(), "--conv", "A", "--bogus"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--version"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        "{\"dimension\": 2,\n \"basins\": {\"B\": {\"centroid\": [1, 0]},,}}",
    )
    .unwrap();
    let o = run(&["predict", "--basins", bad.to_str().unwrap(), "--conv", "B"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 2") && err.contains("expected schema"), "{err}");

    let flat = dir.path().join("flat.json");
    std::fs::write(
        &flat,
        r#"{"dimension": 2, "basins": {"A": {"centroid": [0, 1]}, "B": {"centroid": [1, 0]}, "D": {"centroid": [1, 1]}}}"#,
    )
    .unwrap();
    let o = run(&["predict", "--basins", flat.to_str().unwrap(), "--conv", "A"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn monitor(tokens: &[&[f64]]) -> Output {
    let mut child = tipping(&["monitor", "--basins", &basins(), "--stream", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut stdin = child.stdin.take().unwrap();
        for (t, e) in tokens.iter().enumerate() {
            writeln!(stdin, "{}", serde_json::json!({"t": t, "embedding": e})).unwrap();
        }
    }
    child.wait_with_output().unwrap()
}

#[test]
fn monitor_exit_code_signals_tipping() {
    let o = monitor(&[&[0.4, -0.3], &[0.9, 0.5], &[0.9, 0.5]]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["n_star"], 1);
    assert_eq!(lines[0]["level"], "ok");
    assert_eq!(lines[2]["level"], "tipped");
    assert_eq!(lines[2]["t"], 2);

    let o = monitor(&[&[0.4, -0.3]]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = monitor(&[&[0.4, -0.3, 1.0]]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seeded_sampling_is_reproducible() {
    let args = [
        "--seed",
        "5",
        "rollout",
        "--basins",
        &basins(),
        "--prompt",
        "A,C-",
        "--temperature",
        "0.4",
    ];
    let a = json(&args);
    let b = json(&args);
    assert_eq!(a, b);
}

#[test]
fn stats_commands() {
    let v = json(&["stats", "binomial", "--k", "16", "--n", "18"]);
    let p = v["p"].as_f64().unwrap();
    assert!((0.00065..=0.00066).contains(&p));
    assert_eq!(v["exact"], "43/2^16");
    let v = json(&["stats", "binomial", "--k", "6", "--n", "6", "--two-sided"]);
    assert_eq!(v["p"], 0.03125);
    let o = run(&["stats", "clopper-pearson", "--k", "16", "--n", "18"]);
    assert!(stdout(&o).contains("[0.65288, 0.986249]"), "{}", stdout(&o));
    assert_eq!(
        run(&["stats", "binomial", "--k", "7", "--n", "6"]).status.code(),
        Some(1)
    );
}

#[test]
fn steer_and_multilayer() {
    let v = json(&["steer", "--basins", &basins(), "--conv", "A", "--inject", "C-,C-,A"]);
    assert_eq!(v["steering"]["delta_n_star"], 3);
    let v = json(&["multilayer", "--basins", &basins(), "--prompt", "A,C-,C-,A"]);
    assert_eq!(v["first_hit"], v["effective_head_first_hit"]);
    assert_eq!(v["first_hit"], 4);
    let v = json(&[
        "multilayer",
        "--basins",
        &basins(),
        "--prompt",
        "A,C-,C-,A",
        "--layers",
        "3",
    ]);
    assert_eq!((v["layers"].as_u64(), v["first_hit"].as_u64()), (Some(3), Some(4)));
    let v = json(&[
        "--seed",
        "3",
        "multilayer",
        "--basins",
        &basins(),
        "--prompt",
        "A",
        "--init",
        "random",
        "--layers",
        "2",
    ]);
    assert_eq!(v["layers"], 2);
}

#[test]
fn experiment_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let spec = data("reference_experiment.json");
    let v = json(&[
        "experiment",
        "--spec",
        spec.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(v["summary"]["agreements"], 4);
    for f in ["results.csv", "summary.csv", "histogram.svg", "trajectory-ACCA-.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let again = dir.path().join("again");
    let v2 = json(&[
        "report",
        "--results",
        out.join("results.csv").to_str().unwrap(),
        "--out-dir",
        again.to_str().unwrap(),
    ]);
    assert_eq!(v2["summary"], v["summary"]);
    assert_eq!(
        std::fs::read(out.join("summary.csv")).unwrap(),
        std::fs::read(again.join("summary.csv")).unwrap()
    );
}

#[test]
fn rollout_trace_renders_or_explains() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("a.jsonl");
    let o = run(&[
        "rollout",
        "--basins",
        &basins(),
        "--prompt",
        "A",
        "--steps",
        "10",
        "--trace-out",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let first: Value = serde_json::from_str(std::fs::read_to_string(&trace).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["chosen"], "B");
    assert!(first["scores"]["D"].is_number() && first["context"].as_array().unwrap().len() == 2);
    let o = run(&[
        "report",
        "--trace",
        trace.to_str().unwrap(),
        "--basins",
        &basins(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("trajectory-a.svg").exists());
}
