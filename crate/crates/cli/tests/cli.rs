use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BASE: &str = r#"
[input]
panel = "panel.csv"
attributes = "attributes.csv"
adjacency = "adjacency.txt"

[model]
outcome = { name = "emp", transforms = ["log"] }
shock = "burn"
horizons = 12
outcome_lags = 6
shock_lags = 6

[inference.jackknife]
draws = 30
seed = 4

[synth]
n_counties = 80
n_periods = 120
seed = 5
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fire-lp"))
        .current_dir(dir)
        .arg("--config")
        .arg(dir.join("fire-lp.toml"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json status line")
}

/// Temp dir holding a config (BASE plus `extra`) and a synthetic panel.
fn workspace(extra: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("fire-lp.toml"), format!("{BASE}\n{extra}")).unwrap();
    ok(dir.path(), &["-o", ".", "synth"]);
    dir
}

fn rows(path: PathBuf) -> Vec<Vec<String>> {
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn synthetic_round_trip_recovers_truth() {
    let dir = workspace("");
    let status = ok(dir.path(), &["-o", "out", "irf", "--truth", "truth.csv"]);
    assert_eq!(status["status"], "ok");
    let irf = rows(dir.path().join("out/irf.csv"));
    assert_eq!(irf.len(), 14);
    assert_eq!(irf[0], ["horizon", "beta", "se", "scaled_beta", "lo", "hi"]);
    let report = fs::read_to_string(dir.path().join("out/recovery.txt")).unwrap();
    assert!(report.ends_with("overall = PASS\n"), "{report}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = workspace("");
    ok(dir.path(), &["-o", "a", "jackknife"]);
    ok(dir.path(), &["-o", "b", "--sequential", "jackknife"]);
    for f in ["irf.csv", "cumulative.txt", "jackknife_covariance.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn cumulative_is_sum_of_written_path() {
    let dir = workspace("");
    ok(dir.path(), &["-o", "out", "jackknife"]);
    let irf = rows(dir.path().join("out/irf.csv"));
    let mut sum = 0.0;
    for r in &irf[2..] {
        sum += r[3].parse::<f64>().unwrap();
    }
    let text = fs::read_to_string(dir.path().join("out/cumulative.txt")).unwrap();
    let kv: HashMap<&str, &str> = text.lines().filter_map(|l| l.split_once(" = ")).collect();
    assert_eq!(kv["phi"].parse::<f64>().unwrap(), sum);
    assert!(kv["sd"].parse::<f64>().unwrap() > 0.0);
    assert_eq!(kv["draws"], "30");
    assert_eq!(kv["horizon"], "12");
}

#[test]
fn split_writes_both_groups_and_matches_truth() {
    // Light-tailed fire sizes: with the default heavy tail a handful of
    // fires dominate 40-county groups and the bands come out too narrow.
    let dir = workspace(
        r#"
[synth.fire]
probability = 0.03
log_mean = 2.4477
log_sd = 0.5
persistence = 0.3

[synth.split]
attribute = "hhi"
above = { target = [-0.004, -0.012, -0.012, -0.011, -0.011, -0.01, -0.01, -0.01, -0.009, -0.008, -0.007, -0.007, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006, -0.006] }
"#,
    );
    let truth = rows(dir.path().join("truth.csv"));
    assert_eq!(truth[0], ["horizon", "target", "target_above"]);
    ok(dir.path(), &["-o", "out", "irf", "--split", "hhi", "--truth", "truth.csv"]);
    for f in ["irf_hhi_above.csv", "irf_hhi_below.csv"] {
        assert_eq!(rows(dir.path().join("out").join(f)).len(), 14);
    }
    let report = fs::read_to_string(dir.path().join("out/recovery.txt")).unwrap();
    assert_eq!(report.lines().count(), 3);
    assert!(report.ends_with("overall = PASS\n"), "{report}");
}

#[test]
fn state_columns_partition_the_shock() {
    let dir = workspace(
        r#"
[model.state]
series = "unemp"
percentile = 70

[synth.fire]
probability = 0.03
log_mean = 0.69
log_sd = 1.94
persistence = 0.0

[synth.state]
high = { target = [-0.004, -0.01, -0.02] }
"#,
    );
    ok(dir.path(), &["-o", "out", "irf", "--state", "--debug-designs"]);
    ok(dir.path(), &["-o", "out", "irf", "--debug-designs"]);
    assert!(dir.path().join("out/irf_state_high.csv").exists());
    assert!(dir.path().join("out/irf_state_low.csv").exists());
    for h in [0, 12] {
        let base = rows(dir.path().join(format!("out/designs/irf_h{h}.csv")));
        let state = rows(dir.path().join(format!("out/designs/irf_state_h{h}.csv")));
        let col = |rows: &[Vec<String>], name: &str| rows[0].iter().position(|c| c == name).unwrap();
        let d = col(&base, "burn");
        let (hi, lo) = (col(&state, "burn:high"), col(&state, "burn:low"));
        let shock: HashMap<(String, String), f64> = base[1..]
            .iter()
            .map(|r| ((r[0].clone(), r[1].clone()), r[d].parse().unwrap()))
            .collect();
        assert!(state.len() > 1);
        for r in &state[1..] {
            let sum = r[hi].parse::<f64>().unwrap() + r[lo].parse::<f64>().unwrap();
            assert_eq!(sum, shock[&(r[0].clone(), r[1].clone())]);
        }
    }
}

#[test]
fn hei_from_saved_response() {
    let dir = workspace("[hei]\ntruncation = 12\n");
    ok(dir.path(), &["-o", "out", "irf"]);
    fs::write(dir.path().join("proj.csv"), "step,burn\n0,13.1\n1,0\n2,0\n").unwrap();
    ok(
        dir.path(),
        &["-o", "out", "hei", "--irf", "out/irf.csv", "--projection", "proj.csv"],
    );
    let hei = rows(dir.path().join("out/hei.csv"));
    assert_eq!(hei[0], ["region", "period", "impact_pp"]);
    // four synthetic regions × 120 periods
    assert_eq!(hei.len(), 1 + 4 * 120);
    let irf = rows(dir.path().join("out/irf.csv"));
    let proj = rows(dir.path().join("out/projection.csv"));
    let impact: f64 = proj[1][1].parse().unwrap();
    let scaled: f64 = irf[1][3].parse().unwrap();
    assert!((impact - scaled).abs() <= 1e-12 * scaled.abs().max(1e-300));
}

#[test]
fn missing_panel_is_reported_with_its_path() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("fire-lp.toml"), BASE).unwrap();
    let out = run(dir.path(), &["-o", "out", "irf"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["status"], "error");
    assert_eq!(err["kind"], "io");
    assert!(err["path"].as_str().unwrap().ends_with("panel.csv"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("fire-lp.toml"), format!("{BASE}\n[run]\noutptu_dir = 'x'\n")).unwrap();
    let out = run(dir.path(), &["irf"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "config");
}

#[test]
fn estimation_failure_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("county,period,emp,burn\n");
    for c in 1..=6 {
        for t in 0..30 {
            let emp = 1000.0 + (c * 37 + t * t) as f64;
            csv.push_str(&format!("{c:05},{}-{:02},{emp},0\n", 2000 + t / 12, t % 12 + 1));
        }
    }
    fs::write(dir.path().join("panel.csv"), csv).unwrap();
    let config = BASE.replace("attributes = \"attributes.csv\"\n", "").replace("adjacency = \"adjacency.txt\"\n", "");
    fs::write(dir.path().join("fire-lp.toml"), config).unwrap();
    let out = run(dir.path(), &["-o", "out", "irf"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "estimation");
}
