use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn hycon(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hycon")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// The TOML between the effective-config markers on stderr.
fn effective_block(o: &Output) -> String {
    let err = stderr(o);
    let start = err.find("# effective config\n").expect("block printed") + "# effective config\n".len();
    let end = err.find("# end effective config").unwrap();
    err[start..end].to_string()
}

fn row1_total(csv: &str) -> f64 {
    let line = csv.lines().nth(1).unwrap();
    line.split(',').nth(5).unwrap().parse().unwrap()
}

#[test]
fn econ_table_defaults() {
    let tmp = TempDir::new().unwrap();
    let o = hycon(tmp.path(), &["econ-table"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 20);
    assert!(out.starts_with("Stake Ratio (%),"));
    assert!((row1_total(&out) - 27.54).abs() <= 0.005 * 27.54);

    let json = hycon(tmp.path(), &["econ-table", "--out", "json"]);
    let rows: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 19);
}

#[test]
fn econ_table_price_scaling() {
    let tmp = TempDir::new().unwrap();
    let o = hycon(tmp.path(), &["econ-table", "--price", "0.25"]);
    assert!(o.status.success());
    assert!((row1_total(&stdout(&o)) - 86.05).abs() <= 0.005 * 86.05);
}

#[test]
fn econ_table_rejects_bad_flags() {
    let tmp = TempDir::new().unwrap();
    let o = hycon(tmp.path(), &["econ-table", "--n", "6", "--m", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--n"));
    let o = hycon(tmp.path(), &["econ-table", "--gpu-price", "-3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--gpu-price"));
}

#[test]
fn econ_effective_config_round_trips() {
    let tmp = TempDir::new().unwrap();
    let first = hycon(tmp.path(), &["econ-table", "--price", "0.5", "--gpu-count", "250"]);
    fs::write(tmp.path().join("econ.toml"), effective_block(&first)).unwrap();
    let again = hycon(tmp.path(), &["econ-table", "--config", "econ.toml"]);
    assert!(again.status.success());
    assert_eq!(first.stdout, again.stdout);
}

#[test]
fn econ_curve_has_header_and_rows() {
    let tmp = TempDir::new().unwrap();
    let o = hycon(tmp.path(), &["econ-curve", "--figure", "fig2", "--resolution", "9"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("stake_fraction,required_hash_ratio"));
    assert_eq!(out.lines().count(), 10);
    assert_eq!(hycon(tmp.path(), &["econ-curve", "--figure", "fig9"]).status.code(), Some(2));
}

#[test]
fn params_prints_preset() {
    let tmp = TempDir::new().unwrap();
    let o = hycon(tmp.path(), &["params", "--preset", "DECRED_LIKE"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("target_block_time = 300"));
    assert_eq!(hycon(tmp.path(), &["params", "--preset", "NOPE"]).status.code(), Some(2));
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let o = hycon(tmp.path(), &["attack", "--scenario", "selfish", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn attack_is_deterministic_and_reproducible_from_its_block() {
    let tmp = TempDir::new().unwrap();
    let args = ["attack", "--scenario", "double-spend", "--seeds", "4"];
    let a = hycon(tmp.path(), &[&args[..], &["--out", "a"]].concat());
    hycon(tmp.path(), &[&args[..], &["--out", "b"]].concat());
    assert!(a.status.success(), "{}", stderr(&a));
    let agg = |d: &str| fs::read(tmp.path().join(d).join("aggregate.csv")).unwrap();
    assert_eq!(agg("a"), agg("b"));
    for s in 0..4 {
        assert!(tmp.path().join(format!("a/report-seed{s}.json")).exists());
    }

    fs::write(tmp.path().join("eff.toml"), effective_block(&a)).unwrap();
    let c = hycon(tmp.path(), &[&args[..], &["--config", "eff.toml", "--out", "c"]].concat());
    assert!(c.status.success());
    assert_eq!(agg("a"), agg("c"));

    let mut names: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["a", "b", "c", "eff.toml"]);
}

#[test]
fn weak_double_spend_rarely_succeeds() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("weak.toml"), "[attack]\nstake_share = 0.05\nhash_multiplier = 10.0\n").unwrap();
    let o = hycon(
        tmp.path(),
        &["attack", "--scenario", "double-spend", "--config", "weak.toml", "--seeds", "100", "--out", "o"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("o/aggregate.csv")).unwrap();
    let wins = csv.lines().skip(1).filter(|l| l.split(',').nth(1) == Some("SUCCEEDED")).count();
    assert_eq!(csv.lines().count(), 101);
    assert!(wins < 5, "{wins} of 100 succeeded");
}

#[test]
fn schema_violations_exit_2() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[attack]\nstake_shar = 0.3\n").unwrap();
    let o = hycon(tmp.path(), &["attack", "--scenario", "nas", "--config", "bad.toml", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stake_shar"));
    let o = hycon(tmp.path(), &["validate-config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stalled_runs_exit_3_and_keep_outputs() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("pool.toml"), "[attack]\npool_share = 1.0\noffline_at_height = 10\n").unwrap();
    let o = hycon(
        tmp.path(),
        &["attack", "--scenario", "stakepool", "--config", "pool.toml", "--seeds", "2", "--out", "o"],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(tmp.path().join("o/aggregate.csv").exists());
    assert!(tmp.path().join("o/report-seed1.json").exists());

    fs::write(tmp.path().join("none.toml"), "[network]\ntickets = 0\n").unwrap();
    let o = hycon(tmp.path(), &["simulate", "--config", "none.toml", "--out", "s"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(tmp.path().join("s/report.json").exists());
}

#[test]
fn simulate_exports_chain_and_metrics() {
    let tmp = TempDir::new().unwrap();
    let o = hycon(tmp.path(), &["simulate", "--preset", "PROJECT_PAI", "--blocks", "5000", "--out", "s"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("s/report.json")).unwrap()).unwrap();
    let height = report["best_height"].as_u64().unwrap();
    assert_eq!(height, 5000);
    let chain = fs::read_to_string(tmp.path().join("s/chain.ndjson")).unwrap();
    assert_eq!(chain.lines().count() as u64, height + 1);
    let metrics = fs::read_to_string(tmp.path().join("s/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count() as u64, height + 1);
    let mean = report["mean_interval_after_first_retarget"].as_f64().unwrap();
    assert!((mean - 600.0).abs() < 60.0, "mean {mean}");

    let o = hycon(tmp.path(), &["simulate", "--blocks", "0", "--out", "z"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_config_fills_defaults() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("c.toml"), "scenario = \"strip-mine\"\n[attack]\nhash_multiplier = 3.0\n").unwrap();
    let o = hycon(tmp.path(), &["validate-config", "c.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("hash_multiplier = 3.0"));
    assert!(out.contains("blocks = 1000"));
}
