use std::process::{Command, Output};

use groupgoods::analytics::{delta, ForgivenessRate};
use groupgoods::cli::parse_curve_csv;
use groupgoods::game::GameConfig;
use groupgoods::simulator::EstimateRecord;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groupgoods"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn assert_round_trip(text: &str, config: &GameConfig) {
    let points = parse_curve_csv(text).unwrap();
    assert!(points.len() > 10);
    for (x, y) in points {
        let again = delta(ForgivenessRate::new(x).unwrap(), config.rate(), config);
        assert!((again - y).abs() < 1e-12, "gamma {x}: stored {y}, recomputed {again}");
    }
}

#[test]
fn delta_curve_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let out = run(&["delta-curve", "--N", "12", "--b", "4", "--r", "10.5", "--grid", "301", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# groupgoods"));
    assert!(text.contains("# config: N=12 b=4 n=3 m=1 r=10.5"));
    assert_round_trip(&text, &GameConfig::symmetric(4, 3, 10.5).unwrap());
    assert!(stdout(&out).contains("roots="));
}

#[test]
fn figure1_writes_both_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["figure1", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let solid = std::fs::read_to_string(dir.path().join("figure1_solid.csv")).unwrap();
    let dashed = std::fs::read_to_string(dir.path().join("figure1_dashed.csv")).unwrap();
    assert!(solid.starts_with("# reconstructed parameters"));
    assert_round_trip(&solid, &GameConfig::symmetric(4, 5, 16.0).unwrap());
    assert_round_trip(&dashed, &GameConfig::symmetric(20, 1, 16.0).unwrap());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("game.cfg");
    std::fs::write(&path, "# test game\nN = 12\nb = 4\nn = 3\nr: 5\n").unwrap();
    let out = run(&["thresholds", "--config", path.to_str().unwrap(), "--r", "7"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("N=12 b=4 n=3 m=1 r=7"));
}

#[test]
fn equilibria_json_has_two_roots_above_r_sharp() {
    let out = run(&["equilibria", "--r", "16.5"]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let roots = &doc["report"]["mixed_roots"];
    assert_eq!(roots["kind"], "pair");
    assert_eq!(doc["manifest"]["command"], "equilibria");

    let out = run(&["equilibria", "--r", "2"]);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["report"]["mixed_roots"]["kind"], "none");
    assert_eq!(doc["report"]["pure"]["exists"], false);
}

#[test]
fn simulate_emits_parseable_records() {
    let out = run(&["simulate", "--quantity", "phi", "--reps", "2000", "--gamma", "0.5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows: Vec<EstimateRecord> = rd.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.replications == 2000 && r.gamma == 0.5));
}

#[test]
fn verify_reports_all_passed() {
    let out = run(&["verify"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("0 failed"));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["thresholds", "--N", "20", "--b", "4", "--r", "25"]).status.code(), Some(1));
    assert_eq!(run(&["thresholds", "--N", "21", "--b", "4", "--r", "5"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--quantity", "psi", "--epsilon", "0"]).status.code(), Some(1));
    // One game at a minute tremble never shows a defection.
    let starved = run(&["simulate", "--quantity", "psi", "--epsilon", "1e-12", "--reps", "1"]);
    assert_eq!(starved.status.code(), Some(3));
    assert_eq!(run(&["thresholds"]).status.code(), Some(0));
}
