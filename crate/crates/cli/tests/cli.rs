use std::path::Path;
use std::process::Command;

use erlang_edm_cli::scenario::{bundled_names, bundled_scenarios, GameSpec, StochasticSpec};
use erlang_edm_cli::{run_agents, run_lyapunov, run_ode, run_stability, Scenario};

const CONGESTION_NE: [f64; 3] = [0.349, 0.513, 0.137];

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_erlang-edm"))
}

#[test]
fn scenario_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for s in bundled_scenarios() {
        let path = dir.path().join(format!("{}.json", s.name));
        std::fs::write(&path, s.to_json()).unwrap();
        let loaded = Scenario::load(path.to_str().unwrap()).unwrap();
        assert_eq!(loaded, s);
        assert_eq!(Scenario::from_json(&loaded.to_json()).unwrap(), s);
    }
    assert_eq!(bundled_names().len(), 3);
}

#[test]
fn congestion_ode_reaches_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let s = Scenario::load("congestion_network").unwrap();
    let summary = run_ode(&s, dir.path()).unwrap();
    assert!(sup_distance(&summary.final_aggregate, &CONGESTION_NE) <= 0.005, "{summary:?}");
    assert_eq!(summary.potential_nondecreasing, Some(true));
    assert!(summary.is_potential);

    let (header, rows) = read_csv(Path::new(&summary.csv));
    assert_eq!(header.len(), 1 + 9 + 3 + 3);
    assert_eq!((header[0].as_str(), header[1].as_str()), ("t", "x_1_1"));
    assert_eq!(rows.len(), summary.samples);
    assert_eq!(rows.last().unwrap()[0], 50.0);
    assert!(dir.path().join("congestion_network_ode_summary.json").exists());
}

#[test]
fn rps_ode_converges_to_barycenter() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_ode(&Scenario::load("rock_paper_scissors").unwrap(), dir.path()).unwrap();
    assert!(sup_distance(&summary.final_aggregate, &[1.0 / 3.0; 3]) <= 0.01);
    assert!(summary.ene_residual <= 0.02);
    assert_eq!(summary.potential_nondecreasing, None);
    assert_eq!(summary.samples, 501);
}

#[test]
fn extended_equilibrium_stays_put() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_ode(&Scenario::load("rps_equilibrium").unwrap(), dir.path()).unwrap();
    assert_eq!(summary.solver, "rk4");
    let (_, rows) = read_csv(Path::new(&summary.csv));
    let first = &rows[0][1..13];
    let drift = rows.iter().map(|r| sup_distance(&r[1..13], first)).fold(0.0, f64::max);
    assert!(drift <= 1e-6, "drift {drift}");
    assert_eq!(rows.len(), 101);
}

#[test]
fn stability_threshold_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::load("rock_paper_scissors").unwrap();
    let report = run_stability(&s, dir.path()).unwrap();
    assert!((report.lambda_lower - 5.7965).abs() <= 1e-3);
    assert!(report.certified);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rock_paper_scissors_stability.json")).unwrap())
            .unwrap();
    assert_eq!(json["certified"], serde_json::Value::Bool(true));
    assert_eq!(json["c_method"], "override");

    s.params.lambda = 5.0;
    assert!(!run_stability(&s, dir.path()).unwrap().certified);

    let congestion = run_stability(&Scenario::load("congestion_network").unwrap(), dir.path()).unwrap();
    assert!(congestion.is_potential);
}

#[test]
fn lyapunov_function_decreases_along_rps() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::load("rock_paper_scissors").unwrap();
    s.run.horizon = 20.0;
    let summary = run_lyapunov(&s, dir.path()).unwrap();
    assert!(summary.final_value < summary.initial_value);
    assert!(summary.worst_identity_error <= 1e-4, "{summary:?}");
    assert!(summary.min_p >= -1e-8);
    let (header, rows) = read_csv(Path::new(&summary.csv));
    assert_eq!(header, ["t", "L", "P", "Q", "dL_dt_fd"]);
    assert_eq!(rows.len(), 201);
}

#[test]
fn single_agent_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::load("rock_paper_scissors").unwrap();
    s.stochastic = Some(StochasticSpec {
        agents: 1,
        seeds: vec![7],
        horizon: Some(5.0),
        sample_dt: Some(0.5),
        log_events: true,
    });
    let summary = run_agents(&s, dir.path()).unwrap();
    assert_eq!(summary.runs.len(), 1);
    let (_, rows) = read_csv(Path::new(&summary.runs[0].csv));
    assert_eq!(rows.len(), 11);
    for r in &rows {
        let occupied: Vec<f64> = r[1..13].iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(occupied, [1.0]);
    }
    assert!(dir.path().join("rock_paper_scissors_events_seed7.csv").exists());
}

#[test]
fn seeded_runs_are_byte_identical() {
    let mut s = Scenario::load("congestion_network").unwrap();
    s.stochastic = Some(StochasticSpec {
        agents: 500,
        seeds: vec![3, 11],
        horizon: Some(4.0),
        sample_dt: None,
        log_events: true,
    });
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_agents(&s, a.path()).unwrap();
    run_agents(&s, b.path()).unwrap();
    for file in [
        "congestion_network_agents_seed3.csv",
        "congestion_network_agents_seed11.csv",
        "congestion_network_events_seed11.csv",
        "congestion_network_agents_summary.json",
    ] {
        let x = contents_without_dir(a.path(), file);
        assert!(!x.is_empty());
        assert!(x == contents_without_dir(b.path(), file), "{file} differs");
    }
}

/// File contents with the output directory blanked; summaries record output paths.
fn contents_without_dir(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap().replace(dir.to_str().unwrap(), "")
}

#[test]
fn binary_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary()
        .args(["ode", "rps_equilibrium", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["scenario"], "rps_equilibrium");
    assert!(dir.path().join("rps_equilibrium_ode.csv").exists());

    let list = binary().arg("scenarios").output().unwrap();
    assert_eq!(String::from_utf8(list.stdout).unwrap().lines().count(), 3);
}

fn exit_code(scenario: &Scenario, command: &str) -> i32 {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, scenario.to_json()).unwrap();
    binary()
        .arg(command)
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"name\": 1}").unwrap();
    let code = binary().arg("ode").arg(&bad).output().unwrap().status.code();
    assert_eq!(code, Some(2));

    // Payoff gaps at the initial state exceed a unit rate budget.
    let mut s = Scenario::load("rock_paper_scissors").unwrap();
    s.params.lambda = 1.0;
    assert_eq!(exit_code(&s, "ode"), 3);

    let mut s = Scenario::load("rps_equilibrium").unwrap();
    s.game = GameSpec::Matrix(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    s.analysis = None;
    assert_eq!(exit_code(&s, "stability"), 5);

    let mut s = Scenario::load("rps_equilibrium").unwrap();
    s.stochastic = None;
    assert_eq!(exit_code(&s, "agents"), 2);
}
