//! Runners for the four subcommands. Each writes its CSV and JSON outputs
//! into the output directory, prefixed with the scenario name.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use erlang_edm::dynamics::{Method, Sampling, SolverOptions, Trajectory};
use erlang_edm::stability::{lyapunov_diagnostics, LyapunovSample};
use erlang_edm::stats::{erlang_cdf, ks_test, median, KsTest};
use erlang_edm::stochastic::SimulationOptions;
use erlang_edm::{
    build_system_matrices, convergence_report, integrate, simulate_replications, stability_report, sup_deviation,
    ErlangEdm, Game, StabilityReport,
};
use serde::Serialize;

use crate::scenario::{RunSpec, Scenario, Solver};
use crate::CliError;

/// Largest tolerated one-step decrease of the potential.
pub const POTENTIAL_TOL: f64 = 1e-8;
/// Deviation below which a stochastic run counts as tracking the mean field.
pub const DEVIATION_THRESHOLD: f64 = 0.05;
const DEFAULT_SAMPLE_DT: f64 = 0.1;
const FD_STEP: f64 = 1e-4;

fn output_path(out: &Path, scenario: &Scenario, suffix: &str) -> PathBuf {
    out.join(format!("{}_{suffix}", scenario.name))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| io_error(dir, source))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| io_error(path, source))
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let w = create(path)?;
    serde_json::to_writer_pretty(w, value).map_err(|e| io_error(path, e.into()))
}

fn write_with(path: &Path, f: impl FnOnce(BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let w = create(path)?;
    f(w).map_err(|source| io_error(path, source))
}

fn solver_options(run: &RunSpec, sampling: Sampling, early_stop: bool) -> SolverOptions {
    let mut opts = match run.solver {
        Solver::Dopri5 => SolverOptions::default(),
        Solver::Rk4 => SolverOptions {
            method: Method::Rk4 {
                step: run.step.unwrap_or(1e-3),
            },
            ..SolverOptions::default()
        },
    }
    .with_sampling(sampling);
    if !early_stop {
        opts = opts.without_early_stop();
    }
    opts
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeSummary {
    pub scenario: String,
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    pub solver: &'static str,
    pub horizon: f64,
    pub final_time: f64,
    pub early_stopped: bool,
    pub samples: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub final_aggregate: Vec<f64>,
    pub ne_residual: f64,
    pub ene_residual: f64,
    pub is_potential: bool,
    /// `None` when the game has no potential.
    pub potential_nondecreasing: Option<bool>,
    pub max_potential_drop: Option<f64>,
    pub max_sum_drift: f64,
    pub min_entry: f64,
    pub csv: String,
}

pub fn run_ode(scenario: &Scenario, out: &Path) -> Result<OdeSummary, CliError> {
    let game = scenario.game()?;
    let protocol = scenario.protocol()?;
    let params = scenario.params()?;
    let x0 = scenario.initial_state()?;
    let sampling = scenario.run.sample_dt.map_or(Sampling::EveryStep, Sampling::Grid);
    let opts = solver_options(&scenario.run, sampling, scenario.run.early_stop);
    let traj = integrate(&game, &protocol, params, &x0, scenario.run.horizon, &opts)?;
    let report = convergence_report(&traj, &game)?;

    let csv = output_path(out, scenario, "ode.csv");
    write_with(&csv, |w| traj.write_csv(&game, w))?;
    let summary = OdeSummary {
        scenario: scenario.name.clone(),
        n: params.n,
        m: params.m,
        lambda: params.lambda,
        solver: traj.meta.method,
        horizon: scenario.run.horizon,
        final_time: traj.final_time(),
        early_stopped: traj.meta.early_stopped,
        samples: traj.len(),
        accepted_steps: traj.meta.stats.accepted,
        rejected_steps: traj.meta.stats.rejected,
        final_aggregate: report.final_aggregate.clone(),
        ne_residual: report.final_ne_residual,
        ene_residual: report.final_ene_residual,
        is_potential: game.potential(&report.final_aggregate).is_some(),
        potential_nondecreasing: report.potential_nondecreasing(POTENTIAL_TOL),
        max_potential_drop: report.max_potential_drop(),
        max_sum_drift: traj.meta.max_sum_drift,
        min_entry: traj.meta.min_entry,
        csv: csv.display().to_string(),
    };
    write_json(&output_path(out, scenario, "ode_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    #[serde(rename = "N")]
    pub agents: usize,
    pub sup_deviation: f64,
    pub events: usize,
    pub revisions: usize,
    pub self_switches: usize,
    /// Inter-revision times against Erlang(m, λ); absent when none completed.
    pub interarrival_ks: Option<KsTest>,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentsSummary {
    pub scenario: String,
    #[serde(rename = "N")]
    pub agents: usize,
    pub horizon: f64,
    pub sample_dt: f64,
    pub deviation_threshold: f64,
    pub fraction_within_threshold: f64,
    pub median_deviation: f64,
    pub max_deviation: f64,
    pub reference_csv: String,
    pub runs: Vec<SeedSummary>,
}

pub fn run_agents(scenario: &Scenario, out: &Path) -> Result<AgentsSummary, CliError> {
    let spec = scenario
        .stochastic
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("scenario {} has no stochastic block", scenario.name)))?;
    let game = scenario.game()?;
    let protocol = scenario.protocol()?;
    let params = scenario.params()?;
    let x0 = scenario.initial_state()?;
    let horizon = spec.horizon.unwrap_or(scenario.run.horizon);
    let sample_dt = spec.sample_dt.or(scenario.run.sample_dt).unwrap_or(DEFAULT_SAMPLE_DT);

    let opts = solver_options(&scenario.run, Sampling::Grid(sample_dt), false);
    let reference = integrate(&game, &protocol, params, &x0, horizon, &opts)?;
    let reference_csv = output_path(out, scenario, "agents_reference.csv");
    write_with(&reference_csv, |w| reference.write_csv(&game, w))?;

    let sim = SimulationOptions {
        sample_dt,
        log_events: spec.log_events,
    };
    let runs = simulate_replications(spec.agents, &game, &protocol, params, &x0, horizon, &spec.seeds, &sim)?;
    let mut seeds = Vec::with_capacity(runs.len());
    for run in &runs {
        let csv = output_path(out, scenario, &format!("agents_seed{}.csv", run.seed));
        write_with(&csv, |w| run.write_csv(&game, w))?;
        if let Some(log) = &run.log {
            let path = output_path(out, scenario, &format!("events_seed{}.csv", run.seed));
            write_with(&path, |w| log.write_csv(w))?;
        }
        let interarrival_ks = (!run.interarrivals.is_empty())
            .then(|| ks_test(&run.interarrivals, |t| erlang_cdf(params.m, params.lambda, t)));
        seeds.push(SeedSummary {
            seed: run.seed,
            agents: run.agents,
            sup_deviation: sup_deviation(&run.samples, &reference)?,
            events: run.events,
            revisions: run.revisions,
            self_switches: run.self_switches,
            interarrival_ks,
            csv: csv.display().to_string(),
        });
    }
    let devs: Vec<f64> = seeds.iter().map(|s| s.sup_deviation).collect();
    let within = devs.iter().filter(|&&d| d <= DEVIATION_THRESHOLD).count();
    let summary = AgentsSummary {
        scenario: scenario.name.clone(),
        agents: spec.agents,
        horizon,
        sample_dt,
        deviation_threshold: DEVIATION_THRESHOLD,
        fraction_within_threshold: within as f64 / devs.len() as f64,
        median_deviation: median(&devs),
        max_deviation: devs.iter().copied().fold(0.0, f64::max),
        reference_csv: reference_csv.display().to_string(),
        runs: seeds,
    };
    write_json(&output_path(out, scenario, "agents_summary.json"), &summary)?;
    Ok(summary)
}

pub fn run_stability(scenario: &Scenario, out: &Path) -> Result<StabilityReport, CliError> {
    let game = scenario.game()?;
    let protocol = scenario.protocol()?;
    let report = stability_report(&game, &protocol, scenario.params()?, &scenario.analysis_options())?;
    write_json(&output_path(out, scenario, "stability.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSummary {
    pub scenario: String,
    pub alpha: f64,
    pub alpha_max: f64,
    pub samples: usize,
    pub initial_value: f64,
    pub final_value: f64,
    pub min_p: f64,
    /// Largest `|dL/dt − (Q − P)| / (1 + |Q|)` over the samples.
    pub worst_identity_error: f64,
    pub csv: String,
}

pub fn run_lyapunov(scenario: &Scenario, out: &Path) -> Result<LyapunovSummary, CliError> {
    let game = scenario.game()?;
    let protocol = scenario.protocol()?;
    let params = scenario.params()?;
    let x0 = scenario.initial_state()?;
    let report = stability_report(&game, &protocol, params, &scenario.analysis_options())?;
    let sys = build_system_matrices(params.n, params.m)?;
    let lyap = report.lyapunov_matrix();

    let sample_dt = scenario.run.sample_dt.unwrap_or(DEFAULT_SAMPLE_DT);
    let opts = solver_options(&scenario.run, Sampling::Grid(sample_dt), false);
    let traj: Trajectory = integrate(&game, &protocol, params, &x0, scenario.run.horizon, &opts)?;
    let edm = ErlangEdm::new(&game, &protocol, params)?;
    let samples = lyapunov_diagnostics(&edm, &traj, report.alpha, &lyap, sys.b(), FD_STEP)?;

    let csv = output_path(out, scenario, "lyapunov.csv");
    write_with(&csv, |w| LyapunovSample::write_csv(&samples, w))?;
    let summary = LyapunovSummary {
        scenario: scenario.name.clone(),
        alpha: report.alpha,
        alpha_max: report.alpha_max,
        samples: samples.len(),
        initial_value: samples.first().map_or(f64::NAN, |s| s.l),
        final_value: samples.last().map_or(f64::NAN, |s| s.l),
        min_p: samples.iter().map(|s| s.p).fold(f64::INFINITY, f64::min),
        worst_identity_error: samples.iter().map(LyapunovSample::identity_error).fold(0.0, f64::max),
        csv: csv.display().to_string(),
    };
    write_json(&output_path(out, scenario, "lyapunov_summary.json"), &summary)?;
    Ok(summary)
}
