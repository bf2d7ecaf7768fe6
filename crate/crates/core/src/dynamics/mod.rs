//! Deterministic mean-field dynamics on the extended simplex.

mod ode;

use std::io::Write;

use serde::Serialize;

pub use ode::{Method, Sampling, StepStats};
pub(crate) use ode::rk4_step;

use crate::csv;
use crate::error::{EdmError, Result};
use crate::games::Game;
use crate::protocols::RevisionProtocol;
use crate::simplex::{aggregate, aggregate_raw, ene_residual, nash_gap, stage_imbalance, ExtendedState, PopulationState};

/// Entries below `-CLIP_FLOOR` in an integrated state are treated as a failure.
pub const CLIP_FLOOR: f64 = 1e-9;

/// Number of strategies `n`, sub-strategy (stage) count `m` and revision rate `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErlangParams {
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
}

impl ErlangParams {
    pub fn new(n: usize, m: usize, lambda: f64) -> Result<Self> {
        if n == 0 {
            return Err(EdmError::InvalidParameter("n must be at least 1".into()));
        }
        if m == 0 {
            return Err(EdmError::InvalidOrder(m));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(EdmError::InvalidParameter(format!(
                "revision rate must be positive and finite (got {lambda})"
            )));
        }
        Ok(Self { n, m, lambda })
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }
}

/// The Erlang EDM vector field for a fixed game, protocol and parameters.
#[derive(Clone, Copy)]
pub struct ErlangEdm<'a> {
    game: &'a dyn Game,
    protocol: &'a RevisionProtocol,
    params: ErlangParams,
}

impl<'a> ErlangEdm<'a> {
    pub fn new(game: &'a dyn Game, protocol: &'a RevisionProtocol, params: ErlangParams) -> Result<Self> {
        for found in [game.dim(), protocol.n()] {
            if found != params.n {
                return Err(EdmError::DimensionMismatch {
                    expected: params.n,
                    found,
                });
            }
        }
        let budget = protocol.rate_budget();
        if (budget - params.lambda).abs() > 1e-12 * params.lambda.max(1.0) {
            return Err(EdmError::InvalidParameter(format!(
                "protocol rate budget {budget} differs from lambda {}",
                params.lambda
            )));
        }
        Ok(Self { game, protocol, params })
    }

    pub fn params(&self) -> ErlangParams {
        self.params
    }

    pub fn game(&self) -> &'a dyn Game {
        self.game
    }

    pub fn protocol(&self) -> &'a RevisionProtocol {
        self.protocol
    }

    /// Field on a raw flat state with an externally supplied payoff vector.
    pub fn field_with_payoff(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let ErlangParams { n, m, lambda } = self.params;
        if x.len() != n * m || out.len() != n * m {
            return Err(EdmError::DimensionMismatch {
                expected: n * m,
                found: x.len().min(out.len()),
            });
        }
        if p.len() != n {
            return Err(EdmError::DimensionMismatch { expected: n, found: p.len() });
        }
        let xbar = aggregate_raw(x, n, m);
        let mut t = vec![0.0; n * n];
        self.protocol.fill_switch_rates(&xbar, p, &mut t)?;
        for i in 0..n {
            let inflow: f64 = (0..n).map(|j| x[j * m + m - 1] * t[j * n + i]).sum();
            out[i * m] = inflow - lambda * x[i * m];
            for l in 1..m {
                out[i * m + l] = lambda * (x[i * m + l - 1] - x[i * m + l]);
            }
        }
        Ok(())
    }

    /// Field on a raw flat state, payoffs evaluated at its aggregate.
    pub fn field(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let ErlangParams { n, m, .. } = self.params;
        if x.len() != n * m {
            return Err(EdmError::DimensionMismatch {
                expected: n * m,
                found: x.len(),
            });
        }
        let xbar = aggregate_raw(x, n, m);
        let p = self.payoff(&xbar)?;
        self.field_with_payoff(x, &p, out)
    }

    pub fn vector_field(&self, x: &ExtendedState) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut out = vec![0.0; x.as_slice().len()];
        self.field(x.as_slice(), &mut out)?;
        Ok(out)
    }

    /// Time derivative of the aggregate, `ẋ̄_i = Σ_l ẋ_{i,l}`.
    pub fn aggregate_velocity(&self, x: &[f64]) -> Result<Vec<f64>> {
        let ErlangParams { n, m, .. } = self.params;
        let mut out = vec![0.0; n * m];
        self.field(x, &mut out)?;
        Ok(aggregate_raw(&out, n, m))
    }

    pub(crate) fn payoff(&self, xbar: &[f64]) -> Result<Vec<f64>> {
        let p = self.game.payoff(xbar);
        if let Some(k) = p.iter().position(|v| !v.is_finite()) {
            return Err(EdmError::NonFinitePayoff { strategy: k });
        }
        Ok(p)
    }

    fn check_state(&self, x: &ExtendedState) -> Result<()> {
        if x.n() != self.params.n || x.m() != self.params.m {
            return Err(EdmError::DimensionMismatch {
                expected: self.params.dim(),
                found: x.as_slice().len(),
            });
        }
        Ok(())
    }
}

pub fn vector_field(
    game: &dyn Game,
    protocol: &RevisionProtocol,
    params: ErlangParams,
    x: &ExtendedState,
) -> Result<Vec<f64>> {
    ErlangEdm::new(game, protocol, params)?.vector_field(x)
}

/// The standard (single-stage) EDM field `Σ_j x̄_j T_{j,i} − λ x̄_i`.
pub fn standard_edm_field(protocol: &RevisionProtocol, xbar: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let n = protocol.n();
    if xbar.len() != n || p.len() != n {
        return Err(EdmError::DimensionMismatch {
            expected: n,
            found: xbar.len().min(p.len()),
        });
    }
    let mut t = vec![0.0; n * n];
    protocol.fill_switch_rates(xbar, p, &mut t)?;
    let lambda = protocol.rate_budget();
    Ok((0..n)
        .map(|i| (0..n).map(|j| xbar[j] * t[j * n + i]).sum::<f64>() - lambda * xbar[i])
        .collect())
}

/// Stop once the extended-equilibrium residual has stayed below `threshold`
/// for `hold` time units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EarlyStop {
    pub threshold: f64,
    pub hold: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            threshold: 1e-6,
            hold: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: Method,
    pub sampling: Sampling,
    pub early_stop: Option<EarlyStop>,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::dopri5(),
            sampling: Sampling::EveryStep,
            early_stop: Some(EarlyStop::default()),
            max_steps: 5_000_000,
        }
    }
}

impl SolverOptions {
    pub fn rk4() -> Self {
        Self {
            method: Method::rk4(),
            ..Self::default()
        }
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn without_early_stop(mut self) -> Self {
        self.early_stop = None;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Clipped and renormalized state.
    pub state: ExtendedState,
    /// Entry sum and smallest entry of the integrator state before clipping.
    pub raw_sum: f64,
    pub raw_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverMeta {
    pub method: &'static str,
    pub stats: StepStats,
    pub early_stopped: bool,
    /// Smallest entry over all accepted steps, before clipping.
    pub min_entry: f64,
    pub max_sum_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub meta: SolverMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn final_state(&self) -> &ExtendedState {
        &self.samples.last().expect("trajectory holds the initial sample").state
    }

    pub fn final_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn write_csv<W: Write>(&self, game: &dyn Game, w: W) -> std::io::Result<()> {
        write_samples_csv(&self.samples, game, w)
    }
}

/// Writes `t, x_i_l..., xbar_i..., p_i...` rows at full precision.
pub fn write_samples_csv<W: Write>(samples: &[Sample], game: &dyn Game, mut w: W) -> std::io::Result<()> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let (n, m) = (first.state.n(), first.state.m());
    let mut header = vec!["t".to_string()];
    for i in 1..=n {
        for l in 1..=m {
            header.push(format!("x_{i}_{l}"));
        }
    }
    header.extend((1..=n).map(|i| format!("xbar_{i}")));
    header.extend((1..=n).map(|i| format!("p_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for s in samples {
        let xbar = aggregate(&s.state);
        let p = game.payoff(xbar.as_slice());
        let row = std::iter::once(s.t)
            .chain(s.state.as_slice().iter().copied())
            .chain(xbar.as_slice().iter().copied())
            .chain(p);
        csv::write_row(&mut w, row)?;
    }
    Ok(())
}

pub fn integrate(
    game: &dyn Game,
    protocol: &RevisionProtocol,
    params: ErlangParams,
    x0: &ExtendedState,
    horizon: f64,
    options: &SolverOptions,
) -> Result<Trajectory> {
    let edm = ErlangEdm::new(game, protocol, params)?;
    edm.check_state(x0)?;
    integrate_field(&edm, x0, horizon, options)
}

pub(crate) fn integrate_field(
    edm: &ErlangEdm<'_>,
    x0: &ExtendedState,
    horizon: f64,
    options: &SolverOptions,
) -> Result<Trajectory> {
    let ErlangParams { n, m, .. } = edm.params();
    let mut samples = Vec::new();
    let mut min_entry = f64::INFINITY;
    let mut max_sum_drift: f64 = 0.0;
    let mut below_since: Option<f64> = None;
    let mut early_stopped = false;
    let mut last_t = f64::NEG_INFINITY;

    let observe = |t: f64, y: &[f64], is_sample: bool| -> Result<ode::Flow> {
        let raw_min = y.iter().copied().fold(f64::INFINITY, f64::min);
        let raw_sum: f64 = y.iter().sum();
        min_entry = min_entry.min(raw_min);
        max_sum_drift = max_sum_drift.max((raw_sum - 1.0).abs());

        let mut stop = false;
        if let Some(rule) = options.early_stop {
            let xbar = aggregate_raw(y, n, m);
            let p = edm.payoff(&xbar)?;
            let residual = nash_gap(&xbar, &p) + stage_imbalance(y, &xbar, m);
            if residual < rule.threshold {
                let since = *below_since.get_or_insert(t);
                stop = t - since >= rule.hold;
            } else {
                below_since = None;
            }
        }
        if (is_sample || stop) && t > last_t {
            samples.push(Sample {
                t,
                state: ExtendedState::from_integrator(n, m, y, CLIP_FLOOR)?,
                raw_sum,
                raw_min,
            });
            last_t = t;
        }
        if stop {
            early_stopped = true;
            Ok(ode::Flow::Stop)
        } else {
            Ok(ode::Flow::Continue)
        }
    };

    let stats = ode::integrate(
        |y, out| edm.field(y, out),
        x0.as_slice(),
        horizon,
        options.method,
        options.sampling,
        options.max_steps,
        observe,
    )?;
    Ok(Trajectory {
        samples,
        meta: SolverMeta {
            method: options.method.name(),
            stats,
            early_stopped,
            min_entry,
            max_sum_drift,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub times: Vec<f64>,
    pub ne_residual: Vec<f64>,
    pub ene_residual: Vec<f64>,
    /// `f(x̄(t))` at every sample when the game has a potential.
    pub potential: Option<Vec<f64>>,
    pub final_ne_residual: f64,
    pub final_ene_residual: f64,
    pub final_aggregate: Vec<f64>,
}

impl ConvergenceReport {
    /// Largest one-step decrease of the potential series (0 if it never drops).
    pub fn max_potential_drop(&self) -> Option<f64> {
        self.potential.as_ref().map(|f| {
            f.windows(2)
                .map(|w| w[0] - w[1])
                .fold(0.0, f64::max)
        })
    }

    pub fn potential_nondecreasing(&self, tol: f64) -> Option<bool> {
        self.max_potential_drop().map(|d| d <= tol)
    }
}

pub fn convergence_report(traj: &Trajectory, game: &dyn Game) -> Result<ConvergenceReport> {
    let Some(last) = traj.samples.last() else {
        return Err(EdmError::InvalidParameter("empty trajectory".into()));
    };
    let mut ne = Vec::with_capacity(traj.len());
    let mut ene = Vec::with_capacity(traj.len());
    let mut potential: Option<Vec<f64>> = Some(Vec::with_capacity(traj.len()));
    for s in &traj.samples {
        let xbar: PopulationState = aggregate(&s.state);
        ne.push(crate::simplex::ne_residual(game, &xbar)?);
        ene.push(ene_residual(game, &s.state)?);
        match (game.potential(xbar.as_slice()), potential.as_mut()) {
            (Some(f), Some(series)) => series.push(f),
            _ => potential = None,
        }
    }
    Ok(ConvergenceReport {
        times: traj.times(),
        final_ne_residual: *ne.last().unwrap_or(&0.0),
        final_ene_residual: *ene.last().unwrap_or(&0.0),
        final_aggregate: aggregate(&last.state).into_vec(),
        ne_residual: ne,
        ene_residual: ene,
        potential,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{congestion_game, linear_game, sample_simplex};
    use crate::protocols::RevisionProtocol;
    use crate::simplex::uniform_extension;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rps() -> crate::games::LinearGame {
        linear_game(DMatrix::from_row_slice(3, 3, &[0., -1., 1., 1., 0., -1., -1., 1., 0.])).unwrap()
    }

    #[test]
    fn interior_equilibrium_is_stationary() {
        let game = rps();
        let smith = RevisionProtocol::smith(3, 5.8).unwrap();
        let x = uniform_extension(&PopulationState::barycenter(3).unwrap(), 4).unwrap();
        let f = vector_field(&game, &smith, ErlangParams::new(3, 4, 5.8).unwrap(), &x).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn single_strategy_is_pure_relaxation() {
        let game = linear_game(DMatrix::from_element(1, 1, 2.0)).unwrap();
        let p = RevisionProtocol::smith(1, 3.0).unwrap();
        let x = ExtendedState::new(1, 3, vec![0.5, 0.3, 0.2]).unwrap();
        let f = vector_field(&game, &p, ErlangParams::new(1, 3, 3.0).unwrap(), &x).unwrap();
        let expect = [3.0 * (0.2 - 0.5), 3.0 * (0.5 - 0.3), 3.0 * (0.3 - 0.2)];
        for (a, b) in f.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let flat = ExtendedState::new(1, 3, vec![1.0 / 3.0; 3]).unwrap();
        let f = vector_field(&game, &p, ErlangParams::new(1, 3, 3.0).unwrap(), &flat).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn single_stage_matches_standard_edm() {
        let game = rps();
        let smith = RevisionProtocol::smith(3, 8.0).unwrap();
        let edm = ErlangEdm::new(&game, &smith, ErlangParams::new(3, 1, 8.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = sample_simplex(3, &mut rng);
            let p: Vec<f64> = (0..3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let mut out = vec![0.0; 3];
            edm.field_with_payoff(&x, &p, &mut out).unwrap();
            let reference = standard_edm_field(&smith, &x, &p).unwrap();
            for (a, b) in out.iter().zip(&reference) {
                assert!((a - b).abs() <= 1e-15 * 8.0);
            }
        }
    }

    #[test]
    fn field_components_sum_to_zero() {
        let game = rps();
        let smith = RevisionProtocol::smith(3, 8.0).unwrap();
        let params = ErlangParams::new(3, 5, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = ExtendedState::new(3, 5, sample_simplex(15, &mut rng)).unwrap();
            let f = vector_field(&game, &smith, params, &x).unwrap();
            assert!(f.iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn budget_violation_propagates() {
        let game = rps();
        let smith = RevisionProtocol::smith(3, 1.0).unwrap();
        let x = ExtendedState::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let err = vector_field(&game, &smith, ErlangParams::new(3, 2, 1.0).unwrap(), &x);
        assert!(matches!(err, Err(EdmError::NegativeStayRate { .. })));
    }

    #[test]
    fn mismatched_budget_is_rejected() {
        let game = rps();
        let smith = RevisionProtocol::smith(3, 5.0).unwrap();
        assert!(ErlangEdm::new(&game, &smith, ErlangParams::new(3, 2, 5.8).unwrap()).is_err());
        assert!(ErlangEdm::new(&game, &smith, ErlangParams::new(4, 2, 5.0).unwrap()).is_err());
    }

    #[test]
    fn equilibrium_trajectory_is_constant() {
        let game = rps();
        let smith = RevisionProtocol::smith(3, 5.8).unwrap();
        let x0 = uniform_extension(&PopulationState::barycenter(3).unwrap(), 4).unwrap();
        let opts = SolverOptions::default().without_early_stop().with_sampling(Sampling::Grid(0.5));
        let traj = integrate(&game, &smith, ErlangParams::new(3, 4, 5.8).unwrap(), &x0, 10.0, &opts).unwrap();
        assert_eq!(traj.len(), 21);
        for s in &traj.samples {
            for (a, b) in s.state.as_slice().iter().zip(x0.as_slice()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        let report = convergence_report(&traj, &game).unwrap();
        assert!(report.ne_residual.iter().all(|&r| r < 1e-12));
        assert!(report.ene_residual.iter().all(|&r| r < 1e-12));
        assert!(report.potential.is_none());
    }

    #[test]
    fn early_stop_triggers_at_equilibrium() {
        let game = rps();
        let smith = RevisionProtocol::smith(3, 5.8).unwrap();
        let x0 = uniform_extension(&PopulationState::barycenter(3).unwrap(), 4).unwrap();
        let traj = integrate(&game, &smith, ErlangParams::new(3, 4, 5.8).unwrap(), &x0, 50.0, &SolverOptions::default()).unwrap();
        assert!(traj.meta.early_stopped);
        let t = traj.final_time();
        assert!((1.0..5.0).contains(&t), "stopped at {t}");
    }

    #[test]
    fn congestion_potential_rises() {
        let game = congestion_game(&[2.5, 1.5, 0.5, 2.5, 0.7], &[vec![1, 2], vec![4, 5], vec![1, 3, 5]]).unwrap();
        let smith = RevisionProtocol::smith(3, 5.0).unwrap();
        let x0 = ExtendedState::from_rows(&[vec![0.0, 0.0, 0.2], vec![0.2, 0.0, 0.0], vec![0.6, 0.0, 0.0]]).unwrap();
        let opts = SolverOptions::default().with_sampling(Sampling::Grid(0.1));
        let traj = integrate(&game, &smith, ErlangParams::new(3, 3, 5.0).unwrap(), &x0, 50.0, &opts).unwrap();
        let report = convergence_report(&traj, &game).unwrap();
        assert_eq!(report.potential_nondecreasing(1e-8), Some(true));
        for (a, b) in report.final_aggregate.iter().zip([0.349, 0.513, 0.137]) {
            assert!((a - b).abs() < 0.005, "{:?}", report.final_aggregate);
        }
    }

    #[test]
    fn rk4_runs_are_reproducible() {
        let game = rps();
        let smith = RevisionProtocol::smith(3, 5.8).unwrap();
        let x0 = ExtendedState::from_rows(&[vec![0.7, 0.0, 0.0, 0.0], vec![0.1, 0.0, 0.0, 0.0], vec![0.2, 0.0, 0.0, 0.0]]).unwrap();
        let opts = SolverOptions::rk4().with_sampling(Sampling::Grid(0.5));
        let params = ErlangParams::new(3, 4, 5.8).unwrap();
        let a = integrate(&game, &smith, params, &x0, 3.0, &opts).unwrap();
        let b = integrate(&game, &smith, params, &x0, 3.0, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
        assert!(a.meta.min_entry >= -1e-7);
    }

    #[test]
    fn csv_has_expected_shape() {
        let game = rps();
        let smith = RevisionProtocol::smith(3, 5.8).unwrap();
        let x0 = uniform_extension(&PopulationState::new(vec![0.5, 0.3, 0.2]).unwrap(), 2).unwrap();
        let opts = SolverOptions::default().with_sampling(Sampling::Grid(1.0)).without_early_stop();
        let traj = integrate(&game, &smith, ErlangParams::new(3, 2, 5.8).unwrap(), &x0, 2.0, &opts).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&game, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x_1_1,x_1_2,x_2_1,x_2_2,x_3_1,x_3_2,xbar_1,xbar_2,xbar_3,p_1,p_2,p_3");
        assert_eq!(lines.len(), 4);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 13));
        let parsed: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(parsed, 0.25);
    }
}
