//! Exact finite-population simulation of the sub-strategy Markov chain.
//!
//! Every agent holds a (strategy, stage) cell and leaves it at rate `λ`. Leaving
//! a stage below `m` advances to the next stage; leaving stage `m` is a
//! revision, where the destination strategy is drawn from the switch rates at
//! the pre-event state.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::csv;
use crate::dynamics::{write_samples_csv, ErlangParams, Sample, Trajectory};
use crate::error::{EdmError, Result};
use crate::games::Game;
use crate::protocols::RevisionProtocol;
use crate::simplex::ExtendedState;

/// Caps the number of replications simulated in parallel.
pub const THREADS_ENV: &str = "EDM_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPopulation {
    n: usize,
    m: usize,
    /// Cell `(strategy, stage)` of every agent, as a flat index `i * m + l`.
    cells: Vec<usize>,
    counts: Vec<u64>,
    t: f64,
}

impl AgentPopulation {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn total(&self) -> usize {
        self.cells.len()
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Agent counts per cell, strategy-major like `ExtendedState`.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn proportions(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    pub fn state(&self) -> ExtendedState {
        ExtendedState::new(self.n, self.m, self.proportions()).expect("counts sum to N")
    }

    fn aggregate(&self) -> Vec<f64> {
        let total = self.total() as f64;
        (0..self.n)
            .map(|i| self.counts[i * self.m..(i + 1) * self.m].iter().sum::<u64>() as f64 / total)
            .collect()
    }
}

/// Largest-remainder rounding of `N·x0`; ties go to the lowest cell index.
pub fn init_population(agents: usize, x0: &ExtendedState) -> Result<AgentPopulation> {
    if agents == 0 {
        return Err(EdmError::InvalidParameter("population size must be at least 1".into()));
    }
    let scaled: Vec<f64> = x0.as_slice().iter().map(|&v| v * agents as f64).collect();
    let mut counts: Vec<u64> = scaled.iter().map(|v| v.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = (agents as u64).saturating_sub(assigned) as usize;
    for &k in order.iter().take(missing) {
        counts[k] += 1;
    }
    let cells = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c as usize))
        .collect();
    Ok(AgentPopulation {
        n: x0.n(),
        m: x0.m(),
        cells,
        counts,
        t: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    StageAdvance,
    Revision,
}

/// One transition of the chain. Indices are zero-based; `to` is the
/// destination strategy of a revision and `None` for a stage advance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub strategy: usize,
    pub stage: usize,
    pub to: Option<usize>,
    pub agent: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog(pub Vec<Event>);

impl EventLog {
    /// CSV `t,kind,i,l,j` with one-based indices; `j` is empty for stage advances.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,kind,i,l,j")?;
        for e in &self.0 {
            let kind = match e.kind {
                EventKind::StageAdvance => "advance",
                EventKind::Revision => "revision",
            };
            let j = e.to.map(|j| (j + 1).to_string()).unwrap_or_default();
            writeln!(w, "{},{kind},{},{},{j}", csv::num(e.t), e.strategy + 1, e.stage + 1)?;
        }
        Ok(())
    }
}

/// Drives one population with its own random stream.
pub struct Gillespie<'a> {
    game: &'a dyn Game,
    protocol: &'a RevisionProtocol,
    params: ErlangParams,
    waiting: Exp<f64>,
    rng: ChaCha8Rng,
}

impl<'a> Gillespie<'a> {
    pub fn new(
        game: &'a dyn Game,
        protocol: &'a RevisionProtocol,
        params: ErlangParams,
        pop: &AgentPopulation,
        seed: u64,
    ) -> Result<Self> {
        // Reuse the field's dimension and budget checks.
        crate::dynamics::ErlangEdm::new(game, protocol, params)?;
        if pop.n != params.n || pop.m != params.m {
            return Err(EdmError::DimensionMismatch {
                expected: params.dim(),
                found: pop.n * pop.m,
            });
        }
        let waiting = Exp::new(params.lambda * pop.total() as f64)
            .map_err(|e| EdmError::InvalidParameter(e.to_string()))?;
        Ok(Self {
            game,
            protocol,
            params,
            waiting,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Time until the next event.
    pub fn next_wait(&mut self) -> f64 {
        self.waiting.sample(&mut self.rng)
    }

    /// Applies one event at time `t` (already drawn) to `pop`.
    pub fn fire(&mut self, pop: &mut AgentPopulation, t: f64) -> Result<Event> {
        let m = self.params.m;
        let agent = self.rng.random_range(0..pop.total());
        let cell = pop.cells[agent];
        let (i, l) = (cell / m, cell % m);
        let dest = if l + 1 < m {
            cell + 1
        } else {
            let j = self.draw_destination(pop, i)?;
            let dest = j * m;
            pop.t = t;
            pop.counts[cell] -= 1;
            pop.counts[dest] += 1;
            pop.cells[agent] = dest;
            return Ok(Event {
                t,
                kind: EventKind::Revision,
                strategy: i,
                stage: l,
                to: Some(j),
                agent,
            });
        };
        pop.t = t;
        pop.counts[cell] -= 1;
        pop.counts[dest] += 1;
        pop.cells[agent] = dest;
        Ok(Event {
            t,
            kind: EventKind::StageAdvance,
            strategy: i,
            stage: l,
            to: None,
            agent,
        })
    }

    pub fn step(&mut self, pop: &mut AgentPopulation) -> Result<Event> {
        let t = pop.t + self.next_wait();
        self.fire(pop, t)
    }

    fn draw_destination(&mut self, pop: &AgentPopulation, i: usize) -> Result<usize> {
        let n = self.params.n;
        let lambda = self.params.lambda;
        let xbar = pop.aggregate();
        let p = self.game.payoff(&xbar);
        if let Some(k) = p.iter().position(|v| !v.is_finite()) {
            return Err(EdmError::NonFinitePayoff { strategy: k });
        }
        let rates: Vec<f64> = (0..n).map(|j| self.protocol.off_diagonal(i, j, &xbar, &p)).collect();
        let off: f64 = rates.iter().sum();
        let stay = lambda - off;
        if stay < -1e-12 * lambda {
            return Err(EdmError::NegativeStayRate {
                strategy: i,
                stay_rate: stay,
                rate_budget: lambda,
            });
        }
        let u = self.rng.random::<f64>() * lambda;
        let mut acc = 0.0;
        for (j, r) in rates.iter().enumerate() {
            acc += r;
            if u < acc {
                return Ok(j);
            }
        }
        Ok(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub sample_dt: f64,
    pub log_events: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            sample_dt: 0.1,
            log_events: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticRun {
    pub seed: u64,
    pub agents: usize,
    pub samples: Vec<Sample>,
    pub events: usize,
    pub revisions: usize,
    pub self_switches: usize,
    /// First complete time between two revisions of each agent, when observed.
    pub interarrivals: Vec<f64>,
    pub log: Option<EventLog>,
}

impl StochasticRun {
    pub fn write_csv<W: Write>(&self, game: &dyn Game, w: W) -> std::io::Result<()> {
        write_samples_csv(&self.samples, game, w)
    }
}

/// Sample times `0, dt, 2dt, …` up to `horizon`, plus `horizon` itself.
pub fn sample_grid(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(EdmError::InvalidParameter(format!("horizon must be positive (got {horizon})")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EdmError::InvalidParameter(format!("sample spacing must be positive (got {dt})")));
    }
    let steps = (horizon / dt + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=steps).map(|k| (k as f64 * dt).min(horizon)).collect();
    if horizon - grid[steps] > 1e-9 * horizon {
        grid.push(horizon);
    } else {
        grid[steps] = horizon;
    }
    Ok(grid)
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    agents: usize,
    game: &dyn Game,
    protocol: &RevisionProtocol,
    params: ErlangParams,
    x0: &ExtendedState,
    horizon: f64,
    seed: u64,
    options: &SimulationOptions,
) -> Result<StochasticRun> {
    let grid = sample_grid(horizon, options.sample_dt)?;
    let mut pop = init_population(agents, x0)?;
    let mut sim = Gillespie::new(game, protocol, params, &pop, seed)?;

    let mut samples = Vec::with_capacity(grid.len());
    let mut next = 0usize;
    let mut log = options.log_events.then(EventLog::default);
    let (mut events, mut revisions, mut self_switches) = (0usize, 0usize, 0usize);
    let mut first_revision = vec![f64::NAN; agents];
    let mut interarrival = vec![f64::NAN; agents];

    let record = |samples: &mut Vec<Sample>, t: f64, pop: &AgentPopulation| {
        samples.push(Sample {
            t,
            state: pop.state(),
            raw_sum: 1.0,
            raw_min: 0.0,
        });
    };

    loop {
        let t_event = pop.t + sim.next_wait();
        while next < grid.len() && grid[next] < t_event {
            record(&mut samples, grid[next], &pop);
            next += 1;
        }
        if t_event > horizon {
            break;
        }
        let event = sim.fire(&mut pop, t_event)?;
        events += 1;
        if event.kind == EventKind::Revision {
            revisions += 1;
            if event.to == Some(event.strategy) {
                self_switches += 1;
            }
            let a = event.agent;
            if first_revision[a].is_nan() {
                first_revision[a] = t_event;
            } else if interarrival[a].is_nan() {
                interarrival[a] = t_event - first_revision[a];
            }
        }
        if let Some(log) = log.as_mut() {
            log.0.push(event);
        }
    }
    Ok(StochasticRun {
        seed,
        agents,
        samples,
        events,
        revisions,
        self_switches,
        interarrivals: interarrival.into_iter().filter(|v| !v.is_nan()).collect(),
        log,
    })
}

/// Largest `‖X(t) − x(t)‖_∞` over shared sample times.
pub fn sup_deviation(empirical: &[Sample], reference: &Trajectory) -> Result<f64> {
    if empirical.len() != reference.samples.len() {
        return Err(EdmError::DimensionMismatch {
            expected: reference.samples.len(),
            found: empirical.len(),
        });
    }
    let mut sup: f64 = 0.0;
    for (a, b) in empirical.iter().zip(&reference.samples) {
        if (a.t - b.t).abs() > 1e-9 * a.t.abs().max(1.0) {
            return Err(EdmError::InvalidParameter(format!(
                "sample times differ ({} vs {})",
                a.t, b.t
            )));
        }
        for (u, v) in a.state.as_slice().iter().zip(b.state.as_slice()) {
            sup = sup.max((u - v).abs());
        }
    }
    Ok(sup)
}

/// Parallelism for replications: `EDM_THREADS` if set and positive, else all cores.
pub fn replication_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs one simulation per seed in parallel; results are in seed order.
#[allow(clippy::too_many_arguments)]
pub fn simulate_replications(
    agents: usize,
    game: &dyn Game,
    protocol: &RevisionProtocol,
    params: ErlangParams,
    x0: &ExtendedState,
    horizon: f64,
    seeds: &[u64],
    options: &SimulationOptions,
) -> Result<Vec<StochasticRun>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(replication_threads())
        .build()
        .map_err(|e| EdmError::NumericalFailure(format!("thread pool: {e}")))?;
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| simulate(agents, game, protocol, params, x0, horizon, seed, options))
            .collect()
    })
}
