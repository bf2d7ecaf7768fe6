//! State algebra on the strategy simplex and the extended (strategy, stage) simplex.
//!
//! Extended states are stored strategy-major: entry `(i, l)` lives at index
//! `i * m + l`, so the flat layout is `x_{1,1} .. x_{1,m} .. x_{n,1} .. x_{n,m}`.
//! Tilde states are stored stage-major: block `l` holds the `n` differences
//! `x_{i,l} - x_{i,m}` and blocks are concatenated in order `l = 1 .. m-1`,
//! which matches the `K ⊗ I_n` layout of the stage-mismatch system.

use serde::Serialize;

use crate::error::{EdmError, Result};
use crate::games::Game;

/// Tolerance on the unit sum for states built from user input.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Tolerance on the unit sum for states produced by numerical integration.
pub const DRIFT_TOL: f64 = 1e-6;

fn check_simplex(entries: &[f64], tol: f64) -> Result<()> {
    if entries.is_empty() {
        return Err(EdmError::InvalidState("empty state".into()));
    }
    if let Some((k, v)) = entries.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(EdmError::InvalidState(format!("entry {k} is not finite ({v})")));
    }
    if let Some((k, v)) = entries.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(EdmError::InvalidState(format!("entry {k} is negative ({v})")));
    }
    let sum: f64 = entries.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(EdmError::InvalidState(format!(
            "entries sum to {sum}, expected 1 within {tol:e}"
        )));
    }
    Ok(())
}

/// A point of the strategy simplex: proportions of agents per strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationState(Vec<f64>);

impl PopulationState {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(entries, SIMPLEX_TOL)
    }

    pub fn with_tolerance(entries: Vec<f64>, tol: f64) -> Result<Self> {
        check_simplex(&entries, tol)?;
        Ok(Self(entries))
    }

    /// The pure state in which every agent plays `strategy`.
    pub fn vertex(n: usize, strategy: usize) -> Result<Self> {
        if strategy >= n {
            return Err(EdmError::InvalidParameter(format!(
                "vertex {strategy} out of range for n = {n}"
            )));
        }
        let mut v = vec![0.0; n];
        v[strategy] = 1.0;
        Ok(Self(v))
    }

    pub fn barycenter(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(EdmError::InvalidState("empty state".into()));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// A point of the extended simplex: proportions per (strategy, sub-strategy stage).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtendedState {
    n: usize,
    m: usize,
    entries: Vec<f64>,
}

impl ExtendedState {
    pub fn new(n: usize, m: usize, entries: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(n, m, entries, SIMPLEX_TOL)
    }

    pub fn with_tolerance(n: usize, m: usize, entries: Vec<f64>, tol: f64) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(EdmError::InvalidParameter(format!(
                "extended state needs n >= 1 and m >= 1 (got n = {n}, m = {m})"
            )));
        }
        if entries.len() != n * m {
            return Err(EdmError::DimensionMismatch {
                expected: n * m,
                found: entries.len(),
            });
        }
        check_simplex(&entries, tol)?;
        Ok(Self { n, m, entries })
    }

    /// Builds a state from `n` rows of `m` stage proportions.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(EdmError::DimensionMismatch {
                expected: m,
                found: bad.len(),
            });
        }
        Self::new(n, m, rows.concat())
    }

    /// Accepts a raw integrator state: entries above `-clip_floor` are clipped to
    /// zero, the unit sum is checked at `DRIFT_TOL` and the result renormalized.
    pub fn from_integrator(n: usize, m: usize, raw: &[f64], clip_floor: f64) -> Result<Self> {
        if raw.len() != n * m {
            return Err(EdmError::DimensionMismatch {
                expected: n * m,
                found: raw.len(),
            });
        }
        let sum: f64 = raw.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > DRIFT_TOL {
            return Err(EdmError::InvalidState(format!(
                "integrated state drifted off the simplex (sum = {sum})"
            )));
        }
        let mut entries = Vec::with_capacity(raw.len());
        for (k, &v) in raw.iter().enumerate() {
            if v < -clip_floor {
                return Err(EdmError::InvalidState(format!(
                    "integrated entry {k} = {v} is below -{clip_floor:e}"
                )));
            }
            entries.push(v.max(0.0));
        }
        let total: f64 = entries.iter().sum();
        entries.iter_mut().for_each(|v| *v /= total);
        Self::with_tolerance(n, m, entries, DRIFT_TOL)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, strategy: usize, stage: usize) -> f64 {
        self.entries[strategy * self.m + stage]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    /// Stage proportions of one strategy.
    pub fn row(&self, strategy: usize) -> &[f64] {
        &self.entries[strategy * self.m..(strategy + 1) * self.m]
    }
}

/// Payoffs `F(x̄)` of the `n` strategies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayoffVector(Vec<f64>);

impl PayoffVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(k) = entries.iter().position(|v| !v.is_finite()) {
            return Err(EdmError::NonFinitePayoff { strategy: k });
        }
        Ok(Self(entries))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Stage mismatches `(E_l - E_m) x` for `l = 1 .. m-1`, stacked stage-major.
/// Empty when `m = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeState {
    n: usize,
    entries: Vec<f64>,
}

impl TildeState {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block_count(&self) -> usize {
        self.entries.len().checked_div(self.n).unwrap_or(0)
    }

    /// Block `l` (zero-based, `l < m - 1`).
    pub fn block(&self, l: usize) -> &[f64] {
        &self.entries[l * self.n..(l + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm_squared(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }
}

pub fn aggregate(x: &ExtendedState) -> PopulationState {
    PopulationState(aggregate_raw(x.as_slice(), x.n(), x.m()))
}

pub(crate) fn aggregate_raw(x: &[f64], n: usize, m: usize) -> Vec<f64> {
    (0..n).map(|i| x[i * m..(i + 1) * m].iter().sum()).collect()
}

/// Spreads every strategy's mass evenly over its `m` stages.
pub fn uniform_extension(xbar: &PopulationState, m: usize) -> Result<ExtendedState> {
    if m == 0 {
        return Err(EdmError::InvalidOrder(0));
    }
    let n = xbar.len();
    let entries = xbar
        .as_slice()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v / m as f64, m))
        .collect();
    Ok(ExtendedState { n, m, entries })
}

pub fn tilde(x: &ExtendedState) -> TildeState {
    TildeState {
        n: x.n(),
        entries: tilde_raw(x.as_slice(), x.n(), x.m()),
    }
}

pub(crate) fn tilde_raw(x: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * m.saturating_sub(1));
    for l in 0..m.saturating_sub(1) {
        for i in 0..n {
            out.push(x[i * m + l] - x[i * m + m - 1]);
        }
    }
    out
}

/// `Σ_i x̄_i (max_j F_j(x̄) - F_i(x̄))`; zero exactly on the Nash set.
pub fn ne_residual(game: &dyn Game, xbar: &PopulationState) -> Result<f64> {
    if game.dim() != xbar.len() {
        return Err(EdmError::DimensionMismatch {
            expected: game.dim(),
            found: xbar.len(),
        });
    }
    let p = PayoffVector::new(game.payoff(xbar.as_slice()))?;
    Ok(nash_gap(xbar.as_slice(), p.as_slice()))
}

pub(crate) fn nash_gap(xbar: &[f64], p: &[f64]) -> f64 {
    let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    xbar.iter()
        .zip(p)
        .map(|(&x, &pi)| x * (best - pi))
        .sum::<f64>()
        .max(0.0)
}

/// Nash gap of the aggregate plus the L1 distance to the equal-stage split;
/// zero exactly on the extended Nash set.
pub fn ene_residual(game: &dyn Game, x: &ExtendedState) -> Result<f64> {
    let xbar = aggregate(x);
    let gap = ne_residual(game, &xbar)?;
    Ok(gap + stage_imbalance(x.as_slice(), xbar.as_slice(), x.m()))
}

pub(crate) fn stage_imbalance(x: &[f64], xbar: &[f64], m: usize) -> f64 {
    x.iter()
        .enumerate()
        .map(|(k, &v)| (v - xbar[k / m] / m as f64).abs())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::linear_game;
    use nalgebra::DMatrix;

    fn rps() -> crate::games::LinearGame {
        linear_game(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, -2.0, 3.0, 3.0, 0.0, -2.0, -2.0, 3.0, 0.0],
        ))
        .unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let x = ExtendedState::from_rows(&[vec![0.25, 0.25], vec![0.25, 0.25]]).unwrap();
        assert_eq!(aggregate(&x).as_slice(), &[0.5, 0.5]);

        let x = ExtendedState::from_rows(&[
            vec![0.0, 0.0, 0.2],
            vec![0.2, 0.0, 0.0],
            vec![0.6, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(aggregate(&x).as_slice(), &[0.2, 0.2, 0.6]);

        let x = ExtendedState::from_rows(&[vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
        assert!((aggregate(&x).as_slice()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_extension_examples() {
        let third = 1.0 / 3.0;
        let x = uniform_extension(&PopulationState::new(vec![third; 3]).unwrap(), 4).unwrap();
        assert!(x.as_slice().iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-16));

        let xbar = PopulationState::with_tolerance(vec![0.349, 0.513, 0.137], 2e-3).unwrap();
        let x = uniform_extension(&xbar, 3).unwrap();
        for i in 0..3 {
            for l in 0..3 {
                assert_eq!(x.get(i, l), xbar.as_slice()[i] / 3.0);
            }
        }

        let x = uniform_extension(&PopulationState::vertex(2, 0).unwrap(), 2).unwrap();
        assert_eq!(x.as_slice(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn tilde_examples() {
        let x = ExtendedState::from_rows(&[vec![0.7, 0.3]]).unwrap();
        let t = tilde(&x);
        assert_eq!(t.block_count(), 1);
        assert!((t.block(0)[0] - 0.4).abs() < 1e-15);

        let x = ExtendedState::from_rows(&[vec![0.2, 0.1, 0.0], vec![0.3, 0.2, 0.2]]).unwrap();
        let t = tilde(&x);
        assert_eq!(t.block(0), &[0.2, 0.3 - 0.2]);
        assert_eq!(t.block(1), &[0.1, 0.0]);

        let x = uniform_extension(&PopulationState::new(vec![0.2, 0.5, 0.3]).unwrap(), 5).unwrap();
        assert!(tilde(&x).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tilde_is_empty_for_single_stage() {
        let x = ExtendedState::from_rows(&[vec![0.4], vec![0.6]]).unwrap();
        let t = tilde(&x);
        assert!(t.is_empty());
        assert_eq!(t.norm_squared(), 0.0);
    }

    #[test]
    fn ne_residual_examples() {
        let g = rps();
        let center = PopulationState::barycenter(3).unwrap();
        assert!(ne_residual(&g, &center).unwrap().abs() < 1e-15);
        let e1 = PopulationState::vertex(3, 0).unwrap();
        assert_eq!(ne_residual(&g, &e1).unwrap(), 3.0);
        // pure coordination: each vertex is its own unique best reply
        let coord = linear_game(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(ne_residual(&coord, &e1).unwrap(), 0.0);
    }

    #[test]
    fn ene_residual_examples() {
        let g = rps();
        let x = uniform_extension(&PopulationState::barycenter(3).unwrap(), 4).unwrap();
        assert!(ene_residual(&g, &x).unwrap() < 1e-15);

        let x = uniform_extension(&PopulationState::vertex(3, 0).unwrap(), 4).unwrap();
        assert_eq!(ene_residual(&g, &x).unwrap(), 3.0);

        let mut entries = vec![0.0; 12];
        entries[0] = 1.0;
        let x = ExtendedState::new(3, 4, entries).unwrap();
        assert!((ene_residual(&g, &x).unwrap() - 4.5).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_states() {
        assert!(PopulationState::new(vec![0.5, 0.6]).is_err());
        assert!(PopulationState::new(vec![1.1, -0.1]).is_err());
        assert!(PopulationState::new(vec![]).is_err());
        assert!(ExtendedState::new(2, 2, vec![0.5, 0.5, 0.0]).is_err());
        assert!(ExtendedState::new(1, 2, vec![f64::NAN, 1.0]).is_err());
        assert!(ExtendedState::from_rows(&[vec![0.5], vec![0.25, 0.25]]).is_err());
    }

    #[test]
    fn integrator_states_are_clipped_and_renormalized() {
        let x = ExtendedState::from_integrator(1, 3, &[0.5, 0.5 + 1e-8, -1e-10], 1e-9).unwrap();
        assert_eq!(x.get(0, 2), 0.0);
        assert!((x.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(ExtendedState::from_integrator(1, 2, &[0.5, 0.51], 1e-9).is_err());
        assert!(ExtendedState::from_integrator(1, 2, &[1.0 + 1e-8, -1e-8], 1e-9).is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn simplex_point(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    fn extended_point() -> impl Strategy<Value = ExtendedState> {
        (1usize..5, 1usize..6).prop_flat_map(|(n, m)| {
            simplex_point(n * m).prop_map(move |v| ExtendedState::new(n, m, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn aggregate_inverts_uniform_extension(v in simplex_point(4), m in 1usize..8) {
            let xbar = PopulationState::new(v).unwrap();
            let back = aggregate(&uniform_extension(&xbar, m).unwrap());
            for (a, b) in back.as_slice().iter().zip(xbar.as_slice()) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }

        #[test]
        fn tilde_vanishes_on_uniform_extensions(v in simplex_point(3), m in 1usize..8) {
            let x = uniform_extension(&PopulationState::new(v).unwrap(), m).unwrap();
            prop_assert!(tilde(&x).as_slice().iter().all(|&d| d == 0.0));
        }

        #[test]
        fn tilde_entries_are_bounded(x in extended_point()) {
            let t = tilde(&x);
            prop_assert_eq!(t.block_count(), x.m() - 1);
            prop_assert!(t.as_slice().iter().all(|d| d.abs() <= 1.0));
        }

        #[test]
        fn aggregate_stays_on_simplex(x in extended_point()) {
            let s: f64 = aggregate(&x).as_slice().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
