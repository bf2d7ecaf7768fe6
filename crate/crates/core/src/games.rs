//! Payoff mechanisms, their Jacobians and potentials, and contractivity margins.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{EdmError, Result};

/// Samples used by the sampling-based game diagnostics unless overridden.
pub const DEFAULT_GAME_SAMPLES: usize = 10_000;
/// Symmetry tolerance for potential detection.
pub const DEFAULT_POTENTIAL_TOL: f64 = 1e-8;
/// Seed for the Dirichlet sampler behind the game diagnostics.
pub const DIAGNOSTIC_SEED: u64 = 0x005e_ed0f_9a3e;

/// A population game `F: Δ → ℝⁿ`.
///
/// Evaluators take raw slices so they can run inside the integrator on states
/// that carry solver drift; validated entry points live in [`crate::simplex`].
pub trait Game: Send + Sync {
    fn dim(&self) -> usize;

    fn payoff(&self, state: &[f64]) -> Vec<f64>;

    fn jacobian(&self, state: &[f64]) -> DMatrix<f64>;

    /// Value of the potential `f` with `∇f = F`, when the game has one.
    fn potential(&self, state: &[f64]) -> Option<f64>;

    /// The payoff matrix when `F(x) = W x`.
    fn linear_matrix(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// `F(x) = W x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGame {
    matrix: DMatrix<f64>,
    symmetric: bool,
}

impl LinearGame {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl Game for LinearGame {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn payoff(&self, state: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.matrix[(i, j)] * state[j]).sum())
            .collect()
    }

    fn jacobian(&self, _state: &[f64]) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn potential(&self, state: &[f64]) -> Option<f64> {
        if !self.symmetric {
            return None;
        }
        let p = self.payoff(state);
        Some(0.5 * state.iter().zip(&p).map(|(x, y)| x * y).sum::<f64>())
    }

    fn linear_matrix(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }
}

pub fn linear_game(matrix: DMatrix<f64>) -> Result<LinearGame> {
    if matrix.nrows() != matrix.ncols() {
        return Err(EdmError::DimensionMismatch {
            expected: matrix.nrows(),
            found: matrix.ncols(),
        });
    }
    if matrix.nrows() == 0 {
        return Err(EdmError::InvalidParameter("payoff matrix is empty".into()));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(EdmError::InvalidParameter("payoff matrix has non-finite entries".into()));
    }
    let scale = matrix.amax().max(1.0);
    let symmetric = (&matrix - matrix.transpose()).amax() <= 1e-12 * scale;
    Ok(LinearGame { matrix, symmetric })
}

/// Congestion game over a link network: route payoffs are minus the summed
/// link costs, with link `l` costing `c_l` times the mass of routes using it.
///
/// Routes list 1-based link indices. The result is the symmetric linear game
/// `F(x) = -W' x` with `W'_{rs} = Σ_{l ∈ r ∩ s} c_l`.
pub fn congestion_game(link_costs: &[f64], routes: &[Vec<usize>]) -> Result<LinearGame> {
    if routes.is_empty() {
        return Err(EdmError::EmptyRoutes);
    }
    for (l, &c) in link_costs.iter().enumerate() {
        if !(c > 0.0) || !c.is_finite() {
            return Err(EdmError::NonpositiveCost { link: l + 1, cost: c });
        }
    }
    let mut usage = vec![vec![false; link_costs.len()]; routes.len()];
    for (r, route) in routes.iter().enumerate() {
        if route.is_empty() {
            return Err(EdmError::EmptyRoute { route: r + 1 });
        }
        for &link in route {
            if link == 0 || link > link_costs.len() {
                return Err(EdmError::UnknownLink { route: r + 1, link });
            }
            usage[r][link - 1] = true;
        }
    }
    let n = routes.len();
    let shared = DMatrix::from_fn(n, n, |r, s| {
        link_costs
            .iter()
            .enumerate()
            .filter(|&(l, _)| usage[r][l] && usage[s][l])
            .map(|(_, c)| c)
            .sum::<f64>()
    });
    linear_game(-shared)
}

type PayoffFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type JacobianFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
type PotentialFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A game given by closures, for payoffs that are not linear in the state.
#[derive(Clone)]
pub struct FnGame {
    n: usize,
    payoff: Arc<PayoffFn>,
    jacobian: Arc<JacobianFn>,
    potential: Option<Arc<PotentialFn>>,
}

impl fmt::Debug for FnGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnGame")
            .field("n", &self.n)
            .field("has_potential", &self.potential.is_some())
            .finish()
    }
}

impl FnGame {
    pub fn new(
        n: usize,
        payoff: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            payoff: Arc::new(payoff),
            jacobian: Arc::new(jacobian),
            potential: None,
        }
    }

    pub fn with_potential(mut self, potential: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.potential = Some(Arc::new(potential));
        self
    }
}

impl Game for FnGame {
    fn dim(&self) -> usize {
        self.n
    }

    fn payoff(&self, state: &[f64]) -> Vec<f64> {
        (self.payoff)(state)
    }

    fn jacobian(&self, state: &[f64]) -> DMatrix<f64> {
        (self.jacobian)(state)
    }

    fn potential(&self, state: &[f64]) -> Option<f64> {
        self.potential.as_ref().map(|f| f(state))
    }
}

/// Uniform (Dirichlet(1, …, 1)) draw from the simplex.
pub fn sample_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Orthonormal basis of the tangent space `{η : Σ η_i = 0}` as the columns of
/// an `n × (n-1)` matrix (Helmert contrasts).
pub fn tangent_basis(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n.saturating_sub(1));
    for k in 1..n {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            q[(i, k - 1)] = 1.0 / norm;
        }
        q[(k, k - 1)] = -(k as f64) / norm;
    }
    q
}

/// Bounds of `-ηᵀ DF(ξ) η` over unit tangent vectors η and states ξ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractivityMargins {
    pub gamma_lower: f64,
    pub gamma_upper: f64,
}

impl ContractivityMargins {
    pub fn is_strictly_contractive(&self) -> bool {
        self.gamma_lower > 0.0
    }
}

/// Extreme eigenvalues of `-Qᵀ sym(J) Q`.
fn projected_extremes(jacobian: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<(f64, f64)> {
    let sym = (jacobian + jacobian.transpose()) * -0.5;
    let projected = basis.transpose() * sym * basis;
    let eig = SymmetricEigen::try_new(projected, 1e-15, 10_000)
        .ok_or_else(|| EdmError::NumericalFailure("symmetric eigen-solve did not converge".into()))?;
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Contractivity margins with respect to unit-Euclidean tangent vectors.
///
/// Linear games are handled exactly; otherwise the projected eigenvalues are
/// extremized over `samples` Dirichlet draws plus the simplex vertices.
pub fn contractivity_margins(game: &dyn Game, samples: usize) -> Result<ContractivityMargins> {
    let n = game.dim();
    if n < 2 {
        return Err(EdmError::InvalidParameter(
            "contractivity margins need at least two strategies".into(),
        ));
    }
    let basis = tangent_basis(n);
    if let Some(w) = game.linear_matrix() {
        let (lo, hi) = projected_extremes(w, &basis)?;
        return Ok(ContractivityMargins {
            gamma_lower: lo,
            gamma_upper: hi,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(DIAGNOSTIC_SEED);
    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    let vertices = (0..n).map(|i| {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    });
    let points: Vec<Vec<f64>> = vertices
        .chain((0..samples).map(|_| sample_simplex(n, &mut rng)))
        .collect();
    for xi in points {
        let (lo, hi) = projected_extremes(&game.jacobian(&xi), &basis)?;
        lower = lower.min(lo);
        upper = upper.max(hi);
    }
    Ok(ContractivityMargins {
        gamma_lower: lower,
        gamma_upper: upper,
    })
}

/// Whether sampled Jacobians are symmetric within `tol`.
pub fn is_potential(game: &dyn Game, tol: f64) -> bool {
    is_potential_sampled(game, tol, 200)
}

pub fn is_potential_sampled(game: &dyn Game, tol: f64, samples: usize) -> bool {
    let n = game.dim();
    let asym = |j: DMatrix<f64>| (&j - j.transpose()).amax();
    if let Some(w) = game.linear_matrix() {
        return asym(w.clone()) <= tol;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(DIAGNOSTIC_SEED);
    (0..samples).all(|_| asym(game.jacobian(&sample_simplex(n, &mut rng))) <= tol)
}
