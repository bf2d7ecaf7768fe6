use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    alpha_max, build_system_matrices, compute_c, lambda_lower_bound, sigma_bar_bisection, sigma_bar_closed_form,
    solve_lyapunov, CMethod,
};
use crate::dynamics::ErlangParams;
use crate::error::{EdmError, Result};
use crate::games::{contractivity_margins, is_potential, Game, DEFAULT_GAME_SAMPLES, DEFAULT_POTENTIAL_TOL};
use crate::protocols::RevisionProtocol;

/// How `σ̄` enters the threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMethod {
    /// Closed form for `m ≤ 4`, bisection beyond.
    #[default]
    Auto,
    ClosedForm,
    Bisection,
}

/// User-supplied replacements for the computed constants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self.gamma_lower.is_none() && self.gamma_upper.is_none() && self.c.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    /// Weight of the quadratic term; `None` picks `alpha_max / 2`.
    pub alpha: Option<f64>,
    pub overrides: Overrides,
    pub sigma: SigmaMethod,
    pub samples: usize,
    pub bisection_tol: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            alpha: None,
            overrides: Overrides::default(),
            sigma: SigmaMethod::Auto,
            samples: DEFAULT_GAME_SAMPLES,
            bisection_tol: 1e-9,
        }
    }
}

/// Constants as computed from the game and protocol, before overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiteralValues {
    pub gamma_lower: f64,
    pub gamma_upper: f64,
    pub c: f64,
    pub c_method: CMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub gamma_lower: f64,
    pub gamma_upper: f64,
    pub c: f64,
    pub c_method: CMethod,
    pub sigma_bar: f64,
    pub lambda_lower: f64,
    /// `+∞` (serialized as `null`) when `m = 1`.
    pub alpha_max: f64,
    pub m: usize,
    pub n: usize,
    pub lambda: f64,
    pub certified: bool,
    pub alpha: f64,
    pub sigma_method: SigmaMethod,
    /// H∞ norm from the Hamiltonian bisection, whatever `sigma_method` is.
    pub sigma_bar_bisection: f64,
    pub is_potential: bool,
    pub impartial: bool,
    pub literal: LiteralValues,
    pub overrides_applied: bool,
    /// Rows of the Lyapunov matrix `M`.
    pub lyapunov_matrix: Vec<Vec<f64>>,
}

impl StabilityReport {
    pub fn lyapunov_matrix(&self) -> DMatrix<f64> {
        let d = self.lyapunov_matrix.len();
        DMatrix::from_fn(d, d, |r, c| self.lyapunov_matrix[r][c])
    }
}

pub fn stability_report(
    game: &dyn Game,
    protocol: &RevisionProtocol,
    params: ErlangParams,
    options: &AnalysisOptions,
) -> Result<StabilityReport> {
    let ErlangParams { n, m, lambda } = params;
    if game.dim() != n || protocol.n() != n {
        return Err(EdmError::DimensionMismatch {
            expected: n,
            found: if game.dim() != n { game.dim() } else { protocol.n() },
        });
    }
    let margins = contractivity_margins(game, options.samples)?;
    let switching = compute_c(game, protocol, options.samples);
    let literal = LiteralValues {
        gamma_lower: margins.gamma_lower,
        gamma_upper: margins.gamma_upper,
        c: switching.c,
        c_method: switching.method,
    };
    let ov = options.overrides;
    let gamma_lower = ov.gamma_lower.unwrap_or(literal.gamma_lower);
    let gamma_upper = ov.gamma_upper.unwrap_or(literal.gamma_upper);
    let (c, c_method) = match ov.c {
        Some(c) => (c, CMethod::Override),
        None => (literal.c, literal.c_method),
    };
    if !(gamma_lower > 0.0) {
        return Err(EdmError::NonContractive { gamma_lower });
    }

    let sigma_bar_bisection = if m >= 2 {
        sigma_bar_bisection(n, m, options.bisection_tol)?
    } else {
        0.0
    };
    let sigma_bar = match options.sigma {
        SigmaMethod::Auto if m <= 4 => sigma_bar_closed_form(m)?,
        SigmaMethod::ClosedForm => sigma_bar_closed_form(m)?,
        SigmaMethod::Auto | SigmaMethod::Bisection => sigma_bar_bisection,
    };
    let lambda_lower = lambda_lower_bound(gamma_upper, gamma_lower, c, sigma_bar, n, m)?;

    let sys = build_system_matrices(n, m)?;
    let lyap = solve_lyapunov(&sys)?;
    let alpha_max = alpha_max(m, gamma_lower, &lyap, sys.b())?;
    let alpha = match options.alpha {
        Some(a) if a > 0.0 && a < alpha_max => a,
        Some(a) => {
            return Err(EdmError::InvalidParameter(format!(
                "alpha = {a} is outside (0, {alpha_max})"
            )))
        }
        None if alpha_max.is_finite() => 0.5 * alpha_max,
        None => 1.0,
    };
    let impartial = protocol.is_impartial();
    Ok(StabilityReport {
        gamma_lower,
        gamma_upper,
        c,
        c_method,
        sigma_bar,
        lambda_lower,
        alpha_max,
        m,
        n,
        lambda,
        certified: lambda > lambda_lower && gamma_lower > 0.0 && impartial,
        alpha,
        sigma_method: options.sigma,
        sigma_bar_bisection,
        is_potential: is_potential(game, DEFAULT_POTENTIAL_TOL),
        impartial,
        literal,
        overrides_applied: !ov.is_empty(),
        lyapunov_matrix: lyap.row_iter().map(|r| r.iter().copied().collect()).collect(),
    })
}
