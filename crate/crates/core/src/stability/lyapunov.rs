//! The Lyapunov function `L_α` and the split of its time derivative into a
//! dissipative part `P` and a coupling part `Q`, `dL/dt = −P + Q`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::SystemMatrices;
use crate::csv;
use crate::dynamics::{rk4_step, ErlangEdm, ErlangParams, Trajectory};
use crate::error::{EdmError, Result};
use crate::games::Game;
use crate::protocols::{flow_generator, RevisionProtocol};
use crate::simplex::{aggregate_raw, tilde_raw, ExtendedState, PayoffVector};

fn check_lyap(lyap: &DMatrix<f64>, dim: usize) -> Result<()> {
    if lyap.nrows() != dim || lyap.ncols() != dim {
        return Err(EdmError::DimensionMismatch {
            expected: dim,
            found: lyap.nrows(),
        });
    }
    Ok(())
}

/// `Σ_i x̄_i Σ_j Ψ_j(p_j − p_i)`.
fn payoff_term(protocol: &RevisionProtocol, xbar: &[f64], p: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for (i, &xi) in xbar.iter().enumerate() {
        for (j, &pj) in p.iter().enumerate() {
            acc += xi * protocol.antiderivative(j, pj - p[i])?;
        }
    }
    Ok(acc)
}

fn value_raw(
    x: &[f64],
    n: usize,
    m: usize,
    p: &[f64],
    alpha: f64,
    protocol: &RevisionProtocol,
    lyap: &DMatrix<f64>,
) -> Result<f64> {
    let xbar = aggregate_raw(x, n, m);
    let xt = DVector::from_vec(tilde_raw(x, n, m));
    check_lyap(lyap, xt.len())?;
    Ok(payoff_term(protocol, &xbar, p)? + alpha * xt.dot(&(lyap * &xt)))
}

/// `L_α = Σ_i x̄_i Σ_j Ψ_j(p_j − p_i) + α x̃ᵀ M x̃`.
pub fn lyapunov_value(
    x: &ExtendedState,
    p: &PayoffVector,
    alpha: f64,
    protocol: &RevisionProtocol,
    lyap: &DMatrix<f64>,
) -> Result<f64> {
    if !protocol.is_impartial() {
        return Err(EdmError::NotImpartial);
    }
    if p.len() != x.n() {
        return Err(EdmError::DimensionMismatch {
            expected: x.n(),
            found: p.len(),
        });
    }
    value_raw(x.as_slice(), x.n(), x.m(), p.as_slice(), alpha, protocol, lyap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PqValues {
    pub p: f64,
    pub q: f64,
}

/// `P = αλ‖x̃‖² + Σ_{i,j} φ_i(p_i − p_j) x_{j,m} Σ_k [Ψ_k(p_k − p_j) − Ψ_k(p_k − p_i)]`
/// and `Q = m ẋ̄ᵀṗ + Σ_l ṗᵀ G x̃_l + 2α x̃ᵀ M B ẋ̄`, where `G` is the flow
/// generator and `ṗ = DF(x̄) ẋ̄`. `P ≥ 0` on contractive games.
pub fn pq_decomposition(
    x: &ExtendedState,
    game: &dyn Game,
    protocol: &RevisionProtocol,
    params: ErlangParams,
    alpha: f64,
    lyap: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<PqValues> {
    let edm = ErlangEdm::new(game, protocol, params)?;
    if x.n() != params.n || x.m() != params.m {
        return Err(EdmError::DimensionMismatch {
            expected: params.dim(),
            found: x.as_slice().len(),
        });
    }
    pq_raw(&edm, x.as_slice(), alpha, lyap, b)
}

fn pq_raw(edm: &ErlangEdm<'_>, x: &[f64], alpha: f64, lyap: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<PqValues> {
    let ErlangParams { n, m, lambda } = edm.params();
    let protocol = edm.protocol();
    if !protocol.is_impartial() {
        return Err(EdmError::NotImpartial);
    }
    let xbar = aggregate_raw(x, n, m);
    let xt = DVector::from_vec(tilde_raw(x, n, m));
    check_lyap(lyap, xt.len())?;
    let p = edm.payoff(&xbar)?;
    let xbar_dot = DVector::from_vec(edm.aggregate_velocity(x)?);
    let p_dot = edm.game().jacobian(&xbar) * &xbar_dot;

    let psi_sums = (0..n)
        .map(|i| (0..n).map(|k| protocol.antiderivative(k, p[k] - p[i])).sum::<Result<f64>>())
        .collect::<Result<Vec<f64>>>()?;
    let mut p_val = alpha * lambda * xt.norm_squared();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let rate = protocol.impartial_rate(i, p[i] - p[j])?;
                p_val += rate * x[j * m + m - 1] * (psi_sums[j] - psi_sums[i]);
            }
        }
    }

    let mut q_val = m as f64 * xbar_dot.dot(&p_dot);
    if m > 1 {
        let g = flow_generator(protocol, &p)?;
        let gt_p_dot = g.transpose() * &p_dot;
        for l in 0..m - 1 {
            q_val += gt_p_dot.dot(&xt.rows(l * n, n));
        }
        q_val += 2.0 * alpha * xt.dot(&(lyap * (b * &xbar_dot)));
    }
    Ok(PqValues { p: p_val, q: q_val })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovSample {
    pub t: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    /// Central difference of `L` over one RK4 step of size `h` each way.
    #[serde(rename = "dL_dt_fd")]
    pub dl_dt_fd: f64,
}

impl LyapunovSample {
    /// `|dL/dt − (−P + Q)|` relative to `1 + |Q|`.
    pub fn identity_error(&self) -> f64 {
        (self.dl_dt_fd - (self.q - self.p)).abs() / (1.0 + self.q.abs())
    }

    pub fn write_csv<W: Write>(samples: &[LyapunovSample], mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,L,P,Q,dL_dt_fd")?;
        for s in samples {
            csv::write_row(&mut w, [s.t, s.l, s.p, s.q, s.dl_dt_fd])?;
        }
        Ok(())
    }
}

/// `L`, `P`, `Q` and a finite-difference `dL/dt` at every trajectory sample.
pub fn lyapunov_diagnostics(
    edm: &ErlangEdm<'_>,
    traj: &Trajectory,
    alpha: f64,
    lyap: &DMatrix<f64>,
    b: &DMatrix<f64>,
    h: f64,
) -> Result<Vec<LyapunovSample>> {
    if !edm.protocol().is_impartial() {
        return Err(EdmError::NotImpartial);
    }
    let ErlangParams { n, m, .. } = edm.params();
    let value_at = |x: &[f64]| -> Result<f64> {
        let p = edm.payoff(&aggregate_raw(x, n, m))?;
        value_raw(x, n, m, &p, alpha, edm.protocol(), lyap)
    };
    traj.samples
        .par_iter()
        .map(|s| {
            let x = s.state.as_slice();
            let mut field = |y: &[f64], out: &mut [f64]| edm.field(y, out);
            let forward = rk4_step(&mut field, x, h)?;
            let backward = rk4_step(&mut field, x, -h)?;
            let pq = pq_raw(edm, x, alpha, lyap, b)?;
            Ok(LyapunovSample {
                t: s.t,
                l: value_at(x)?,
                p: pq.p,
                q: pq.q,
                dl_dt_fd: (value_at(&forward)? - value_at(&backward)?) / (2.0 * h),
            })
        })
        .collect()
}

/// Right-hand side of the bound on `∫₀^t Q`:
/// `(α + 2 γ̄ n c²) ‖e^{λAt} x̃(0)‖²`.
pub fn q_integral_bound(
    sys: &SystemMatrices,
    lambda: f64,
    alpha: f64,
    gamma_upper: f64,
    c: f64,
    tilde0: &[f64],
    t: f64,
) -> Result<f64> {
    if tilde0.len() != sys.dim() {
        return Err(EdmError::DimensionMismatch {
            expected: sys.dim(),
            found: tilde0.len(),
        });
    }
    if sys.dim() == 0 {
        return Ok(0.0);
    }
    let decayed = (sys.a() * (lambda * t)).exp() * DVector::from_column_slice(tilde0);
    Ok((alpha + 2.0 * gamma_upper * sys.n() as f64 * c * c) * decayed.norm_squared())
}
