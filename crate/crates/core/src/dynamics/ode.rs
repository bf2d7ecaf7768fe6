//! Explicit Runge–Kutta integrators for autonomous systems `y' = f(y)`.
//!
//! Dormand–Prince 5(4) with the usual Hairer step-size controller, and
//! classical fixed-step RK4 for bitwise-reproducible runs.

use serde::Serialize;

use crate::error::{EdmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Dopri5 { rtol: f64, atol: f64 },
    Rk4 { step: f64 },
}

impl Method {
    pub fn dopri5() -> Self {
        Method::Dopri5 {
            rtol: 1e-7,
            atol: 1e-9,
        }
    }

    pub fn rk4() -> Self {
        Method::Rk4 { step: 1e-3 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Dopri5 { .. } => "dopri5",
            Method::Rk4 { .. } => "rk4",
        }
    }
}

/// Which accepted steps end up in the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    EveryStep,
    /// Samples at `t = k·dt`; the adaptive solver lands on each grid time.
    Grid(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub last_step: f64,
}

pub(crate) enum Flow {
    Continue,
    Stop,
}

// Dormand–Prince tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

fn axpy(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, v) in terms {
            acc += c * v[k];
        }
        *o = y[k] + h * acc;
    }
}

fn grid_targets(sampling: &Sampling, t_end: f64) -> Result<Option<f64>> {
    match *sampling {
        Sampling::EveryStep => Ok(None),
        Sampling::Grid(dt) if dt > 0.0 && dt.is_finite() => Ok(Some(dt.min(t_end))),
        Sampling::Grid(dt) => Err(EdmError::InvalidParameter(format!(
            "sample spacing must be positive (got {dt})"
        ))),
    }
}

/// Integrates from `t = 0` to `t_end`. `observe(t, y, is_sample)` runs at
/// `t = 0` and after every accepted step and may stop the run early.
pub(crate) fn integrate<F, O>(
    mut rhs: F,
    y0: &[f64],
    t_end: f64,
    method: Method,
    sampling: Sampling,
    max_steps: usize,
    mut observe: O,
) -> Result<StepStats>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64], bool) -> Result<Flow>,
{
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(EdmError::InvalidParameter(format!(
            "horizon must be positive (got {t_end})"
        )));
    }
    let grid = grid_targets(&sampling, t_end)?;
    if let Flow::Stop = observe(0.0, y0, true)? {
        return Ok(StepStats::default());
    }
    match method {
        Method::Dopri5 { rtol, atol } => {
            dopri5(&mut rhs, y0, t_end, rtol, atol, grid, max_steps, &mut observe)
        }
        Method::Rk4 { step } => rk4(&mut rhs, y0, t_end, step, grid, max_steps, &mut observe),
    }
}

#[allow(clippy::too_many_arguments)]
fn dopri5<F, O>(
    rhs: &mut F,
    y0: &[f64],
    t_end: f64,
    rtol: f64,
    atol: f64,
    grid: Option<f64>,
    max_steps: usize,
    observe: &mut O,
) -> Result<StepStats>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64], bool) -> Result<Flow>,
{
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(EdmError::InvalidParameter("tolerances must be positive".into()));
    }
    let dim = y0.len();
    let mut stats = StepStats::default();
    let mut y = y0.to_vec();
    let mut ynew = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];

    let scaled_norm = |v: &[f64], a: &[f64], b: &[f64]| -> f64 {
        let s: f64 = v
            .iter()
            .zip(a.iter().zip(b))
            .map(|(e, (ya, yb))| {
                let sc = atol + rtol * ya.abs().max(yb.abs());
                (e / sc).powi(2)
            })
            .sum();
        (s / dim.max(1) as f64).sqrt()
    };

    rhs(&y, &mut k1)?;
    stats.rhs_evals += 1;

    // Initial step guess (Hairer, Nørsett & Wanner, II.4).
    let mut h = {
        let d0 = scaled_norm(&y, &y, &y);
        let d1 = scaled_norm(&k1, &y, &y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        axpy(&mut tmp, &y, h0, &[(1.0, &k1)]);
        rhs(&tmp, &mut k2)?;
        stats.rhs_evals += 1;
        let diff: Vec<f64> = k2.iter().zip(&k1).map(|(a, b)| a - b).collect();
        let d2 = scaled_norm(&diff, &y, &y) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(t_end)
    };

    let mut t = 0.0;
    let mut next_grid = grid;
    let mut grid_index = 1usize;
    let mut last_rejected = false;

    while t < t_end {
        if stats.accepted + stats.rejected >= max_steps {
            return Err(EdmError::StepFailure { t, step: h });
        }
        let target = next_grid.map_or(t_end, |g| g.min(t_end));
        let mut landing = false;
        if t + h >= target - 1e-12 * target.max(1.0) {
            h = target - t;
            landing = true;
        }
        if h <= 1e-13 * t.max(1.0) {
            return Err(EdmError::StepFailure { t, step: h });
        }

        axpy(&mut tmp, &y, h, &[(A21, &k1)]);
        rhs(&tmp, &mut k2)?;
        axpy(&mut tmp, &y, h, &[(A31, &k1), (A32, &k2)]);
        rhs(&tmp, &mut k3)?;
        axpy(&mut tmp, &y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        rhs(&tmp, &mut k4)?;
        axpy(&mut tmp, &y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        rhs(&tmp, &mut k5)?;
        axpy(&mut tmp, &y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        rhs(&tmp, &mut k6)?;
        axpy(&mut ynew, &y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        rhs(&ynew, &mut k7)?;
        stats.rhs_evals += 6;

        for (k, e) in tmp.iter_mut().enumerate() {
            *e = h * (E1 * k1[k] + E3 * k3[k] + E4 * k4[k] + E5 * k5[k] + E6 * k6[k] + E7 * k7[k]);
        }
        let err = scaled_norm(&tmp, &y, &ynew);
        if !err.is_finite() {
            return Err(EdmError::StepFailure { t, step: h });
        }

        let fac_max = if last_rejected { 1.0 } else { FAC_MAX };
        let factor = if err == 0.0 {
            fac_max
        } else {
            (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, fac_max)
        };

        if err <= 1.0 {
            t = if landing { target } else { t + h };
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            stats.accepted += 1;
            stats.last_step = h;
            last_rejected = false;
            let on_grid = match next_grid {
                None => true,
                Some(_) if landing => {
                    grid_index += 1;
                    next_grid = grid.map(|dt| grid_index as f64 * dt);
                    true
                }
                Some(_) => false,
            };
            let is_sample = on_grid || t >= t_end;
            if let Flow::Stop = observe(t, &y, is_sample)? {
                break;
            }
            if !landing {
                h *= factor;
            } else {
                h = (h * factor).max(stats.last_step);
            }
        } else {
            stats.rejected += 1;
            last_rejected = true;
            h *= factor;
        }
    }
    Ok(stats)
}

fn rk4<F, O>(
    rhs: &mut F,
    y0: &[f64],
    t_end: f64,
    step: f64,
    grid: Option<f64>,
    max_steps: usize,
    observe: &mut O,
) -> Result<StepStats>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64], bool) -> Result<Flow>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(EdmError::InvalidParameter(format!("RK4 step must be positive (got {step})")));
    }
    let stride = match grid {
        None => 1,
        Some(dt) => {
            let ratio = dt / step;
            let stride = ratio.round();
            if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio {
                return Err(EdmError::InvalidParameter(format!(
                    "sample spacing {dt} is not a multiple of the RK4 step {step}"
                )));
            }
            stride as usize
        }
    };
    let steps = ((t_end / step) - 1e-9).ceil().max(1.0) as usize;
    if steps > max_steps {
        return Err(EdmError::StepFailure { t: 0.0, step });
    }
    let dim = y0.len();
    let mut stats = StepStats::default();
    let mut y = y0.to_vec();
    let mut tmp = vec![0.0; dim];
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut t = 0.0;
    for k in 1..=steps {
        let t_next = (k as f64 * step).min(t_end);
        let h = t_next - t;
        rhs(&y, &mut k1)?;
        axpy(&mut tmp, &y, 0.5 * h, &[(1.0, &k1)]);
        rhs(&tmp, &mut k2)?;
        axpy(&mut tmp, &y, 0.5 * h, &[(1.0, &k2)]);
        rhs(&tmp, &mut k3)?;
        axpy(&mut tmp, &y, h, &[(1.0, &k3)]);
        rhs(&tmp, &mut k4)?;
        for (i, v) in y.iter_mut().enumerate() {
            *v += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t = t_next;
        stats.accepted += 1;
        stats.rhs_evals += 4;
        stats.last_step = h;
        let is_sample = k % stride == 0 || k == steps;
        if let Flow::Stop = observe(t, &y, is_sample)? {
            break;
        }
    }
    Ok(stats)
}

/// One classical RK4 step of signed size `h`; used for local probes of a
/// trajectory, e.g. finite differences in time.
pub(crate) fn rk4_step<F>(rhs: &mut F, y: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let dim = y.len();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    rhs(y, &mut k1)?;
    axpy(&mut tmp, y, 0.5 * h, &[(1.0, &k1)]);
    rhs(&tmp, &mut k2)?;
    axpy(&mut tmp, y, 0.5 * h, &[(1.0, &k2)]);
    rhs(&tmp, &mut k3)?;
    axpy(&mut tmp, y, h, &[(1.0, &k3)]);
    rhs(&tmp, &mut k4)?;
    Ok((0..dim)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}
