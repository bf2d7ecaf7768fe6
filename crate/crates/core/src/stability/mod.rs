//! Constants and certificates for global attractivity of the extended Nash set.
//!
//! The stage-mismatch state `x̃` obeys `ẋ̃ = λ A x̃ + B ẋ̄` with
//! `A = K ⊗ I_n` and `B = e₁ ⊗ I_n`. Its H∞ gain `σ̄`, the maximal switching
//! rate `c` and the contractivity margins combine into the revision-rate
//! threshold `λ̲ = 2 c σ̄ (n γ̄ / ((m+1) γ̲))^{1/2}`.

mod lyapunov;
mod report;
mod switching;

use nalgebra::{Complex, DMatrix, SymmetricEigen};

pub use lyapunov::{
    lyapunov_diagnostics, lyapunov_value, pq_decomposition, q_integral_bound, LyapunovSample, PqValues,
};
pub use report::{stability_report, AnalysisOptions, LiteralValues, Overrides, SigmaMethod, StabilityReport};
pub use switching::{compute_c, CMethod, SwitchingBound};

use crate::error::{EdmError, Result};

const EIG_EPS: f64 = 1e-14;
const EIG_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    n: usize,
    m: usize,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl SystemMatrices {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// State dimension `n (m − 1)`; zero when `m = 1`.
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// The `(m−1) × (m−1)` stage-coupling block `K`.
pub fn stage_block(m: usize) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(EdmError::InvalidOrder(m));
    }
    let d = m - 1;
    let mut k = DMatrix::zeros(d, d);
    for r in 0..d {
        k[(r, r)] = -1.0;
        k[(r, d - 1)] = -1.0;
        if r > 0 {
            k[(r, r - 1)] = 1.0;
        }
    }
    if d > 0 {
        k[(d - 1, d - 1)] = -2.0;
    }
    Ok(k)
}

pub fn build_system_matrices(n: usize, m: usize) -> Result<SystemMatrices> {
    if n == 0 {
        return Err(EdmError::InvalidParameter("n must be at least 1".into()));
    }
    let k = stage_block(m)?;
    let d = m - 1;
    let a = k.kronecker(&DMatrix::<f64>::identity(n, n));
    let mut b = DMatrix::zeros(n * d, n);
    if d > 0 {
        b.view_mut((0, 0), (n, n)).fill_with_identity();
    }
    let sys = SystemMatrices { n, m, a, b };
    if d > 0 {
        let spectral_abscissa = eigenvalues(&sys.a)?
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if spectral_abscissa >= 0.0 {
            return Err(EdmError::NumericalFailure(format!(
                "stage matrix is not Hurwitz (spectral abscissa {spectral_abscissa})"
            )));
        }
    }
    Ok(sys)
}

pub(crate) fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let schur = a
        .clone()
        .try_schur(EIG_EPS, EIG_MAX_ITER)
        .ok_or_else(|| EdmError::NumericalFailure("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

fn spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let svd = a
        .clone()
        .try_svd(false, false, EIG_EPS, EIG_MAX_ITER)
        .ok_or_else(|| EdmError::NumericalFailure("SVD did not converge".into()))?;
    Ok(svd.singular_values.max())
}

/// `((2m² − 3m + 1) / (6m))^{1/2}`, the DC gain of the stage-mismatch system.
pub fn sigma_bar_closed_form(m: usize) -> Result<f64> {
    if m == 0 {
        return Err(EdmError::InvalidOrder(m));
    }
    if m > 4 {
        return Err(EdmError::OutOfRange {
            what: "m",
            value: m as f64,
            range: "1..=4",
        });
    }
    let m = m as f64;
    Ok(((2.0 * m * m - 3.0 * m + 1.0) / (6.0 * m)).sqrt())
}

/// Largest singular value of `(jωI − A)⁻¹ B`.
pub fn frequency_gain(sys: &SystemMatrices, omega: f64) -> Result<f64> {
    let d = sys.dim();
    if d == 0 {
        return Ok(0.0);
    }
    let jw_minus_a = DMatrix::from_fn(d, d, |r, c| {
        let re = -sys.a[(r, c)];
        Complex::new(re, if r == c { omega } else { 0.0 })
    });
    let b = sys.b.map(|v| Complex::new(v, 0.0));
    let g = jw_minus_a
        .lu()
        .solve(&b)
        .ok_or_else(|| EdmError::NumericalFailure(format!("jωI − A is singular at ω = {omega}")))?;
    let svd = g
        .try_svd(false, false, EIG_EPS, EIG_MAX_ITER)
        .ok_or_else(|| EdmError::NumericalFailure("SVD did not converge".into()))?;
    Ok(svd.singular_values.max())
}

/// Imaginary-axis eigenvalues `jω` (ω ≥ 0) of the Hamiltonian
/// `[[A, BBᵀ/γ²], [−I, −Aᵀ]]`.
fn imaginary_frequencies(sys: &SystemMatrices, gamma: f64) -> Result<Vec<f64>> {
    let d = sys.dim();
    let mut h = DMatrix::zeros(2 * d, 2 * d);
    let bbt = &sys.b * sys.b.transpose() / (gamma * gamma);
    h.view_mut((0, 0), (d, d)).copy_from(&sys.a);
    h.view_mut((0, d), (d, d)).copy_from(&bbt);
    h.view_mut((d, 0), (d, d)).fill_with_identity();
    h.view_mut((d, 0), (d, d)).neg_mut();
    h.view_mut((d, d), (d, d)).copy_from(&(-sys.a.transpose()));
    let scale = h.norm().max(1.0);
    Ok(eigenvalues(&h)?
        .into_iter()
        .filter(|z| z.re.abs() <= 1e-8 * scale && z.im >= 0.0)
        .map(|z| z.im)
        .collect())
}

/// H∞ norm by bisection on `γ` with the Hamiltonian imaginary-axis test.
pub fn sigma_bar_bisection(n: usize, m: usize, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(EdmError::InvalidParameter(format!("tolerance must be positive (got {tol})")));
    }
    if m < 2 {
        return Err(EdmError::OutOfRange {
            what: "m",
            value: m as f64,
            range: ">= 2",
        });
    }
    let sys = build_system_matrices(n, m)?;
    let a_norm = spectral_norm(&sys.a)?;
    let a_inv = sys
        .a
        .clone()
        .try_inverse()
        .ok_or_else(|| EdmError::NumericalFailure("A is singular".into()))?;
    let mut lo = frequency_gain(&sys, 0.0)?.max(frequency_gain(&sys, 1.0 / a_norm)?);
    let mut hi = 2.0 * spectral_norm(&sys.b)? * spectral_norm(&a_inv)?;
    let mut guard = 0;
    while !imaginary_frequencies(&sys, hi)?.is_empty() {
        hi *= 2.0;
        guard += 1;
        if guard > 60 {
            return Err(EdmError::NumericalFailure("no upper bracket for the H∞ norm".into()));
        }
    }
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let gamma = 0.5 * (lo + hi);
        let freqs = imaginary_frequencies(&sys, gamma)?;
        if freqs.is_empty() {
            hi = gamma;
        } else {
            lo = gamma;
            for w in freqs {
                lo = lo.max(frequency_gain(&sys, w)?.min(hi));
            }
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Dense log-spaced frequency sweep with golden-section refinement of the
/// best bracket. Returns `(gain, ω)`.
pub fn sigma_bar_sweep(n: usize, m: usize) -> Result<(f64, f64)> {
    let sys = build_system_matrices(n, m)?;
    if sys.dim() == 0 {
        return Ok((0.0, 0.0));
    }
    const POINTS: usize = 4096;
    let (lo_exp, hi_exp) = (-3.0f64, 3.0f64);
    let mut omegas = vec![0.0];
    omegas.extend((0..POINTS).map(|k| 10f64.powf(lo_exp + (hi_exp - lo_exp) * k as f64 / (POINTS - 1) as f64)));
    let gains = omegas
        .iter()
        .map(|&w| frequency_gain(&sys, w))
        .collect::<Result<Vec<_>>>()?;
    let best = gains
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let (mut a, mut b) = (omegas[best.saturating_sub(1)], omegas[(best + 1).min(POINTS)]);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (frequency_gain(&sys, c)?, frequency_gain(&sys, d)?);
    for _ in 0..100 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = frequency_gain(&sys, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = frequency_gain(&sys, d)?;
        }
    }
    let w = 0.5 * (a + b);
    let refined = frequency_gain(&sys, w)?;
    if refined >= gains[best] {
        Ok((refined, w))
    } else {
        Ok((gains[best], omegas[best]))
    }
}

/// `λ̲ = 2 c σ̄ (n γ̄ / ((m+1) γ̲))^{1/2}`.
pub fn lambda_lower_bound(gamma_upper: f64, gamma_lower: f64, c: f64, sigma_bar: f64, n: usize, m: usize) -> Result<f64> {
    if !(gamma_lower > 0.0) {
        return Err(EdmError::NonContractive { gamma_lower });
    }
    for (what, v) in [("gamma_upper", gamma_upper), ("c", c), ("sigma_bar", sigma_bar)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(EdmError::OutOfRange {
                what,
                value: v,
                range: "[0, ∞)",
            });
        }
    }
    Ok(2.0 * c * sigma_bar * (n as f64 * gamma_upper / ((m as f64 + 1.0) * gamma_lower)).sqrt())
}

/// Solves `AᵀM + MA = −I` through the vectorized Kronecker system.
pub fn solve_lyapunov(sys: &SystemMatrices) -> Result<DMatrix<f64>> {
    solve_lyapunov_matrix(&sys.a)
}

pub fn solve_lyapunov_matrix(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if d == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eye = DMatrix::<f64>::identity(d, d);
    // vec(AᵀM) = (I ⊗ Aᵀ) vec(M), vec(MA) = (Aᵀ ⊗ I) vec(M) in column-major order.
    let op = eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye);
    let rhs = -DMatrix::<f64>::identity(d, d);
    let rhs = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| EdmError::NumericalFailure("Lyapunov operator is singular".into()))?;
    let m = DMatrix::from_column_slice(d, d, sol.as_slice());
    let m = (&m + m.transpose()) * 0.5;
    let residual = (a.transpose() * &m + &m * a + &eye).norm();
    if residual > 1e-10 * m.norm().max(1.0) {
        return Err(EdmError::NumericalFailure(format!("Lyapunov residual {residual:e}")));
    }
    let eig = SymmetricEigen::try_new(m.clone(), EIG_EPS, EIG_MAX_ITER)
        .ok_or_else(|| EdmError::NumericalFailure("eigen-solve did not converge".into()))?;
    if eig.eigenvalues.min() <= 0.0 {
        return Err(EdmError::NumericalFailure("Lyapunov solution is not positive definite".into()));
    }
    Ok(m)
}

/// `(m+1) γ̲ / (2 ‖MB‖₂²)`; `+∞` when `m = 1`.
pub fn alpha_max(m: usize, gamma_lower: f64, lyap: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if !(gamma_lower > 0.0) {
        return Err(EdmError::NonContractive { gamma_lower });
    }
    if m <= 1 || lyap.is_empty() {
        return Ok(f64::INFINITY);
    }
    let mb = spectral_norm(&(lyap * b))?;
    Ok((m as f64 + 1.0) * gamma_lower / (2.0 * mb * mb))
}
