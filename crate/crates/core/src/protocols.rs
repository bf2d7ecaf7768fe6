//! Revision protocols: switch-rate maps whose rows sum to the rate budget λ.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{EdmError, Result};
use crate::simplex::{PayoffVector, PopulationState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolClass {
    General,
    PairwiseComparison,
    ImpartialPairwiseComparison,
}

/// Piecewise-linear rate `φ(s)` on knots `0 = s_0 < s_1 < …`, zero for `s ≤ 0`.
///
/// Past the last knot the final segment is extended with its slope clamped at
/// zero, so the rate stays positive and Lipschitz.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedRate {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedRate {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(EdmError::DimensionMismatch {
                expected: knots.len(),
                found: values.len(),
            });
        }
        if knots.len() < 2 {
            return Err(EdmError::InvalidParameter("a tabulated rate needs at least two knots".into()));
        }
        if knots[0] != 0.0 || values[0] != 0.0 {
            return Err(EdmError::InvalidParameter(
                "a tabulated rate must start at the knot (0, 0)".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k.is_finite()) {
            return Err(EdmError::InvalidParameter("rate knots must be strictly increasing".into()));
        }
        if values[1..].iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(EdmError::InvalidParameter(
                "rate values must be positive at positive knots (sign preservation)".into(),
            ));
        }
        Ok(Self { knots, values })
    }

    fn tail_slope(&self) -> f64 {
        let k = self.knots.len();
        ((self.values[k - 1] - self.values[k - 2]) / (self.knots[k - 1] - self.knots[k - 2])).max(0.0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let last = self.knots.len() - 1;
        if s >= self.knots[last] {
            return self.values[last] + self.tail_slope() * (s - self.knots[last]);
        }
        let seg = self.knots.partition_point(|&k| k <= s) - 1;
        let w = (s - self.knots[seg]) / (self.knots[seg + 1] - self.knots[seg]);
        self.values[seg] + w * (self.values[seg + 1] - self.values[seg])
    }

    /// `∫₀^s φ`, zero for `s ≤ 0`.
    pub fn integral(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for seg in 0..self.knots.len() - 1 {
            let (a, b) = (self.knots[seg], self.knots[seg + 1]);
            if s <= a {
                return acc;
            }
            let end = s.min(b);
            acc += 0.5 * (self.values[seg] + self.eval(end)) * (end - a);
        }
        let last = self.knots.len() - 1;
        if s > self.knots[last] {
            let d = s - self.knots[last];
            acc += self.values[last] * d + 0.5 * self.tail_slope() * d * d;
        }
        acc
    }

    /// Convex on ℝ iff the segment slopes never decrease (including the tail).
    pub fn is_convex(&self) -> bool {
        let mut slopes: Vec<f64> = self
            .knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(k, v)| (v[1] - v[0]) / (k[1] - k[0]))
            .collect();
        slopes.push(self.tail_slope());
        slopes.windows(2).all(|w| w[1] >= w[0])
    }
}

type PairwiseFn = dyn Fn(usize, usize, &[f64]) -> f64 + Send + Sync;
type GeneralFn = dyn Fn(usize, usize, &[f64], &[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
enum Rates {
    Smith,
    Tabulated(Vec<TabulatedRate>),
    Pairwise(Arc<PairwiseFn>),
    General(Arc<GeneralFn>),
}

#[derive(Clone)]
pub struct RevisionProtocol {
    name: String,
    n: usize,
    rate_budget: f64,
    rates: Rates,
}

impl fmt::Debug for RevisionProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RevisionProtocol")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("rate_budget", &self.rate_budget)
            .field("class", &self.class())
            .finish()
    }
}

fn check_budget(rate_budget: f64) -> Result<()> {
    if !(rate_budget > 0.0) || !rate_budget.is_finite() {
        return Err(EdmError::InvalidParameter(format!(
            "rate budget must be positive and finite (got {rate_budget})"
        )));
    }
    Ok(())
}

impl RevisionProtocol {
    /// Smith protocol: `T_{i,j} = max(π_j − π_i, 0)`.
    pub fn smith(n: usize, rate_budget: f64) -> Result<Self> {
        check_budget(rate_budget)?;
        Ok(Self {
            name: "smith".into(),
            n,
            rate_budget,
            rates: Rates::Smith,
        })
    }

    /// Impartial pairwise comparison protocol `T_{i,j} = φ_j(π_j − π_i)` with
    /// one tabulated rate per destination strategy.
    pub fn impartial(rate_budget: f64, rates: Vec<TabulatedRate>) -> Result<Self> {
        check_budget(rate_budget)?;
        Ok(Self {
            name: "tabulated".into(),
            n: rates.len(),
            rate_budget,
            rates: Rates::Tabulated(rates),
        })
    }

    /// Pairwise comparison protocol `T_{i,j} = φ_{i,j}(π)`. The caller is
    /// responsible for sign preservation; [`Self::is_sign_preserving_at`] checks it.
    pub fn pairwise(
        n: usize,
        rate_budget: f64,
        rate: impl Fn(usize, usize, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_budget(rate_budget)?;
        Ok(Self {
            name: "pairwise".into(),
            n,
            rate_budget,
            rates: Rates::Pairwise(Arc::new(rate)),
        })
    }

    /// Arbitrary protocol `T_{i,j}(ξ, π)` for `i ≠ j`.
    pub fn general(
        n: usize,
        rate_budget: f64,
        rate: impl Fn(usize, usize, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_budget(rate_budget)?;
        Ok(Self {
            name: "general".into(),
            n,
            rate_budget,
            rates: Rates::General(Arc::new(rate)),
        })
    }

    pub fn with_rate_budget(&self, rate_budget: f64) -> Result<Self> {
        check_budget(rate_budget)?;
        Ok(Self {
            rate_budget,
            ..self.clone()
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rate_budget(&self) -> f64 {
        self.rate_budget
    }

    pub fn class(&self) -> ProtocolClass {
        match self.rates {
            Rates::Smith | Rates::Tabulated(_) => ProtocolClass::ImpartialPairwiseComparison,
            Rates::Pairwise(_) => ProtocolClass::PairwiseComparison,
            Rates::General(_) => ProtocolClass::General,
        }
    }

    pub fn is_impartial(&self) -> bool {
        self.class() == ProtocolClass::ImpartialPairwiseComparison
    }

    /// Whether each off-diagonal rate is a convex function of the payoff
    /// vector and ignores the state, so that with linear payoffs the switching
    /// rate is convex on the simplex.
    pub fn is_convex_in_payoff(&self) -> bool {
        match &self.rates {
            Rates::Smith => true,
            Rates::Tabulated(r) => r.iter().all(TabulatedRate::is_convex),
            _ => false,
        }
    }

    /// `φ_j(s)` of an impartial protocol.
    pub fn impartial_rate(&self, j: usize, s: f64) -> Result<f64> {
        match &self.rates {
            Rates::Smith => Ok(s.max(0.0)),
            Rates::Tabulated(r) => Ok(r[j].eval(s)),
            _ => Err(EdmError::NotImpartial),
        }
    }

    /// `Ψ_j(s) = ∫₀^s φ_j` of an impartial protocol.
    pub fn antiderivative(&self, j: usize, s: f64) -> Result<f64> {
        match &self.rates {
            Rates::Smith => Ok(0.5 * s.max(0.0).powi(2)),
            Rates::Tabulated(r) => Ok(r[j].integral(s)),
            _ => Err(EdmError::NotImpartial),
        }
    }

    /// Off-diagonal rate `T_{i,j}(ξ, π)`; zero when `i == j`.
    pub fn off_diagonal(&self, i: usize, j: usize, state: &[f64], payoff: &[f64]) -> f64 {
        if i == j {
            return 0.0;
        }
        match &self.rates {
            Rates::Smith => (payoff[j] - payoff[i]).max(0.0),
            Rates::Tabulated(r) => r[j].eval(payoff[j] - payoff[i]),
            Rates::Pairwise(f) => f(i, j, payoff),
            Rates::General(f) => f(i, j, state, payoff),
        }
    }

    /// Total switching rate out of strategy `i`, self-switches excluded.
    pub fn outflow(&self, i: usize, state: &[f64], payoff: &[f64]) -> f64 {
        (0..self.n).map(|j| self.off_diagonal(i, j, state, payoff)).sum()
    }

    /// Fills the full `n × n` switch-rate matrix, row-major, with the stay
    /// rate `λ − Σ_{j≠i} T_{i,j}` on the diagonal.
    pub fn fill_switch_rates(&self, state: &[f64], payoff: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        debug_assert_eq!(out.len(), n * n);
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            let mut off = 0.0;
            for (j, r) in row.iter_mut().enumerate() {
                *r = self.off_diagonal(i, j, state, payoff);
                if *r < 0.0 || !r.is_finite() {
                    return Err(EdmError::InvalidParameter(format!(
                        "protocol produced invalid rate T[{i},{j}] = {r}"
                    )));
                }
                off += *r;
            }
            let stay = self.rate_budget - off;
            if stay < -1e-12 * self.rate_budget {
                return Err(EdmError::NegativeStayRate {
                    strategy: i,
                    stay_rate: stay,
                    rate_budget: self.rate_budget,
                });
            }
            row[i] = stay;
        }
        Ok(())
    }

    /// Sign preservation at one point: `T_{i,j} > 0` iff `π_j > π_i`.
    pub fn is_sign_preserving_at(&self, state: &[f64], payoff: &[f64]) -> bool {
        (0..self.n).all(|i| {
            (0..self.n).filter(|&j| j != i).all(|j| {
                let r = self.off_diagonal(i, j, state, payoff);
                if payoff[j] > payoff[i] {
                    r > 0.0
                } else {
                    r == 0.0
                }
            })
        })
    }
}

fn check_dims(protocol: &RevisionProtocol, len: usize) -> Result<()> {
    if protocol.n() != len {
        return Err(EdmError::DimensionMismatch {
            expected: protocol.n(),
            found: len,
        });
    }
    Ok(())
}

/// Full switch-rate matrix; every row sums to the rate budget.
pub fn switch_rate_matrix(
    protocol: &RevisionProtocol,
    state: &PopulationState,
    payoff: &PayoffVector,
) -> Result<DMatrix<f64>> {
    check_dims(protocol, state.len())?;
    check_dims(protocol, payoff.len())?;
    let n = protocol.n();
    let mut buf = vec![0.0; n * n];
    protocol.fill_switch_rates(state.as_slice(), payoff.as_slice(), &mut buf)?;
    Ok(DMatrix::from_row_slice(n, n, &buf))
}

/// `Φ_{ij} = φ_i(π_i − π_j)` off the diagonal and `Φ_{ii} = Σ_j φ_j(π_j − π_i)`.
pub fn phi_matrix(protocol: &RevisionProtocol, payoff: &PayoffVector) -> Result<DMatrix<f64>> {
    check_dims(protocol, payoff.len())?;
    if !protocol.is_impartial() {
        return Err(EdmError::NotImpartial);
    }
    let p = payoff.as_slice();
    let n = protocol.n();
    let mut phi = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            phi[(i, j)] = if i == j {
                (0..n)
                    .map(|k| protocol.impartial_rate(k, p[k] - p[i]))
                    .sum::<Result<f64>>()?
            } else {
                protocol.impartial_rate(i, p[i] - p[j])?
            };
        }
    }
    Ok(phi)
}

/// Generator of the net strategy flow of an impartial protocol: for any mass
/// vector `z`, `(G z)_k = Σ_i φ_k(π_k − π_i) z_i − z_k Σ_j φ_j(π_j − π_k)`.
///
/// Shares the off-diagonal of [`phi_matrix`] but carries the outflow with a
/// negative sign on the diagonal, so its columns sum to zero. This is the
/// matrix that maps a stage mismatch `x̃_l` to `δ̇_l` in the Lyapunov
/// derivative.
pub fn flow_generator(protocol: &RevisionProtocol, payoff: &[f64]) -> Result<DMatrix<f64>> {
    check_dims(protocol, payoff.len())?;
    if !protocol.is_impartial() {
        return Err(EdmError::NotImpartial);
    }
    let n = protocol.n();
    let mut g = DMatrix::zeros(n, n);
    for k in 0..n {
        for i in 0..n {
            if i != k {
                g[(k, i)] = protocol.impartial_rate(k, payoff[k] - payoff[i])?;
            }
        }
        g[(k, k)] = -(0..n)
            .filter(|&j| j != k)
            .map(|j| protocol.impartial_rate(j, payoff[j] - payoff[k]))
            .sum::<Result<f64>>()?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> PayoffVector {
        PayoffVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn smith_rates_at_rps_vertex() {
        let s = RevisionProtocol::smith(3, 5.8).unwrap();
        let p = [0.0, 3.0, -2.0];
        let x = [1.0, 0.0, 0.0];
        assert_eq!(s.off_diagonal(0, 1, &x, &p), 3.0);
        assert_eq!(s.off_diagonal(0, 2, &x, &p), 0.0);
        let flat = [0.7; 3];
        assert!((0..3).all(|i| (0..3).all(|j| s.off_diagonal(i, j, &x, &flat) == 0.0)));
        assert_eq!(s.antiderivative(0, 2.0).unwrap(), 2.0);
        assert_eq!(s.antiderivative(0, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn switch_rate_matrix_examples() {
        let third = PopulationState::barycenter(3).unwrap();
        let s = RevisionProtocol::smith(3, 5.8).unwrap();
        let t = switch_rate_matrix(&s, &third, &pv(&[1.0 / 3.0; 3])).unwrap();
        assert_eq!(t, DMatrix::identity(3, 3) * 5.8);

        let e1 = PopulationState::vertex(3, 0).unwrap();
        let err = switch_rate_matrix(&RevisionProtocol::smith(3, 5.0).unwrap(), &e1, &pv(&[0.0, 3.0, -2.0]));
        assert!(matches!(err, Err(EdmError::NegativeStayRate { strategy: 2, stay_rate, .. }) if stay_rate == -2.0));

        let t = switch_rate_matrix(&RevisionProtocol::smith(3, 8.0).unwrap(), &e1, &pv(&[0.0, 3.0, -2.0])).unwrap();
        assert_eq!(t.row(2).iter().copied().collect::<Vec<_>>(), vec![2.0, 5.0, 1.0]);
        for i in 0..3 {
            assert_eq!(t.row(i).sum(), 8.0);
        }
    }

    #[test]
    fn phi_matrix_examples() {
        let s = RevisionProtocol::smith(3, 5.8).unwrap();
        assert_eq!(phi_matrix(&s, &pv(&[2.0; 3])).unwrap(), DMatrix::zeros(3, 3));
        let phi = phi_matrix(&s, &pv(&[0.0, 3.0, -2.0])).unwrap();
        assert_eq!(phi[(1, 0)], 3.0);
        assert_eq!(phi[(2, 2)], 7.0);
    }

    #[test]
    fn non_impartial_protocols_are_rejected() {
        let pc = RevisionProtocol::pairwise(3, 5.0, |i, j, p| (p[j] - p[i]).max(0.0) * (1 + i) as f64).unwrap();
        assert_eq!(pc.class(), ProtocolClass::PairwiseComparison);
        assert_eq!(phi_matrix(&pc, &pv(&[0.0, 1.0, 2.0])), Err(EdmError::NotImpartial));
        assert_eq!(pc.antiderivative(0, 1.0), Err(EdmError::NotImpartial));
        assert!(flow_generator(&pc, &[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn flow_generator_columns_sum_to_zero() {
        let s = RevisionProtocol::smith(3, 5.8).unwrap();
        let g = flow_generator(&s, &[0.0, 3.0, -2.0]).unwrap();
        for i in 0..3 {
            assert!(g.column(i).sum().abs() < 1e-15);
        }
        let phi = phi_matrix(&s, &pv(&[0.0, 3.0, -2.0])).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(g[(i, j)], phi[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn tabulated_rate_matches_smith_when_linear() {
        let lin = TabulatedRate::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        for s in [-2.0, -0.1, 0.0, 0.3, 1.0, 4.5] {
            assert!((lin.eval(s) - s.max(0.0)).abs() < 1e-15);
            assert!((lin.integral(s) - 0.5 * s.max(0.0).powi(2)).abs() < 1e-14);
        }
        assert!(lin.is_convex());
    }

    #[test]
    fn tabulated_rate_validation() {
        assert!(TabulatedRate::new(vec![0.0], vec![0.0]).is_err());
        assert!(TabulatedRate::new(vec![0.0, 1.0], vec![0.1, 1.0]).is_err());
        assert!(TabulatedRate::new(vec![0.0, 1.0, 1.0], vec![0.0, 1.0, 2.0]).is_err());
        assert!(TabulatedRate::new(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
        let concave = TabulatedRate::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 2.5]).unwrap();
        assert!(!concave.is_convex());
        assert_eq!(concave.eval(3.0), 3.0);
    }

    #[test]
    fn psi_derivative_matches_phi() {
        let smith = RevisionProtocol::smith(2, 1.0).unwrap();
        let tab = RevisionProtocol::impartial(
            1.0,
            vec![
                TabulatedRate::new(vec![0.0, 0.5, 2.0], vec![0.0, 0.2, 3.0]).unwrap(),
                TabulatedRate::new(vec![0.0, 1.0, 1.5], vec![0.0, 1.0, 1.2]).unwrap(),
            ],
        )
        .unwrap();
        let h = 1e-7;
        for proto in [&smith, &tab] {
            for j in 0..2 {
                let mut prev = 0.0;
                for k in -40..=60 {
                    let s = k as f64 * 0.07 + 0.013;
                    let psi = proto.antiderivative(j, s).unwrap();
                    assert!(psi >= 0.0 && psi >= prev);
                    prev = psi;
                    if s <= 0.0 {
                        assert_eq!(psi, 0.0);
                    }
                    let fd = (proto.antiderivative(j, s + h).unwrap() - proto.antiderivative(j, s - h).unwrap()) / (2.0 * h);
                    assert!((fd - proto.impartial_rate(j, s).unwrap()).abs() < 1e-6, "s = {s}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_budget() {
        assert!(RevisionProtocol::smith(3, 0.0).is_err());
        assert!(RevisionProtocol::smith(3, f64::NAN).is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn impartial_protocols_preserve_sign(p in proptest::collection::vec(-10.0f64..10.0, 4)) {
            let smith = RevisionProtocol::smith(4, 100.0).unwrap();
            let tab = RevisionProtocol::impartial(
                100.0,
                (0..4).map(|k| TabulatedRate::new(vec![0.0, 1.0, 3.0], vec![0.0, 0.5 + k as f64, 4.0 + k as f64]).unwrap()).collect(),
            ).unwrap();
            let x = [0.25; 4];
            prop_assert!(smith.is_sign_preserving_at(&x, &p));
            prop_assert!(tab.is_sign_preserving_at(&x, &p));
        }

        #[test]
        fn rows_sum_to_budget(p in proptest::collection::vec(-1.0f64..1.0, 3), budget in 5.0f64..50.0) {
            let smith = RevisionProtocol::smith(3, budget).unwrap();
            let mut t = vec![0.0; 9];
            smith.fill_switch_rates(&[0.2, 0.3, 0.5], &p, &mut t).unwrap();
            for i in 0..3 {
                let row: f64 = t[3 * i..3 * i + 3].iter().sum();
                prop_assert!((row - budget).abs() <= 4.0 * f64::EPSILON * budget);
            }
        }

        #[test]
        fn smith_ignores_the_state(p in proptest::collection::vec(-5.0f64..5.0, 3), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let smith = RevisionProtocol::smith(3, 30.0).unwrap();
            let x1 = [a / 2.0, 1.0 - a, a / 2.0];
            let x2 = [b, (1.0 - b) / 2.0, (1.0 - b) / 2.0];
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert_eq!(smith.off_diagonal(i, j, &x1, &p), smith.off_diagonal(i, j, &x2, &p));
                }
            }
        }
    }
}
