//! The maximal switching rate `c = max_{i, ξ∈Δ} Σ_{j≠i} T_{i,j}(ξ, F(ξ))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::games::{sample_simplex, Game, DEFAULT_GAME_SAMPLES, DIAGNOSTIC_SEED};
use crate::protocols::RevisionProtocol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CMethod {
    /// Maximum over simplex vertices; exact because the objective is convex.
    VertexExact,
    /// Best of random samples refined by Nelder–Mead; a lower bound.
    SampledLowerBound,
    /// Supplied by the user.
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingBound {
    pub c: f64,
    pub method: CMethod,
    /// Argmax state and row.
    pub state: Vec<f64>,
    pub strategy: usize,
}

fn row_maximum(game: &dyn Game, protocol: &RevisionProtocol, xi: &[f64]) -> (f64, usize) {
    let p = game.payoff(xi);
    (0..protocol.n())
        .map(|i| (protocol.outflow(i, xi, &p), i))
        .fold((f64::NEG_INFINITY, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

pub fn compute_c(game: &dyn Game, protocol: &RevisionProtocol, samples: usize) -> SwitchingBound {
    let n = game.dim();
    let vertex = |k: usize| {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        v
    };
    let mut best = SwitchingBound {
        c: f64::NEG_INFINITY,
        method: CMethod::VertexExact,
        state: vertex(0),
        strategy: 0,
    };
    let consider = |best: &mut SwitchingBound, xi: Vec<f64>| {
        let (v, i) = row_maximum(game, protocol, &xi);
        if v > best.c {
            *best = SwitchingBound {
                c: v,
                method: best.method,
                state: xi,
                strategy: i,
            };
        }
    };
    for k in 0..n {
        consider(&mut best, vertex(k));
    }
    if game.linear_matrix().is_some() && protocol.is_convex_in_payoff() {
        best.c = best.c.max(0.0);
        return best;
    }

    best.method = CMethod::SampledLowerBound;
    let mut rng = ChaCha8Rng::seed_from_u64(DIAGNOSTIC_SEED);
    let samples = if samples == 0 { DEFAULT_GAME_SAMPLES } else { samples };
    let mut scored: Vec<(f64, Vec<f64>)> = (0..samples)
        .map(|_| {
            let xi = sample_simplex(n, &mut rng);
            (row_maximum(game, protocol, &xi).0, xi)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, start) in scored.into_iter().take(10) {
        let refined = nelder_mead(|z| -row_maximum(game, protocol, &project_simplex(z)).0, &start, 200 * n);
        consider(&mut best, start);
        consider(&mut best, project_simplex(&refined));
    }
    best.c = best.c.max(0.0);
    best
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Minimizes `f` from `start` with the standard Nelder–Mead coefficients.
fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], max_iter: usize) -> Vec<f64> {
    let d = start.len();
    let mut pts: Vec<Vec<f64>> = vec![start.to_vec()];
    for k in 0..d {
        let mut p = start.to_vec();
        p[k] += 0.05;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&k| pts[k].clone()).collect();
        vals = order.iter().map(|&k| vals[k]).collect();
        if (vals[d] - vals[0]).abs() < 1e-12 {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|c| pts[..d].iter().map(|p| p[c]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|c| centroid[c] + t * (pts[d][c] - centroid[c])).collect() };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < vals[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                pts[d] = expanded;
                vals[d] = fe;
            } else {
                pts[d] = reflected;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            pts[d] = reflected;
            vals[d] = fr;
        } else {
            let contracted = if fr < vals[d] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < vals[d].min(fr) {
                pts[d] = contracted;
                vals[d] = fc;
            } else {
                for k in 1..=d {
                    pts[k] = (0..d).map(|c| pts[0][c] + 0.5 * (pts[k][c] - pts[0][c])).collect();
                    vals[k] = f(&pts[k]);
                }
            }
        }
    }
    let k = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    pts[k].clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{congestion_game, linear_game, FnGame};
    use nalgebra::DMatrix;

    fn vertex_oracle(w: &DMatrix<f64>) -> f64 {
        let n = w.nrows();
        let mut best: f64 = 0.0;
        for k in 0..n {
            let p: Vec<f64> = (0..n).map(|i| w[(i, k)]).collect();
            for i in 0..n {
                let s: f64 = (0..n).map(|j| (p[j] - p[i]).max(0.0)).sum();
                best = best.max(s);
            }
        }
        best
    }

    #[test]
    fn congestion_value() {
        let game = congestion_game(&[2.5, 1.5, 0.5, 2.5, 0.7], &[vec![1, 2], vec![4, 5], vec![1, 3, 5]]).unwrap();
        let smith = RevisionProtocol::smith(3, 5.0).unwrap();
        let b = compute_c(&game, &smith, 0);
        assert_eq!(b.method, CMethod::VertexExact);
        assert!((b.c - 5.7).abs() < 1e-12, "{b:?}");
        assert!((b.c - vertex_oracle(game.matrix())).abs() < 1e-12);
        assert_eq!(b.state, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn rps_value() {
        let w = DMatrix::from_row_slice(3, 3, &[0., -2., 3., 3., 0., -2., -2., 3., 0.]);
        let game = linear_game(w.clone()).unwrap();
        let b = compute_c(&game, &RevisionProtocol::smith(3, 5.8).unwrap(), 0);
        assert!((b.c - 7.0).abs() < 1e-12);
        assert_eq!((b.state.clone(), b.strategy), (vec![1.0, 0.0, 0.0], 2));
        assert_eq!(b.c, vertex_oracle(&w));
    }

    #[test]
    fn zero_game_has_no_switching() {
        let game = linear_game(DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(compute_c(&game, &RevisionProtocol::smith(4, 1.0).unwrap(), 0).c, 0.0);
    }

    #[test]
    fn nonlinear_games_use_sampling() {
        // Payoff peaks in the interior, so vertices undershoot.
        let game = FnGame::new(
            2,
            |x| vec![4.0 * x[0] * x[1], 0.0],
            |x| DMatrix::from_row_slice(2, 2, &[4.0 * x[1], 4.0 * x[0], 0.0, 0.0]),
        );
        let b = compute_c(&game, &RevisionProtocol::smith(2, 2.0).unwrap(), 2000);
        assert_eq!(b.method, CMethod::SampledLowerBound);
        assert!(b.c <= 1.0 + 1e-12 && b.c > 1.0 - 1e-6, "{b:?}");
    }

    #[test]
    fn projection_lands_on_simplex() {
        let p = project_simplex(&[0.5, 0.8, -0.3]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
    }
}
