#![allow(dead_code)]

use erlang_edm::{congestion_game, linear_game, ErlangParams, ExtendedState, LinearGame, RevisionProtocol};
use nalgebra::DMatrix;

pub const CONGESTION_NE: [f64; 3] = [0.349, 0.513, 0.137];

pub fn congestion() -> LinearGame {
    congestion_game(&[2.5, 1.5, 0.5, 2.5, 0.7], &[vec![1, 2], vec![4, 5], vec![1, 3, 5]]).unwrap()
}

pub fn rps() -> LinearGame {
    linear_game(DMatrix::from_row_slice(3, 3, &[0., -2., 3., 3., 0., -2., -2., 3., 0.])).unwrap()
}

/// Mass 0.2 in the last stage of strategy 1, 0.2 and 0.6 in the first stage
/// of strategies 2 and 3.
pub fn skewed_initial(m: usize) -> ExtendedState {
    let mut rows = vec![vec![0.0; m]; 3];
    rows[0][m - 1] = 0.2;
    rows[1][0] = 0.2;
    rows[2][0] = 0.6;
    ExtendedState::from_rows(&rows).unwrap()
}

pub fn congestion_setup() -> (LinearGame, RevisionProtocol, ErlangParams, ExtendedState) {
    (congestion(), RevisionProtocol::smith(3, 5.0).unwrap(), ErlangParams::new(3, 3, 5.0).unwrap(), skewed_initial(3))
}

pub fn rps_setup() -> (LinearGame, RevisionProtocol, ErlangParams, ExtendedState) {
    (rps(), RevisionProtocol::smith(3, 5.8).unwrap(), ErlangParams::new(3, 4, 5.8).unwrap(), skewed_initial(4))
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
