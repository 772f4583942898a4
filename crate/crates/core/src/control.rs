//! Analytical phase-kick controller.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::OscillatorNetwork;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("oscillator at the origin (q = p = 0); phase undefined")]
    UndefinedState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseKick {
    /// One-based leaf node index.
    pub node: usize,
    pub phi: f64,
}

/// Wraps an angle into `[-pi, pi]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI && phi > 0.0 {
        PI
    } else {
        w
    }
}

/// `pi/2 + tanh(1 / (p/q + eta/(2 omega)))`, wrapped into `[-pi, pi]`.
///
/// IEEE division fixes the limits: `q = 0` sends `p/q` to an infinity and
/// the result to `pi/2`; a vanishing denominator gives `1/(+0) = +inf`.
pub fn optimal_phase(q: f64, p: f64, eta: f64, omega: f64) -> Result<f64, ControlError> {
    if q == 0.0 && p == 0.0 {
        return Err(ControlError::UndefinedState);
    }
    let d = p / q + eta / (2.0 * omega);
    Ok(wrap_phase(FRAC_PI_2 + (1.0 / d).tanh()))
}

/// One kick per leaf from that leaf's own measured quadratures.
///
/// `measured` holds raw (unnormalised) quadratures of every node. A leaf
/// whose phase is undefined keeps its entry from `previous`.
pub fn baseline_policy(
    measured: &[f64],
    net: &OscillatorNetwork,
    eta: f64,
    previous: &[f64],
) -> Vec<PhaseKick> {
    assert_eq!(measured.len(), 2 * net.n_nodes(), "measurement length");
    net.leaves()
        .iter()
        .enumerate()
        .map(|(slot, &node)| {
            let j = node - 1;
            let phi = optimal_phase(measured[2 * j], measured[2 * j + 1], eta, net.frequencies()[j])
                .unwrap_or_else(|_| previous.get(slot).copied().unwrap_or(0.0));
            PhaseKick { node, phi }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn optimal_phase_examples() {
        // eta/(2 omega) = 0.05
        let phi = optimal_phase(1.0, 0.0, 0.1, 1.0).unwrap();
        assert!((phi - (FRAC_PI_2 + 20f64.tanh())).abs() < 1e-15);
        assert!((phi - 2.57080).abs() < 1e-5);

        assert_eq!(optimal_phase(0.0, 1.0, 0.1, 1.0).unwrap(), FRAC_PI_2);
        assert_eq!(optimal_phase(-0.0, 1.0, 0.1, 1.0).unwrap(), FRAC_PI_2);

        let phi = optimal_phase(1.0, -0.05, 0.1, 1.0).unwrap();
        assert_eq!(phi, FRAC_PI_2 + 1.0);
        assert!((phi - 2.5708).abs() < 1e-4);
    }

    #[test]
    fn origin_is_undefined() {
        assert_eq!(optimal_phase(0.0, 0.0, 0.5, 1.0), Err(ControlError::UndefinedState));
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_phase(0.5), 0.5);
        assert!((wrap_phase(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), -PI);
    }

    #[test]
    fn baseline_kicks_only_leaves() {
        let single = OscillatorNetwork::independent(vec![1.0]).unwrap();
        let k = baseline_policy(&[0.3, -0.7], &single, 0.5, &[0.0]);
        assert_eq!(k.len(), 1);
        assert_eq!(k[0].phi, optimal_phase(0.3, -0.7, 0.5, 1.0).unwrap());

        let path = OscillatorNetwork::new(3, vec![(1, 2), (2, 3)], vec![1.0; 3], 0.5).unwrap();
        let k = baseline_policy(&[1.0, 0.0, 5.0, 5.0, 1.0, 0.0], &path, 0.5, &[0.0, 0.0]);
        assert_eq!(k.iter().map(|k| k.node).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(k[0].phi, k[1].phi);
    }

    #[test]
    fn undefined_leaf_holds_previous_phase() {
        let net = OscillatorNetwork::independent(vec![1.0, 1.0]).unwrap();
        let k = baseline_policy(&[0.0, 0.0, 1.0, 0.0], &net, 0.5, &[0.25, 0.0]);
        assert_eq!(k[0].phi, 0.25);
        assert_ne!(k[1].phi, 0.0);
    }

    proptest! {
        #[test]
        fn phase_range(q in -1e3f64..1e3, p in -1e3f64..1e3, eta in 0.01f64..2.0, w in 0.5f64..1.5) {
            prop_assume!(q != 0.0 || p != 0.0);
            let phi = optimal_phase(q, p, eta, w).unwrap();
            prop_assert!((FRAC_PI_2 - 1.0..=FRAC_PI_2 + 1.0).contains(&phi));
        }

        #[test]
        fn continuity_away_from_pole(q in 0.1f64..10.0, p in -10.0f64..10.0, eta in 0.01f64..1.0) {
            let d = p / q + eta / 2.0;
            prop_assume!(d.abs() > 1e-2);
            let a = optimal_phase(q, p, eta, 1.0).unwrap();
            let b = optimal_phase(q + 1e-8, p - 1e-8, eta, 1.0).unwrap();
            prop_assert!((a - b).abs() < 1e-4);
        }
    }
}
