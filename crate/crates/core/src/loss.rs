//! Huber and asymmetric Huber objectives with analytic gradients. The
//! asymmetric form puts weight ω on overprediction (y < ŷ) and 1−ω on
//! underprediction, so ω below 0.5 penalizes lateness harder.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("delta must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("omega must lie in [0, 1], got {0}")]
    InvalidOmega(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Robustness knob: quadratic within ±delta seconds, linear beyond.
    pub delta: f64,
    /// Asymmetry knob: weight on overprediction.
    pub omega: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            delta: 60.0,
            omega: 0.5,
        }
    }
}

impl LossConfig {
    pub fn new(delta: f64, omega: f64) -> Result<Self, LossError> {
        if !(delta > 0.0) {
            return Err(LossError::InvalidDelta(delta));
        }
        if !(0.0..=1.0).contains(&omega) {
            return Err(LossError::InvalidOmega(omega));
        }
        Ok(Self { delta, omega })
    }
}

/// Huber loss and its gradient w.r.t. the prediction.
pub fn huber(y: f64, y_hat: f64, delta: f64) -> (f64, f64) {
    let e = y - y_hat;
    if e.abs() < delta {
        (0.5 * e * e, -e)
    } else {
        (delta * e.abs() - 0.5 * delta * delta, -delta * e.signum())
    }
}

/// Asymmetric Huber loss and its gradient w.r.t. the prediction:
/// ω·huber on overprediction (y < ŷ), (1−ω)·huber otherwise.
pub fn asym_huber(y: f64, y_hat: f64, config: LossConfig) -> (f64, f64) {
    let (l, g) = huber(y, y_hat, config.delta);
    let w = if y < y_hat {
        config.omega
    } else {
        1.0 - config.omega
    };
    (w * l, w * g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::finite_difference_check;
    use crate::rng::SplitMix64;

    #[test]
    fn huber_zero_at_match() {
        assert_eq!(huber(5.0, 5.0, 1.0), (0.0, 0.0));
    }

    #[test]
    fn huber_substitution_values() {
        let (l, _) = huber(10.0, 8.0, 1.0);
        assert!((l - 1.5).abs() < 1e-15);
        let (l, _) = huber(1.0, 1.3, 1.0);
        assert!((l - 0.045).abs() < 1e-15);
    }

    #[test]
    fn huber_branch_continuity_at_delta() {
        // both branches equal δ²/2 at |e| = δ
        for delta in [0.5, 1.0, 60.0] {
            let quad = 0.5 * delta * delta;
            let lin = delta * delta - 0.5 * delta * delta;
            assert_eq!(quad, lin);
            let (l, _) = huber(delta, 0.0, delta);
            assert_eq!(l, 0.5 * delta * delta);
        }
    }

    #[test]
    fn huber_even_in_error() {
        let mut rng = SplitMix64::new(31);
        for _ in 0..100 {
            let e = rng.uniform(-5.0, 5.0);
            let (a, _) = huber(e, 0.0, 1.5);
            let (b, _) = huber(-e, 0.0, 1.5);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn asym_substitution_values() {
        let (l, _) = asym_huber(10.0, 8.0, LossConfig::new(1.0, 0.7).unwrap());
        assert!((l - 0.45).abs() < 1e-12); // underprediction branch: (1-0.7)*1.5
        let (l, _) = asym_huber(1.0, 1.3, LossConfig::new(1.0, 0.25).unwrap());
        assert!((l - 0.01125).abs() < 1e-15); // overprediction branch: 0.25*0.045
    }

    #[test]
    fn asym_half_omega_is_half_huber() {
        let mut rng = SplitMix64::new(32);
        let cfg = LossConfig::new(2.0, 0.5).unwrap();
        for _ in 0..200 {
            let y = rng.uniform(-10.0, 10.0);
            let yh = rng.uniform(-10.0, 10.0);
            let (l, g) = asym_huber(y, yh, cfg);
            let (hl, hg) = huber(y, yh, 2.0);
            assert_eq!(l, 0.5 * hl);
            assert_eq!(g, 0.5 * hg);
        }
    }

    #[test]
    fn asym_mirror_symmetry() {
        // asym(e) with ω equals asym(−e) with 1−ω
        let mut rng = SplitMix64::new(33);
        for _ in 0..200 {
            let e = rng.uniform(-4.0, 4.0);
            let omega = rng.uniform(0.0, 1.0);
            let (a, _) = asym_huber(e, 0.0, LossConfig::new(1.0, omega).unwrap());
            let (b, _) = asym_huber(-e, 0.0, LossConfig::new(1.0, 1.0 - omega).unwrap());
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_away_from_kinks() {
        let mut rng = SplitMix64::new(34);
        let delta = 1.0;
        let mut checked = 0;
        while checked < 50 {
            let y = rng.uniform(-5.0, 5.0);
            let yh = rng.uniform(-5.0, 5.0);
            let e = (y - yh).abs();
            if e < 1e-3 || (e - delta).abs() < 1e-3 {
                continue;
            }
            let omega = rng.uniform(0.05, 0.95);
            let cfg = LossConfig::new(delta, omega).unwrap();
            let (_, g) = asym_huber(y, yh, cfg);
            let mut x = [yh];
            let dev = finite_difference_check(
                |xs| asym_huber(y, xs[0], cfg).0,
                &mut x,
                &[g],
                1e-5,
                64,
                &mut rng,
            );
            assert!(dev < 1e-6, "y={y} yh={yh} omega={omega} dev={dev}");
            checked += 1;
        }
    }

    #[test]
    fn scalar_minimizer_non_increasing_in_omega() {
        // Brute-force 1-D minimization of mean asym_huber over a fixed skewed
        // sample: the optimum m* steers downward as ω grows.
        let mut rng = SplitMix64::new(35);
        let sample: Vec<f64> = (0..10_000)
            .map(|_| rng.lognormal(0.0, 0.6) * 10.0)
            .collect();
        let mean_loss = |m: f64, omega: f64| -> f64 {
            let cfg = LossConfig::new(1.0, omega).unwrap();
            sample.iter().map(|&y| asym_huber(y, m, cfg).0).sum::<f64>() / sample.len() as f64
        };
        let minimize = |omega: f64| -> f64 {
            let mut best = (f64::INFINITY, 0.0);
            let mut m = 0.0;
            while m <= 40.0 {
                let l = mean_loss(m, omega);
                if l < best.0 {
                    best = (l, m);
                }
                m += 0.01;
            }
            best.1
        };
        let omegas = [0.1, 0.3, 0.5, 0.7, 0.9];
        let mins: Vec<f64> = omegas.iter().map(|&o| minimize(o)).collect();
        for w in mins.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "minimizers not non-increasing: {mins:?}"
            );
        }
        assert!(mins[0] > mins[4], "expected strict overall decrease: {mins:?}");
    }

    #[test]
    fn config_validation() {
        assert_eq!(LossConfig::new(0.0, 0.5), Err(LossError::InvalidDelta(0.0)));
        assert_eq!(LossConfig::new(1.0, -0.1), Err(LossError::InvalidOmega(-0.1)));
        assert_eq!(LossConfig::new(1.0, 1.1), Err(LossError::InvalidOmega(1.1)));
    }
}
