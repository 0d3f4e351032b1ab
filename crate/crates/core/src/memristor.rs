//! Threshold memristor with a piecewise-linear, voltage-driven rate law.
//!
//! The state variable is the resistance itself. Below the threshold voltage
//! the resistance drifts at slope `alpha`, above it at slope `beta`; outside
//! `[r_min, r_max]` the resistance is pinned (see [`MemristorParams::clamp`]).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemristorParams {
    /// Rate coefficient below threshold, Ω/(V·s).
    pub alpha: f64,
    /// Rate coefficient above threshold, Ω/(V·s).
    pub beta: f64,
    /// Threshold voltage, V.
    pub v_threshold: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub r_init: f64,
}

impl MemristorParams {
    /// A fixed ohmic resistor expressed as a memristor that never moves.
    pub fn passive(resistance: f64) -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            v_threshold: 0.0,
            r_min: resistance,
            r_max: resistance,
            r_init: resistance,
        }
    }

    pub fn is_passive(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0 && self.r_min == self.r_max
    }

    /// dR/dt for a voltage drop `v` across the element.
    ///
    /// `f(v) = beta*v + (alpha - beta)/2 * (|v + v_t| - |v - v_t|)`, an odd
    /// function that is `alpha*v` inside `[-v_t, v_t]`.
    pub fn rate(&self, v: f64) -> f64 {
        let vt = self.v_threshold;
        self.beta * v + 0.5 * (self.alpha - self.beta) * ((v + vt).abs() - (v - vt).abs())
    }

    pub fn clamp(&self, r: f64) -> f64 {
        r.max(self.r_min).min(self.r_max)
    }

    /// Returns a description of the first broken parameter invariant.
    pub fn check(&self) -> Option<String> {
        let all = [
            self.alpha,
            self.beta,
            self.v_threshold,
            self.r_min,
            self.r_max,
            self.r_init,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Some("non-finite parameter".into());
        }
        if self.r_min <= 0.0 {
            return Some(format!("r_min = {} must be positive", self.r_min));
        }
        if !(self.r_min <= self.r_init && self.r_init <= self.r_max) {
            return Some(format!(
                "r_init = {} outside [{}, {}]",
                self.r_init, self.r_min, self.r_max
            ));
        }
        if self.v_threshold < 0.0 {
            return Some(format!("v_threshold = {} is negative", self.v_threshold));
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(alpha: f64, beta: f64, vt: f64) -> MemristorParams {
        MemristorParams {
            alpha,
            beta,
            v_threshold: vt,
            r_min: 675.0,
            r_max: 10_000.0,
            r_init: 10_000.0,
        }
    }

    #[test]
    fn equal_slopes_collapse_to_linear() {
        assert_eq!(params(146_000.0, 146_000.0, 4.0).rate(0.5), 73_000.0);
    }

    #[test]
    fn rate_vanishes_at_zero() {
        assert_eq!(params(1_000.0, 100_000.0, 4.0).rate(0.0), 0.0);
        assert_eq!(MemristorParams::passive(10.0).rate(3.0), 0.0);
    }

    #[test]
    fn rate_above_threshold() {
        let p = params(1_000.0, 100_000.0, 4.0);
        assert_eq!(p.rate(5.0), 104_000.0);
        assert_eq!(p.rate(-5.0), -104_000.0);
        assert_eq!(p.rate(2.0), 2_000.0);
    }

    #[test]
    fn clamp_examples() {
        let p = params(0.0, 0.0, 0.0);
        assert_eq!(p.clamp(12_000.0), 10_000.0);
        assert_eq!(p.clamp(5_000.0), 5_000.0);
        let cube = MemristorParams {
            r_min: 1.45,
            r_max: 1.55,
            r_init: 1.5,
            ..p
        };
        assert_eq!(cube.clamp(1.40), 1.45);
    }

    #[test]
    fn check_rejects_bad_params() {
        assert!(params(1.0, 1.0, 1.0).check().is_none());
        assert!(MemristorParams::passive(10.0).check().is_none());
        assert!(MemristorParams::passive(0.0).check().is_some());
        let mut p = params(1.0, 1.0, 1.0);
        p.r_init = 20_000.0;
        assert!(p.check().unwrap().contains("r_init"));
        p = params(1.0, 1.0, -1.0);
        assert!(p.check().unwrap().contains("v_threshold"));
        p = params(f64::NAN, 1.0, 1.0);
        assert!(p.check().is_some());
    }

    proptest! {
        #[test]
        fn rate_is_odd(a in 0.0..1e6f64, b in 0.0..1e6f64, vt in 0.0..10.0f64, v in -20.0..20.0f64) {
            let p = params(a, b, vt);
            prop_assert_eq!(p.rate(-v), -p.rate(v));
        }

        #[test]
        fn rate_continuous_at_threshold(a in 0.0..1e3f64, b in 0.0..1e3f64, vt in 0.01..10.0f64) {
            let p = params(a, b, vt);
            let eps = 1e-9;
            for s in [1.0, -1.0] {
                let left = p.rate(s * (vt - eps));
                let right = p.rate(s * (vt + eps));
                prop_assert!((left - s * a * vt).abs() < 1e-5);
                prop_assert!((right - s * a * vt).abs() < 1e-5);
            }
        }

        #[test]
        fn threshold_irrelevant_when_slopes_equal(a in 0.0..1e6f64, vt1 in 0.0..100.0f64, vt2 in 0.0..100.0f64, v in -200.0..200.0f64) {
            let r1 = params(a, a, vt1).rate(v);
            let r2 = params(a, a, vt2).rate(v);
            prop_assert_eq!(r1, r2);
        }

        #[test]
        fn clamp_idempotent(r in -1e5..1e5f64) {
            let p = params(0.0, 0.0, 0.0);
            let once = p.clamp(r);
            prop_assert_eq!(p.clamp(once), once);
            prop_assert!(once >= p.r_min && once <= p.r_max);
        }
    }
}
