//! Linear variance schedule for the diffusion process.
//!
//! Step indices are 1-based: `beta(k)` for `k in 1..=k_max`. `alpha_bar(k)`
//! is the running product of `1 - beta` up to `k`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// The numbers needed to rebuild a schedule, as stored in checkpoints and
/// config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub k_max: usize,
    pub beta_1: f64,
    pub beta_k: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            k_max: 100,
            beta_1: 1e-4,
            beta_k: 0.05,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.k_max, self.beta_1, self.beta_k)
    }

    /// Parameter checks without building the tables.
    pub fn validate(&self) -> Result<()> {
        self.build().map(|_| ())
    }
}

impl NoiseSchedule {
    /// Linearly interpolated variances from `beta_1` at step 1 to `beta_k`
    /// at step `k_max`.
    pub fn linear(k_max: usize, beta_1: f64, beta_k: f64) -> Result<Self> {
        if k_max < 2 {
            return Err(Error::usage(format!(
                "schedule needs at least 2 steps, got {k_max}"
            )));
        }
        if !(beta_1 > 0.0 && beta_k < 1.0 && beta_1 <= beta_k) {
            return Err(Error::usage(format!(
                "variance bounds must satisfy 0 < beta_1 <= beta_k < 1, got ({beta_1}, {beta_k})"
            )));
        }
        // lerp form hits both endpoints exactly
        let beta: Vec<f64> = (0..k_max)
            .map(|i| {
                let t = i as f64 / (k_max - 1) as f64;
                beta_1 * (1.0 - t) + beta_k * t
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(k_max);
        let mut prod = 1.0;
        for b in &beta {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        Ok(NoiseSchedule { beta, alpha_bar })
    }

    pub fn k_max(&self) -> usize {
        self.beta.len()
    }

    /// Variance added at step `k` (1-based).
    pub fn beta(&self, k: usize) -> f64 {
        assert!(k >= 1 && k <= self.k_max(), "step {k} out of range");
        self.beta[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        1.0 - self.beta(k)
    }

    /// Product of `alpha` over steps `1..=k`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        assert!(k >= 1 && k <= self.k_max(), "step {k} out of range");
        self.alpha_bar[k - 1]
    }

    /// Closed-form marginal coefficients at step `k`: the clean signal is
    /// scaled by the first value and unit noise by the second.
    pub fn marginal_coefficients(&self, k: usize) -> (f64, f64) {
        let ab = self.alpha_bar(k);
        (ab.sqrt(), (1.0 - ab).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Error-free transformation of a product: double-double accumulation
    /// used as an extended-precision oracle for `alpha_bar`.
    fn dd_product(factors: impl Iterator<Item = f64>) -> f64 {
        fn two_prod(a: f64, b: f64) -> (f64, f64) {
            let p = a * b;
            let e = f64::mul_add(a, b, -p);
            (p, e)
        }
        let (mut hi, mut lo) = (1.0f64, 0.0f64);
        for f in factors {
            let (p, e) = two_prod(hi, f);
            hi = p;
            lo = f64::mul_add(lo, f, e);
            // renormalise
            let s = hi + lo;
            lo -= s - hi;
            hi = s;
        }
        hi + lo
    }

    #[test]
    fn endpoints_and_interior_are_linear() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(100), 0.05);
        // halfway point of the interpolation
        let expect = 1e-4 + (0.05 - 1e-4) * 49.0 / 99.0;
        assert!((s.beta(50) - expect).abs() < 1e-15);
        for k in 1..100 {
            assert!(s.beta(k) < s.beta(k + 1));
        }
    }

    #[test]
    fn alpha_bar_matches_extended_precision_oracle() {
        for (k_max, b1, bk) in [(100, 1e-4, 0.05), (50, 1e-4, 0.05), (20, 1e-3, 0.2)] {
            let s = NoiseSchedule::linear(k_max, b1, bk).unwrap();
            for k in 1..=k_max {
                let oracle = dd_product((1..=k).map(|i| 1.0 - s.beta(i)));
                let got = s.alpha_bar(k);
                let rel = (got - oracle).abs() / oracle.abs();
                assert!(rel < 1e-12, "k={k}: got {got}, oracle {oracle}, rel {rel}");
            }
        }
    }

    #[test]
    fn alpha_bar_decreases_strictly() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
        for k in 1..100 {
            assert!(s.alpha_bar(k + 1) < s.alpha_bar(k));
        }
        assert!(s.alpha_bar(100) > 0.0 && s.alpha_bar(100) < 0.1);
    }

    #[test]
    fn marginal_coefficients_square_to_one() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
        let (sig, noi) = s.marginal_coefficients(1);
        assert!((sig - 0.9999f64.sqrt()).abs() < 1e-15);
        assert!((noi - 0.0001f64.sqrt()).abs() < 1e-12);
        for k in 1..=100 {
            let (sig, noi) = s.marginal_coefficients(k);
            assert!((sig * sig + noi * noi - 1.0).abs() < 1e-12);
        }
        assert!(s.marginal_coefficients(100).0 < s.marginal_coefficients(99).0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(NoiseSchedule::linear(1, 1e-4, 0.05).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.05).is_err());
        assert!(NoiseSchedule::linear(10, 0.05, 1e-4).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn schedule_invariants(k_max in 2usize..300, b1 in 1e-6f64..0.01, span in 0.0f64..0.4) {
            let bk = b1 + span;
            let s = NoiseSchedule::linear(k_max, b1, bk).unwrap();
            let mut prev = 1.0;
            for k in 1..=k_max {
                prop_assert!(s.beta(k) >= b1 - 1e-15 && s.beta(k) <= bk + 1e-15);
                prop_assert!(s.alpha_bar(k) > 0.0 && s.alpha_bar(k) < prev + 1e-15);
                prev = s.alpha_bar(k);
            }
        }
    }
}
