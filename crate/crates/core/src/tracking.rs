//! Scalar Kalman estimator for the lateral spinous-process location.
//!
//! Constant-position model with identity transition: the predict step
//! only inflates the variance (P += Q), and measurements, when present,
//! pull the estimate by the Kalman gain. Gap frames carry no measurement;
//! the estimate coasts while P keeps growing, so the first detection
//! after a gap gets an elevated gain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    /// Process noise variance (px^2).
    pub q: f64,
    /// Measurement noise variance (px^2).
    pub r: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig { q: 0.5, r: 500.0 }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q <= 0.0 {
            return Err(Error::config("kalman.q", "must be > 0"));
        }
        if self.r <= 0.0 {
            return Err(Error::config("kalman.r", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    /// Estimated lateral location at frame scale (px).
    pub x_hat: f64,
    /// Estimate variance (px^2).
    pub p: f64,
    pub q: f64,
    pub r: f64,
    /// False until the first measurement seeds the estimate; before that
    /// the estimate reads as the image center.
    pub initialized: bool,
}

impl KalmanState {
    pub fn new(cfg: KalmanConfig) -> Self {
        KalmanState {
            x_hat: crate::imaging::WIDTH_PX as f64 / 2.0,
            p: cfg.r,
            q: cfg.q,
            r: cfg.r,
            initialized: false,
        }
    }

    /// Gain the next measurement would receive.
    pub fn current_gain(&self) -> f64 {
        (self.p + self.q) / (self.p + self.q + self.r)
    }
}

/// One filter step: predict, then update if a measurement is present.
/// Returns the new state and the current estimate.
pub fn kf_step(state: &KalmanState, measurement: Option<f64>) -> (KalmanState, f64) {
    let mut s = *state;
    if !s.initialized {
        if let Some(z) = measurement {
            s.x_hat = z;
            s.p = s.r;
            s.initialized = true;
        }
        return (s, s.x_hat);
    }
    s.p += s.q;
    if let Some(z) = measurement {
        let k = s.p / (s.p + s.r);
        s.x_hat += k * (z - s.x_hat);
        s.p *= 1.0 - k;
    }
    (s, s.x_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn fresh() -> KalmanState {
        KalmanState::new(KalmanConfig::default())
    }

    /// Closed-form steady-state covariance and gain for the
    /// constant-position filter: P* = (-Q + sqrt(Q^2 + 4QR)) / 2.
    fn steady_state(q: f64, r: f64) -> (f64, f64) {
        let p = (-q + (q * q + 4.0 * q * r).sqrt()) / 2.0;
        let k = (p + q) / (p + q + r);
        (p, k)
    }

    #[test]
    fn estimate_is_image_center_before_first_measurement() {
        let s = fresh();
        let (s, est) = kf_step(&s, None);
        assert_eq!(est, 320.0);
        assert!(!s.initialized);
    }

    #[test]
    fn first_measurement_initializes() {
        let (s, est) = kf_step(&fresh(), Some(297.0));
        assert_eq!(est, 297.0);
        assert!(s.initialized);
    }

    #[test]
    fn absent_measurement_coasts_and_grows_p() {
        let (s, _) = kf_step(&fresh(), Some(300.0));
        let (s2, est) = kf_step(&s, None);
        assert_eq!(est, s.x_hat);
        assert_eq!(s2.p, s.p + s.q);
    }

    #[test]
    fn zero_innovation_leaves_estimate_unchanged() {
        let (s, _) = kf_step(&fresh(), Some(300.0));
        let (_, est) = kf_step(&s, Some(s.x_hat));
        assert_eq!(est, s.x_hat);
    }

    #[test]
    fn gain_converges_to_closed_form_fixed_point() {
        let (p_star, k_star) = steady_state(0.5, 500.0);
        assert!((p_star - 15.56336460086847).abs() < 1e-12);
        assert!((k_star - 0.031127).abs() < 1e-6);

        let mut s = fresh();
        let mut converged_at = None;
        for step in 0..200 {
            if s.initialized && (s.current_gain() - k_star).abs() < 1e-6 {
                converged_at = Some(step);
                break;
            }
            let (next, _) = kf_step(&s, Some(320.0));
            s = next;
        }
        let step = converged_at.expect("gain did not converge within 200 steps");
        assert!(step <= 200, "converged at step {step}");
    }

    #[test]
    fn converged_estimate_approaches_constant_measurement_monotonically() {
        let (mut s, _) = kf_step(&fresh(), Some(100.0));
        let target = 350.0;
        let mut last_err = (s.x_hat - target).abs();
        for _ in 0..500 {
            let (next, est) = kf_step(&s, Some(target));
            let err = (est - target).abs();
            assert!(err <= last_err + 1e-12);
            last_err = err;
            s = next;
        }
        assert!(last_err < 1.0);
    }

    #[test]
    fn filtered_noise_is_tighter_than_raw_noise() {
        let mut rng = crate::rng::substream(11, "kf-test");
        let truth = 320.0;
        let sigma = 10.0;
        let mut s = fresh();
        let mut raw_sq = 0.0;
        let mut est_sq = 0.0;
        let mut n = 0usize;
        for i in 0..2000 {
            let noise: f64 = rng.sample(StandardNormal);
            let z = truth + sigma * noise;
            let (next, est) = kf_step(&s, Some(z));
            s = next;
            if i >= 100 {
                raw_sq += (z - truth) * (z - truth);
                est_sq += (est - truth) * (est - truth);
                n += 1;
            }
        }
        let raw_std = (raw_sq / n as f64).sqrt();
        let est_std = (est_sq / n as f64).sqrt();
        assert!(
            est_std < raw_std,
            "estimate std {est_std} not below measurement std {raw_std}"
        );
    }

    #[test]
    fn gap_steps_never_jump_more_than_gain_times_innovation() {
        let mut rng = crate::rng::substream(5, "kf-gap");
        let mut s = fresh();
        let mut prev_est = 320.0;
        for i in 0..3000 {
            // vertebra/gap alternation: 60% measured
            let measured = (i % 10) < 6;
            let z = if measured {
                Some(320.0 + 30.0 * ((i as f64) / 50.0).sin() + rng.random_range(-5.0..5.0))
            } else {
                None
            };
            let gain = s.current_gain();
            let innovation = z.map(|z| (z - s.x_hat).abs()).unwrap_or(0.0);
            let (next, est) = kf_step(&s, z);
            let jump = (est - prev_est).abs();
            if s.initialized {
                assert!(
                    jump <= gain * innovation + 1e-12,
                    "step {i}: jump {jump} > K*innovation {}",
                    gain * innovation
                );
            }
            prev_est = est;
            s = next;
        }
    }

    proptest! {
        #[test]
        fn gain_stays_in_unit_interval(
            q in 1e-3..10.0f64,
            r in 1e-2..1e4f64,
            zs in proptest::collection::vec(0.0..640.0f64, 1..50)
        ) {
            let mut s = KalmanState::new(KalmanConfig { q, r });
            for z in zs {
                prop_assert!(s.current_gain() > 0.0 && s.current_gain() < 1.0);
                let (next, _) = kf_step(&s, Some(z));
                s = next;
            }
        }
    }
}
