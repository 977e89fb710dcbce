//! Closed-form quantities of the forward diffusion process.
//!
//! All per-timestep arrays are indexed `1..=T`; slot `0` holds the
//! `alpha_bar_0 = 1` convention and is otherwise unused.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Parameters that fully determine a linear schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            timesteps: DEFAULT_TIMESTEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    tilde_beta: Vec<f64>,
    gamma0: Vec<f64>,
    gamma1: Vec<f64>,
    gamma2: Vec<f64>,
}

/// One row of the posterior-mean coefficient table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientRow {
    pub t: usize,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub tilde_beta: f64,
}

impl NoiseSchedule {
    /// Linear schedule with `beta` interpolated from `beta_start` at `t = 1`
    /// to `beta_end` at `t = T`, both inclusive.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::invalid(format!(
                "schedule needs at least 2 timesteps, got {timesteps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "schedule requires 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }

        let n = timesteps + 1;
        let mut beta = vec![0.0; n];
        let mut alpha = vec![1.0; n];
        let mut alpha_bar = vec![1.0; n];
        let step = (beta_end - beta_start) / (timesteps - 1) as f64;
        for t in 1..=timesteps {
            beta[t] = if t == timesteps {
                beta_end
            } else {
                beta_start + step * (t - 1) as f64
            };
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
        }

        let mut tilde_beta = vec![0.0; n];
        let mut gamma0 = vec![0.0; n];
        let mut gamma1 = vec![0.0; n];
        let mut gamma2 = vec![0.0; n];
        for t in 1..=timesteps {
            let one_minus_ab = 1.0 - alpha_bar[t];
            let ab_prev = alpha_bar[t - 1];
            tilde_beta[t] = (1.0 - ab_prev) / one_minus_ab * beta[t];
            gamma0[t] = beta[t] * ab_prev.sqrt() / one_minus_ab;
            gamma1[t] = (1.0 - ab_prev) * alpha[t].sqrt() / one_minus_ab;
            gamma2[t] = 1.0
                + (alpha_bar[t].sqrt() - 1.0) * (alpha[t].sqrt() + ab_prev.sqrt()) / one_minus_ab;
        }

        Ok(Self {
            params: ScheduleParams {
                timesteps,
                beta_start,
                beta_end,
            },
            beta,
            alpha,
            alpha_bar,
            tilde_beta,
            gamma0,
            gamma1,
            gamma2,
        })
    }

    pub fn from_params(params: ScheduleParams) -> Result<Self> {
        Self::linear(params.timesteps, params.beta_start, params.beta_end)
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn timesteps(&self) -> usize {
        self.params.timesteps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn tilde_beta(&self, t: usize) -> f64 {
        self.tilde_beta[t]
    }

    /// `(gamma0, gamma1, gamma2)` weights of `(y0, y_t, mu_T)` in the posterior mean.
    pub fn gammas(&self, t: usize) -> (f64, f64, f64) {
        (self.gamma0[t], self.gamma1[t], self.gamma2[t])
    }

    /// Draw from `q(y_t | y0)` given a standard-normal `eps`.
    pub fn forward_sample(&self, y0: f64, prior_mean: f64, t: usize, eps: f64) -> f64 {
        let sab = self.alpha_bar[t].sqrt();
        sab * y0 + (1.0 - sab) * prior_mean + (1.0 - self.alpha_bar[t]).sqrt() * eps
    }

    /// Mean of `q(y_{t-1} | y_t, y0)`. Valid for `t >= 2`.
    pub fn posterior_mean(&self, y_t: f64, y0_hat: f64, prior_mean: f64, t: usize) -> f64 {
        self.gamma0[t] * y0_hat + self.gamma1[t] * y_t + self.gamma2[t] * prior_mean
    }

    /// Draw `y_{t-1}` from the forward-process posterior with the given mean.
    pub fn posterior_sample<R: Rng + ?Sized>(&self, mean: f64, t: usize, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        mean + self.tilde_beta[t].sqrt() * z
    }

    /// Invert [`forward_sample`](Self::forward_sample) for `y0` given a noise estimate.
    pub fn y0_from_noise(&self, y_t: f64, eps_hat: f64, prior_mean: f64, t: usize) -> f64 {
        let sab = self.alpha_bar[t].sqrt();
        (y_t - (1.0 - sab) * prior_mean - (1.0 - self.alpha_bar[t]).sqrt() * eps_hat) / sab
    }

    /// Score of the forward marginal implied by a noise value.
    pub fn noise_to_score(&self, eps: f64, t: usize) -> f64 {
        -eps / (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// Inverse of [`noise_to_score`](Self::noise_to_score).
    pub fn score_to_noise(&self, score: f64, t: usize) -> f64 {
        -(1.0 - self.alpha_bar[t]).sqrt() * score
    }

    /// Coefficient rows from `t = T` down to `t = 2`, in sampling order.
    pub fn coefficient_table(&self) -> Vec<CoefficientRow> {
        (2..=self.timesteps())
            .rev()
            .map(|t| CoefficientRow {
                t,
                gamma0: self.gamma0[t],
                gamma1: self.gamma1[t],
                gamma2: self.gamma2[t],
                tilde_beta: self.tilde_beta[t],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Reference values computed with 50-digit arithmetic (mpmath).
    const ALPHA_BAR_1000: f64 = 4.035_829_765_375_683_3e-5;
    const Y0_FROM_NOISE_T10: f64 = 0.487_213_460_712_376_34;
    const TILDE_BETA_500: f64 = 0.010_031_355_414_613_688;

    fn default_schedule() -> NoiseSchedule {
        NoiseSchedule::from_params(ScheduleParams::default()).unwrap()
    }

    #[test]
    fn linear_endpoints() {
        let s = default_schedule();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(1000), 0.02);
        assert_eq!(s.alpha_bar(1), 0.9999);
        assert!((s.alpha_bar(1000) - ALPHA_BAR_1000).abs() < 1e-15);
        assert!((s.alpha_bar(1000) - 4.04e-5).abs() < 1e-7);
        assert_relative_eq!(s.tilde_beta(500), TILDE_BETA_500, max_relative = 1e-10);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(NoiseSchedule::linear(1, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
        assert!(NoiseSchedule::linear(2, 0.01, 0.01).is_ok());
    }

    #[test]
    fn schedule_invariants_hold_everywhere() {
        let s = default_schedule();
        for t in 1..=1000 {
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
            if t > 1 {
                assert!(s.beta(t) >= s.beta(t - 1));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                let (g0, g1, g2) = s.gammas(t);
                assert!((g0 + g1 + g2 - 1.0).abs() < 1e-12, "t={t}");
                assert!(s.tilde_beta(t) > 0.0);
            }
        }
    }

    #[test]
    fn forward_sample_examples() {
        let s = default_schedule();
        let t = 321;
        let sab = s.alpha_bar(t).sqrt();
        assert_eq!(s.forward_sample(1.7, -0.4, t, 0.0), sab * 1.7 + (1.0 - sab) * -0.4);
        assert_relative_eq!(
            s.forward_sample(1.0, 0.0, 1000, 0.0),
            0.006_352_818_087_570_022,
            max_relative = 1e-12
        );
    }

    #[test]
    fn posterior_mean_fixed_point_and_late_coefficients() {
        let s = default_schedule();
        for t in [2, 10, 500, 1000] {
            assert!((s.posterior_mean(2.5, 2.5, 2.5, t) - 2.5).abs() < 2.5e-11);
        }
        let (g0, g1, g2) = s.gammas(1000);
        assert!((g1 - 1.0).abs() < 0.02);
        assert!(g0.abs() < 0.02);
        assert!(g2.abs() < 0.02);
    }

    #[test]
    fn posterior_sample_moments() {
        let s = default_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = 0.75;
        let draws: Vec<f64> = (0..n).map(|_| s.posterior_sample(mean, 500, &mut rng)).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let var = s.tilde_beta(500);
        assert!((m - mean).abs() < 3.0 * (var / n as f64).sqrt());
        // Std err of a Gaussian sample variance is var * sqrt(2 / (n - 1)).
        assert!((v - var).abs() < 3.0 * var * (2.0 / (n - 1) as f64).sqrt());
    }

    #[test]
    fn vanishing_posterior_variance_collapses_to_mean() {
        let mut prev = f64::INFINITY;
        for beta in [1e-4, 1e-8, 1e-12] {
            let s = NoiseSchedule::linear(2, beta, beta).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let dev = (s.posterior_sample(3.25, 2, &mut rng) - 3.25).abs();
            assert!(dev <= 6.0 * s.tilde_beta(2).sqrt());
            assert!(dev < prev);
            prev = dev;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn y0_from_noise_examples() {
        let s = default_schedule();
        assert_relative_eq!(
            s.y0_from_noise(0.5, 0.3, 0.2, 10),
            Y0_FROM_NOISE_T10,
            max_relative = 1e-12
        );
        assert_eq!(s.y0_from_noise(0.9, 0.0, 0.0, 40), 0.9 / s.alpha_bar(40).sqrt());
    }

    #[test]
    fn score_and_noise_are_inverse() {
        let s = default_schedule();
        assert_eq!(s.noise_to_score(0.0, 17), 0.0);
        for t in [1, 50, 999] {
            let eps = -1.3;
            assert_relative_eq!(
                s.score_to_noise(s.noise_to_score(eps, t), t),
                eps,
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn coefficient_table_shape_and_shape_of_curves() {
        let s = default_schedule();
        let table = s.coefficient_table();
        assert_eq!(table.len(), 999);
        assert_eq!(table[0].t, 1000);
        assert_eq!(table.last().unwrap().t, 2);
        assert!(table.iter().all(|r| r.gamma2 < 0.02));
        assert!(table.iter().filter(|r| r.t >= 100).all(|r| r.gamma1 > 0.9));
        let g0 = |t: usize| s.gammas(t).0;
        assert!(g0(2) > g0(500));
    }

    proptest! {
        #[test]
        fn forward_then_invert_recovers_y0(
            y0 in -10.0f64..10.0,
            mu in -10.0f64..10.0,
            t in 1usize..=1000,
            eps in -5.0f64..5.0,
        ) {
            let s = default_schedule();
            let y_t = s.forward_sample(y0, mu, t, eps);
            let back = s.y0_from_noise(y_t, eps, mu, t);
            prop_assert!((back - y0).abs() < 1e-10, "{back} vs {y0}");
        }
    }
}
