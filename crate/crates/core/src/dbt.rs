//! Sequentially trained step trees.
//!
//! Timesteps are fitted from `T` down to 1. At `T` the noisy input is a prior
//! draw. Below `T` each replicated row is pushed one step forward from its
//! true response, denoised by the tree just fitted for `t + 1`, and then
//! resampled from the posterior, so tree `t` trains on the kind of input it
//! will receive during sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::diffusion::{DbtConfig, DiffusionModel, ModelKind, Prepared, StepFit};
use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use crate::schedule::NoiseSchedule;
use crate::tree::{DecisionTree, FeatureMatrix};

pub struct DbtTrainer {
    prep: Prepared,
}

impl DbtTrainer {
    /// Fit the mean estimator and build the replicated design.
    pub fn new(x: &FeatureMatrix, y: &[f64], config: &DbtConfig) -> Result<Self> {
        Ok(Self {
            prep: Prepared::new(x, y, config, None)?,
        })
    }

    /// As [`new`](Self::new) with a schedule built elsewhere; its length must
    /// match the config.
    pub fn with_schedule(x: &FeatureMatrix, y: &[f64], config: &DbtConfig, schedule: NoiseSchedule) -> Result<Self> {
        Ok(Self {
            prep: Prepared::new(x, y, config, Some(schedule))?,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.prep.schedule.timesteps()
    }

    /// Rows each step tree trains on.
    pub fn n_training_rows(&self) -> usize {
        self.prep.n_rows()
    }

    /// Fit the tree for timestep `t`. Below `T`, `successor` must be the tree
    /// for `t + 1`. Noise for `t` comes from its own stream, so the result
    /// depends only on `t`, the data and `successor`.
    pub fn fit_timestep(&mut self, t: usize, successor: Option<&DecisionTree>) -> Result<StepFit> {
        self.prep.check_t(t)?;
        let p = &self.prep;
        let n = p.n_rows();
        let mut rng = stream(p.config.seed, domain::DBT_TIMESTEP, t as u64);
        let noisy: Vec<f64> = if t == p.schedule.timesteps() {
            p.mu.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect()
        } else {
            let next = successor.ok_or_else(|| Error::invalid(format!("timestep {t} needs the tree for {}", t + 1)))?;
            if next.n_features() != p.matrix.n_features() {
                return Err(Error::invalid(format!(
                    "successor tree has {} inputs, expected {}",
                    next.n_features(),
                    p.matrix.n_features()
                )));
            }
            let draws: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let s = &p.schedule;
            let sd = s.tilde_beta(t + 1).sqrt();
            let m = &p.matrix;
            (0..n)
                .into_par_iter()
                .map(|r| {
                    let (eps, z) = draws[r];
                    let y_next = s.forward_sample(p.y0[r], p.mu[r], t + 1, eps);
                    let y0_hat = next.predict_with(|j| if j == 0 { y_next } else { m.value(r, j) });
                    s.posterior_mean(y_next, y0_hat, p.mu[r], t + 1) + sd * z
                })
                .collect()
        };
        let targets = std::mem::take(&mut self.prep.y0);
        let fit = self.prep.fit_step(t, noisy, &targets);
        self.prep.y0 = targets;
        fit
    }

    /// Fit every timestep, reporting each fit to `on_step`.
    pub fn train(mut self, mut on_step: impl FnMut(&StepFit)) -> Result<DiffusionModel> {
        let big_t = self.timesteps();
        let mut trees: Vec<Option<DecisionTree>> = vec![None; big_t];
        for t in (1..=big_t).rev() {
            let fit = self.fit_timestep(t, trees.get(t).and_then(Option::as_ref))?;
            on_step(&fit);
            trees[t - 1] = Some(fit.tree);
        }
        let trees = trees.into_iter().map(|t| t.expect("every timestep fitted")).collect();
        self.prep.into_model(ModelKind::Dbt, trees)
    }
}

/// Train on a dataset encoded under its own schema.
pub fn train_dbt(train: &Dataset, config: &DbtConfig) -> Result<DiffusionModel> {
    train_dbt_logged(train, config, |_| {})
}

pub fn train_dbt_logged(train: &Dataset, config: &DbtConfig, on_step: impl FnMut(&StepFit)) -> Result<DiffusionModel> {
    let x = train.to_matrix()?;
    DbtTrainer::new(&x, train.require_response()?, config)?.train(on_step)
}
