//! Independently trained noise-prediction step trees.
//!
//! Tree `t` sees `y_t` drawn straight from the forward process and learns the
//! noise that produced it. No tree depends on another, so timesteps can be
//! fitted in any order.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::diffusion::{DbtConfig, DiffusionModel, ModelKind, Prepared, StepFit};
use crate::error::Result;
use crate::rng::{domain, stream};
use crate::tree::{DecisionTree, FeatureMatrix};

pub struct CardTTrainer {
    prep: Prepared,
}

impl CardTTrainer {
    pub fn new(x: &FeatureMatrix, y: &[f64], config: &DbtConfig) -> Result<Self> {
        Ok(Self {
            prep: Prepared::new(x, y, config, None)?,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.prep.schedule.timesteps()
    }

    pub fn fit_timestep(&mut self, t: usize) -> Result<StepFit> {
        self.prep.check_t(t)?;
        let p = &self.prep;
        let mut rng = stream(p.config.seed, domain::CARD_T_TIMESTEP, t as u64);
        let eps: Vec<f64> = (0..p.n_rows()).map(|_| rng.sample(StandardNormal)).collect();
        let noisy = eps
            .iter()
            .zip(p.y0.iter().zip(&p.mu))
            .map(|(&e, (&y0, &mu))| p.schedule.forward_sample(y0, mu, t, e))
            .collect();
        self.prep.fit_step(t, noisy, &eps)
    }

    /// Fit timesteps in the given order, which must cover `1..=T` once each.
    pub fn train_in_order(mut self, order: &[usize], mut on_step: impl FnMut(&StepFit)) -> Result<DiffusionModel> {
        let big_t = self.timesteps();
        let mut trees: Vec<Option<DecisionTree>> = vec![None; big_t];
        for &t in order {
            let fit = self.fit_timestep(t)?;
            on_step(&fit);
            trees[t - 1] = Some(fit.tree);
        }
        let trees = trees
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| crate::Error::invalid(format!("timestep {} was not fitted", i + 1))))
            .collect::<Result<_>>()?;
        self.prep.into_model(ModelKind::CardT, trees)
    }

    /// Fit from `T` down to 1.
    pub fn train(self, on_step: impl FnMut(&StepFit)) -> Result<DiffusionModel> {
        let order: Vec<usize> = (1..=self.timesteps()).rev().collect();
        self.train_in_order(&order, on_step)
    }
}

pub fn train_card_t(train: &Dataset, config: &DbtConfig) -> Result<DiffusionModel> {
    train_card_t_logged(train, config, |_| {})
}

pub fn train_card_t_logged(train: &Dataset, config: &DbtConfig, on_step: impl FnMut(&StepFit)) -> Result<DiffusionModel> {
    let x = train.to_matrix()?;
    CardTTrainer::new(&x, train.require_response()?, config)?.train(on_step)
}
