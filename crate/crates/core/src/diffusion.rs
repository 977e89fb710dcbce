//! Pieces shared by the sequentially trained model and the independently
//! trained baseline: configuration, the trained model, the replicated
//! training design and the reverse sampling chain.
//!
//! Step trees see the feature vector `(y_t, x_1..x_F, f(x))`: index 0 is the
//! noisy response, `1..=F` the original features and `F + 1` the mean
//! estimator's output.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Affine;
use crate::error::{Error, Result};
use crate::mean_estimator::{logit, sigmoid, LossKind, MeanEstimator, MeanEstimatorConfig};
use crate::metrics::SampleMatrix;
use crate::rng::{domain, stream};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::tree::{fit_tree_presorted, DecisionTree, FeatureKind, FeatureMatrix, SortedColumns, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Trees predict `y_0`, trained from `T` down to 1 on inputs produced by
    /// the tree one step later.
    Dbt,
    /// Trees predict the forward noise and are trained independently.
    CardT,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dbt => "dbt",
            ModelKind::CardT => "card_t",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dbt" => Some(ModelKind::Dbt),
            "card_t" | "card-t" => Some(ModelKind::CardT),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

/// Mean of the prior `N(mu, 1)` and of the forward process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMean {
    /// Per-row output of the mean estimator.
    Estimator,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbtConfig {
    pub schedule: ScheduleParams,
    /// Noisy copies of each training row per timestep.
    pub n_noise: usize,
    pub tree_params: TreeParams,
    pub prior_mean: PriorMean,
    pub task: Task,
    /// Label smoothing for the classification prototypes.
    pub prototype_epsilon: f64,
    pub seed: u64,
    pub mean_estimator: MeanEstimatorConfig,
}

impl Default for DbtConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleParams::default(),
            n_noise: 100,
            tree_params: TreeParams::default(),
            prior_mean: PriorMean::Estimator,
            task: Task::Regression,
            prototype_epsilon: 0.01,
            seed: 0,
            mean_estimator: MeanEstimatorConfig::default(),
        }
    }
}

impl DbtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.timesteps < 2 {
            return Err(Error::invalid("timesteps must be at least 2"));
        }
        if self.n_noise < 1 {
            return Err(Error::invalid("n_noise must be at least 1"));
        }
        if !(self.prototype_epsilon > 0.0 && self.prototype_epsilon < 0.5) {
            return Err(Error::invalid("prototype_epsilon must be in (0, 0.5)"));
        }
        self.tree_params.validate()?;
        self.mean_estimator.tree_params.validate()
    }
}

/// Map 0/1 labels to the logits of `eps` and `1 - eps`.
pub fn encode_prototypes(labels: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::invalid("prototype epsilon must be in (0, 0.5)"));
    }
    // logit(1 - eps) = -logit(eps); computing one side keeps them exact mirrors.
    let v = logit(1.0 - epsilon);
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c == 1.0 {
                Ok(v)
            } else if c == 0.0 {
                Ok(-v)
            } else {
                Err(Error::data(format!("label at row {i} is {c}, expected 0 or 1")))
            }
        })
        .collect()
}

/// Majority-vote labels with per-sample probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<u8>,
    /// `sigmoid` of every sample, same layout as the input.
    pub probabilities: SampleMatrix,
}

/// Threshold each sample's probability and take the majority over samples.
/// Ties go to label 1 when the mean probability reaches the threshold.
pub fn classify(samples: &SampleMatrix, threshold: f64) -> Classification {
    let probabilities = samples.map(sigmoid);
    let labels = probabilities
        .rows()
        .map(|p| {
            let ones = p.iter().filter(|&&v| v >= threshold).count();
            let zeros = p.len() - ones;
            match ones.cmp(&zeros) {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => 0,
                std::cmp::Ordering::Equal => {
                    u8::from(p.iter().sum::<f64>() / p.len() as f64 >= threshold)
                }
            }
        })
        .collect();
    Classification { labels, probabilities }
}

/// Run one reverse chain from `N(mu, 1)` down to `t = 1`, asking
/// `predict_y0(t, y_t)` for the clean-response estimate at every step.
pub fn reverse_chain<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    mu: f64,
    rng: &mut R,
    mut predict_y0: impl FnMut(usize, f64) -> f64,
) -> f64 {
    let mut y = mu + rng.sample::<f64, _>(StandardNormal);
    let mut t = schedule.timesteps();
    loop {
        let y0_hat = predict_y0(t, y);
        if t == 1 {
            return y0_hat;
        }
        let mean = schedule.posterior_mean(y, y0_hat, mu, t);
        y = schedule.posterior_sample(mean, t, rng);
        t -= 1;
    }
}

/// A trained diffusion model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    kind: ModelKind,
    config: DbtConfig,
    schedule: NoiseSchedule,
    mean_est: MeanEstimator,
    /// `step_trees[t - 1]` serves timestep `t`.
    step_trees: Vec<DecisionTree>,
    feature_kinds: Vec<FeatureKind>,
    /// Regression response scaling applied before diffusion.
    target_scale: Option<Affine>,
    /// Training positive rate, for classification.
    class_threshold: Option<f64>,
}

impl DiffusionModel {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        kind: ModelKind,
        config: DbtConfig,
        mean_est: MeanEstimator,
        step_trees: Vec<DecisionTree>,
        feature_kinds: Vec<FeatureKind>,
        target_scale: Option<Affine>,
        class_threshold: Option<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let schedule = NoiseSchedule::from_params(config.schedule)?;
        if step_trees.len() != schedule.timesteps() {
            return Err(Error::ModelFormat(format!(
                "{} step trees for {} timesteps",
                step_trees.len(),
                schedule.timesteps()
            )));
        }
        let width = feature_kinds.len() + 2;
        if let Some(t) = step_trees.iter().position(|tree| tree.n_features() != width) {
            return Err(Error::ModelFormat(format!(
                "step tree {} expects {} inputs, model has {width}",
                t + 1,
                step_trees[t].n_features()
            )));
        }
        if mean_est.n_features().is_some_and(|n| n != feature_kinds.len()) {
            return Err(Error::ModelFormat("mean estimator width does not match features".into()));
        }
        match config.task {
            Task::Regression if target_scale.is_none() => {
                return Err(Error::ModelFormat("regression model without target scaling".into()))
            }
            Task::BinaryClassification if class_threshold.is_none() => {
                return Err(Error::ModelFormat("classification model without threshold".into()))
            }
            _ => {}
        }
        Ok(Self {
            kind,
            config,
            schedule,
            mean_est,
            step_trees,
            feature_kinds,
            target_scale,
            class_threshold,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &DbtConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn mean_estimator(&self) -> &MeanEstimator {
        &self.mean_est
    }

    pub fn step_trees(&self) -> &[DecisionTree] {
        &self.step_trees
    }

    pub fn step_tree(&self, t: usize) -> &DecisionTree {
        &self.step_trees[t - 1]
    }

    pub fn feature_kinds(&self) -> &[FeatureKind] {
        &self.feature_kinds
    }

    pub fn target_scale(&self) -> Option<Affine> {
        self.target_scale
    }

    pub fn class_threshold(&self) -> Option<f64> {
        self.class_threshold
    }

    /// Gain importance of tree `t` over `(y_t, x.., f(x))`.
    pub fn importance(&self, t: usize) -> Result<Vec<f64>> {
        if t == 0 || t > self.step_trees.len() {
            return Err(Error::invalid(format!(
                "timestep {t} outside 1..={}",
                self.step_trees.len()
            )));
        }
        Ok(self.step_tree(t).gain_importance())
    }

    fn check_features(&self, x: &FeatureMatrix) -> Result<()> {
        if x.kinds() != self.feature_kinds.as_slice() {
            return Err(Error::Schema(format!(
                "feature table has kinds {:?}, model expects {:?}",
                x.kinds(),
                self.feature_kinds
            )));
        }
        Ok(())
    }

    /// Prior mean per row of `x`, together with the estimator outputs.
    fn prior(&self, x: &FeatureMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = self.mean_est.predict_matrix(x)?;
        let mu = match self.config.prior_mean {
            PriorMean::Estimator => f.clone(),
            PriorMean::Zero => vec![0.0; f.len()],
        };
        Ok((f, mu))
    }

    /// Draw `n_samples` responses per row. Chain `(j, s)` uses its own
    /// stream, so the result does not depend on the thread count.
    pub fn sample(&self, x: &FeatureMatrix, n_samples: usize, seed: u64) -> Result<SampleMatrix> {
        self.check_features(x)?;
        if n_samples == 0 {
            return Err(Error::invalid("need at least one sample per row"));
        }
        let (f, mu) = self.prior(x)?;
        let n_feat = x.n_features();
        let m = x.n_rows();
        let values: Vec<f64> = (0..m * n_samples)
            .into_par_iter()
            .map(|chain| {
                let j = chain / n_samples;
                let mut rng = stream(seed, domain::SAMPLE_CHAIN, chain as u64);
                let fj = f[j];
                let y0 = reverse_chain(&self.schedule, mu[j], &mut rng, |t, y| {
                    let out = self.step_trees[t - 1].predict_with(|k| {
                        if k == 0 {
                            y
                        } else if k <= n_feat {
                            x.value(j, k - 1)
                        } else {
                            fj
                        }
                    });
                    match self.kind {
                        ModelKind::Dbt => out,
                        ModelKind::CardT => self.schedule.y0_from_noise(y, out, mu[j], t),
                    }
                });
                self.target_scale.map_or(y0, |a| a.invert(y0))
            })
            .collect();
        SampleMatrix::new(m, n_samples, values)
    }

    /// Majority-vote classification from `n_samples` draws per row.
    pub fn classify(&self, x: &FeatureMatrix, n_samples: usize, seed: u64) -> Result<Classification> {
        let threshold = self
            .class_threshold
            .ok_or_else(|| Error::invalid("classify needs a classification model"))?;
        Ok(classify(&self.sample(x, n_samples, seed)?, threshold))
    }
}

/// Fitted tree for one timestep and its training error.
#[derive(Debug, Clone)]
pub struct StepFit {
    pub t: usize,
    pub tree: DecisionTree,
    pub mse: f64,
}

/// Training rows replicated `n_noise` times, with column 0 rewritten at each
/// timestep. Row `r` is copy `r % n_noise` of base row `r / n_noise`.
pub(crate) struct Prepared {
    pub config: DbtConfig,
    pub schedule: NoiseSchedule,
    pub mean_est: MeanEstimator,
    pub feature_kinds: Vec<FeatureKind>,
    pub target_scale: Option<Affine>,
    pub class_threshold: Option<f64>,
    pub matrix: FeatureMatrix,
    sorted: SortedColumns,
    /// Diffusion target per replicated row.
    pub y0: Vec<f64>,
    pub mu: Vec<f64>,
}

impl Prepared {
    pub fn new(x: &FeatureMatrix, y: &[f64], config: &DbtConfig, schedule: Option<NoiseSchedule>) -> Result<Self> {
        config.validate()?;
        let schedule = match schedule {
            Some(s) if s.timesteps() != config.schedule.timesteps => {
                return Err(Error::invalid(format!(
                    "schedule has {} timesteps, config asks for {}",
                    s.timesteps(),
                    config.schedule.timesteps
                )))
            }
            Some(s) => s,
            None => NoiseSchedule::from_params(config.schedule)?,
        };
        let n = x.n_rows();
        if n == 0 {
            return Err(Error::data("training data is empty"));
        }
        if y.len() != n {
            return Err(Error::data(format!("{} responses for {n} rows", y.len())));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("response at row {i} is not finite")));
        }

        let (targets, mean_est, target_scale, class_threshold) = match config.task {
            Task::Regression => {
                let scale = Affine::fit(y.iter().copied()).expect("non-empty");
                let z: Vec<f64> = y.iter().map(|&v| scale.apply(v)).collect();
                let est = MeanEstimator::fit(x, &z, LossKind::Squared, &config.mean_estimator)?;
                (z, est, Some(scale), None)
            }
            Task::BinaryClassification => {
                let protos = encode_prototypes(y, config.prototype_epsilon)?;
                let est = MeanEstimator::fit(x, y, LossKind::Logistic, &config.mean_estimator)?;
                let rate = y.iter().sum::<f64>() / n as f64;
                (protos, est, None, Some(rate))
            }
        };
        let f = mean_est.predict_matrix(x)?;

        let k = config.n_noise;
        let rep = |v: &[f64]| -> Vec<f64> { v.iter().flat_map(|&a| std::iter::repeat_n(a, k)).collect() };
        let mut columns = Vec::with_capacity(x.n_features() + 2);
        columns.push(vec![0.0; n * k]);
        for j in 0..x.n_features() {
            columns.push(rep(x.column(j)));
        }
        columns.push(rep(&f));
        let mut kinds = vec![FeatureKind::Numeric];
        kinds.extend_from_slice(x.kinds());
        kinds.push(FeatureKind::Numeric);
        let matrix = FeatureMatrix::new(kinds, columns)?;
        let sorted = SortedColumns::build(&matrix);
        let mu = match config.prior_mean {
            PriorMean::Estimator => rep(&f),
            PriorMean::Zero => vec![0.0; n * k],
        };
        Ok(Self {
            config: *config,
            schedule,
            mean_est,
            feature_kinds: x.kinds().to_vec(),
            target_scale,
            class_threshold,
            matrix,
            sorted,
            y0: rep(&targets),
            mu,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y0.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.schedule.timesteps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside 1..={}",
                self.schedule.timesteps()
            )));
        }
        Ok(())
    }

    /// Install the noisy inputs for a timestep and fit its tree on `targets`.
    pub fn fit_step(&mut self, t: usize, noisy: Vec<f64>, targets: &[f64]) -> Result<StepFit> {
        self.matrix.replace_column(0, noisy);
        self.sorted.refresh(&self.matrix, 0);
        let fit = fit_tree_presorted(&self.matrix, &self.sorted, targets, &self.config.tree_params)?;
        let leaves = fit.tree.leaves();
        let mse = targets
            .iter()
            .zip(&fit.leaf_of_row)
            .map(|(y, &l)| (y - leaves[l as usize]).powi(2))
            .sum::<f64>()
            / targets.len() as f64;
        Ok(StepFit { t, tree: fit.tree, mse })
    }

    pub fn into_model(self, kind: ModelKind, step_trees: Vec<DecisionTree>) -> Result<DiffusionModel> {
        DiffusionModel::from_parts(
            kind,
            self.config,
            self.mean_est,
            step_trees,
            self.feature_kinds,
            self.target_scale,
            self.class_threshold,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prototypes() {
        let p = encode_prototypes(&[0.0, 1.0], 0.01).unwrap();
        assert!((p[1] - 4.595_119_850_134_59).abs() < 1e-12);
        assert_eq!(p[0], -p[1]);
        let near = encode_prototypes(&[0.0, 1.0], 0.5 - 1e-9).unwrap();
        assert!(near.iter().all(|v| v.abs() < 1e-8));
        for eps in [0.001, 0.1, 0.3, 0.49] {
            let p = encode_prototypes(&[0.0, 1.0], eps).unwrap();
            assert!((p[0] + p[1]).abs() < 1e-12);
        }
        assert!(encode_prototypes(&[2.0], 0.01).is_err());
        assert!(encode_prototypes(&[1.0], 0.5).is_err());
    }

    #[test]
    fn classify_majority_and_ties() {
        let s = SampleMatrix::new(1, 4, vec![10.0; 4]).unwrap();
        let c = classify(&s, 0.5);
        assert_eq!(c.labels, vec![1]);
        assert!(c.probabilities.values().iter().all(|&p| p > 0.9999));

        let mut v = vec![-3.0; 6];
        v.extend([3.0; 4]);
        assert_eq!(classify(&SampleMatrix::new(1, 10, v).unwrap(), 0.5).labels, vec![0]);

        // Two votes each; the mean probability decides.
        let tie = SampleMatrix::new(1, 4, vec![5.0, 5.0, -0.1, -0.1]).unwrap();
        assert_eq!(classify(&tie, 0.5).labels, vec![1]);
        let tie = SampleMatrix::new(1, 4, vec![0.1, 0.1, -5.0, -5.0]).unwrap();
        assert_eq!(classify(&tie, 0.5).labels, vec![0]);

        // A lower threshold flips moderately negative logits.
        let low = SampleMatrix::new(1, 3, vec![-1.0; 3]).unwrap();
        assert_eq!(classify(&low, 0.5).labels, vec![0]);
        assert_eq!(classify(&low, 0.2).labels, vec![1]);
    }

    #[test]
    fn config_validation() {
        assert!(DbtConfig::default().validate().is_ok());
        let mut c = DbtConfig::default();
        c.schedule.timesteps = 1;
        assert!(c.validate().is_err());
        let c = DbtConfig {
            n_noise: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = DbtConfig {
            prototype_epsilon: 0.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn reverse_chain_with_exact_oracle_matches_posterior_chain() {
        // Point-mass data at c: the exact y0 predictor returns c everywhere,
        // so the chain is the forward posterior chain and ends at c.
        let s = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let c = 1.7;
        let mut rng = stream(1, domain::SAMPLE_CHAIN, 0);
        let mut visited = Vec::new();
        let out = reverse_chain(&s, 0.0, &mut rng, |t, y| {
            visited.push((t, y));
            c
        });
        assert_eq!(out, c);
        assert_eq!(visited.len(), 50);
        assert_eq!(visited.first().unwrap().0, 50);
        // Second-to-last state is y_1 ~ N(gamma-mix, tilde_beta_2): close to c.
        let (t, y1) = visited[49];
        assert_eq!(t, 1);
        assert!((y1 - c).abs() < 10.0 * s.tilde_beta(2).sqrt() + 0.02, "{y1}");
    }
}
