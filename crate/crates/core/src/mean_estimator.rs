//! Gradient-boosted conditional mean estimator built from [`crate::tree`].
//!
//! Squared loss fits residuals. Logistic loss fits the tree structure on the
//! negative gradient and then replaces each leaf with a one-step Newton
//! estimate `sum(g) / sum(h)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{fit_tree_presorted, DecisionTree, FeatureMatrix, SortedColumns, TreeParams};

const HESSIAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimatorConfig {
    pub n_trees: usize,
    pub tree_params: TreeParams,
    pub shrinkage: f64,
}

impl Default for MeanEstimatorConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            tree_params: TreeParams {
                num_leaves: 31,
                ..TreeParams::default()
            },
            shrinkage: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanEstimator {
    pub loss: LossKind,
    pub base_score: f64,
    pub shrinkage: f64,
    /// Trees with shrinkage already folded into their leaf values.
    pub trees: Vec<DecisionTree>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl MeanEstimator {
    pub fn fit(
        features: &FeatureMatrix,
        targets: &[f64],
        loss: LossKind,
        config: &MeanEstimatorConfig,
    ) -> Result<Self> {
        Self::fit_traced(features, targets, loss, config, |_, _| {})
    }

    /// Like [`fit`](Self::fit), calling `on_stage(stage, training_loss)` after
    /// the base score (stage 0) and after every tree.
    pub fn fit_traced(
        features: &FeatureMatrix,
        targets: &[f64],
        loss: LossKind,
        config: &MeanEstimatorConfig,
        mut on_stage: impl FnMut(usize, f64),
    ) -> Result<Self> {
        let n = features.n_rows();
        if n == 0 {
            return Err(Error::data("cannot fit mean estimator on empty data"));
        }
        if targets.len() != n {
            return Err(Error::data(format!("{} targets for {n} rows", targets.len())));
        }
        if !(config.shrinkage > 0.0) {
            return Err(Error::invalid("shrinkage must be positive"));
        }
        config.tree_params.validate()?;

        let base_score = match loss {
            LossKind::Squared => targets.iter().sum::<f64>() / n as f64,
            LossKind::Logistic => {
                if let Some(i) = targets.iter().position(|&y| y != 0.0 && y != 1.0) {
                    return Err(Error::data(format!(
                        "logistic loss needs 0/1 labels, row {i} has {}",
                        targets[i]
                    )));
                }
                let positives = targets.iter().filter(|&&y| y == 1.0).count();
                if positives == 0 || positives == n {
                    return Err(Error::data("logistic loss needs both classes present"));
                }
                logit(positives as f64 / n as f64)
            }
        };

        let sorted = SortedColumns::build(features);
        let mut raw = vec![base_score; n];
        on_stage(0, training_loss(loss, targets, &raw));
        // Structure is learned at unit rate; shrinkage is applied to the leaves.
        let structure_params = TreeParams {
            learning_rate: 1.0,
            ..config.tree_params
        };
        let mut trees = Vec::with_capacity(config.n_trees);
        for stage in 1..=config.n_trees {
            let grad: Vec<f64> = match loss {
                LossKind::Squared => targets.iter().zip(&raw).map(|(y, f)| y - f).collect(),
                LossKind::Logistic => targets.iter().zip(&raw).map(|(y, f)| y - sigmoid(*f)).collect(),
            };
            let fit = fit_tree_presorted(features, &sorted, &grad, &structure_params)?;
            let mut tree = fit.tree;
            match loss {
                LossKind::Squared => {
                    for v in tree.leaves_mut() {
                        *v *= config.shrinkage;
                    }
                }
                LossKind::Logistic => {
                    let k = tree.leaf_count();
                    let mut g_sum = vec![0.0; k];
                    let mut h_sum = vec![0.0; k];
                    for (i, &leaf) in fit.leaf_of_row.iter().enumerate() {
                        let p = sigmoid(raw[i]);
                        g_sum[leaf as usize] += grad[i];
                        h_sum[leaf as usize] += p * (1.0 - p);
                    }
                    for (l, v) in tree.leaves_mut().iter_mut().enumerate() {
                        *v = config.shrinkage * g_sum[l] / h_sum[l].max(HESSIAN_FLOOR);
                    }
                }
            }
            for (i, &leaf) in fit.leaf_of_row.iter().enumerate() {
                raw[i] += tree.leaves()[leaf as usize];
            }
            trees.push(tree);
            on_stage(stage, training_loss(loss, targets, &raw));
        }

        Ok(Self {
            loss,
            base_score,
            shrinkage: config.shrinkage,
            trees,
        })
    }

    pub fn n_features(&self) -> Option<usize> {
        self.trees.first().map(DecisionTree::n_features)
    }

    pub fn predict_raw_with(&self, get: impl Fn(usize) -> f64 + Copy) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict_with(get)).sum::<f64>()
    }

    /// Conditional mean (squared loss) or positive-class probability (logistic loss).
    pub fn predict_with(&self, get: impl Fn(usize) -> f64 + Copy) -> f64 {
        let raw = self.predict_raw_with(get);
        match self.loss {
            LossKind::Squared => raw,
            LossKind::Logistic => sigmoid(raw),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if let Some(n) = self.n_features() {
            if n != row.len() {
                return Err(Error::Schema(format!(
                    "row has {} features, estimator expects {n}",
                    row.len()
                )));
            }
        }
        Ok(self.predict_with(|j| row[j]))
    }

    pub fn predict_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        if let Some(n) = self.n_features() {
            if n != matrix.n_features() {
                return Err(Error::Schema(format!(
                    "matrix has {} features, estimator expects {n}",
                    matrix.n_features()
                )));
            }
        }
        Ok((0..matrix.n_rows())
            .map(|i| self.predict_with(|j| matrix.value(i, j)))
            .collect())
    }
}

fn training_loss(loss: LossKind, targets: &[f64], raw: &[f64]) -> f64 {
    let n = targets.len() as f64;
    match loss {
        LossKind::Squared => targets.iter().zip(raw).map(|(y, f)| (y - f).powi(2)).sum::<f64>() / n,
        LossKind::Logistic => {
            targets
                .iter()
                .zip(raw)
                .map(|(y, f)| {
                    // log(1 + e^f) - y f, stable for large |f|
                    let softplus = if *f > 0.0 {
                        f + (-f).exp().ln_1p()
                    } else {
                        f.exp().ln_1p()
                    };
                    softplus - y * f
                })
                .sum::<f64>()
                / n
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::FeatureKind;

    fn step() -> (FeatureMatrix, Vec<f64>) {
        let x: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let y = x.iter().map(|&v| if v < 0.5 { 0.0 } else { 1.0 }).collect();
        (FeatureMatrix::new(vec![FeatureKind::Numeric], vec![x]).unwrap(), y)
    }

    #[test]
    fn constant_targets_give_base_score_only() {
        let (m, _) = step();
        let est = MeanEstimator::fit(&m, &vec![4.0; 100], LossKind::Squared, &Default::default()).unwrap();
        assert_eq!(est.base_score, 4.0);
        assert!(est.trees.iter().all(|t| t.leaf_count() == 1 && t.leaves()[0] == 0.0));
        assert_eq!(est.predict_row(&[0.3]).unwrap(), 4.0);
    }

    #[test]
    fn balanced_logistic_base_score_is_zero() {
        let (m, y) = step();
        let cfg = MeanEstimatorConfig {
            n_trees: 0,
            ..Default::default()
        };
        let est = MeanEstimator::fit(&m, &y, LossKind::Logistic, &cfg).unwrap();
        assert_eq!(est.base_score, 0.0);
        assert_eq!(est.predict_row(&[0.1]).unwrap(), 0.5);
    }

    #[test]
    fn zero_tree_squared_predicts_base() {
        let (m, y) = step();
        let cfg = MeanEstimatorConfig {
            n_trees: 0,
            ..Default::default()
        };
        let est = MeanEstimator::fit(&m, &y, LossKind::Squared, &cfg).unwrap();
        assert_eq!(est.predict_row(&[0.9]).unwrap(), 0.5);
    }

    #[test]
    fn step_function_is_fit_closely() {
        // Each stage removes a fraction `shrinkage` of the remaining residual, so
        // after 100 stages the residual is 0.5 * (1 - shrinkage)^100:
        // 3.0e-3 at 0.05 and 1.3e-5 at 0.1. The tighter bound needs 0.1.
        let (m, y) = step();
        let cfg = MeanEstimatorConfig {
            shrinkage: 0.1,
            ..Default::default()
        };
        let est = MeanEstimator::fit(&m, &y, LossKind::Squared, &cfg).unwrap();
        let pred = est.predict_matrix(&m).unwrap();
        let rmse = (pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 100.0).sqrt();
        assert!(rmse < 1e-3, "rmse {rmse}");
        assert!((est.predict_row(&[0.9]).unwrap() - 1.0).abs() < 1e-3);

        let default = MeanEstimator::fit(&m, &y, LossKind::Squared, &Default::default()).unwrap();
        let resid = (default.predict_row(&[0.9]).unwrap() - 1.0).abs();
        assert!((resid - 0.5 * 0.95f64.powi(100)).abs() < 1e-9);
    }

    #[test]
    fn losses_never_increase_per_stage() {
        let rows: Vec<Vec<f64>> = (0..400).map(|i| vec![(i % 40) as f64, (i / 40) as f64]).collect();
        let m = FeatureMatrix::from_rows(&rows).unwrap();
        let y_reg: Vec<f64> = rows.iter().map(|r| (r[0] * 0.3).sin() + 0.1 * r[1]).collect();
        let y_clf: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| if (r[0] + r[1] + (i % 7) as f64) > 25.0 { 1.0 } else { 0.0 })
            .collect();
        for (loss, y) in [(LossKind::Squared, &y_reg), (LossKind::Logistic, &y_clf)] {
            let mut trace = Vec::new();
            MeanEstimator::fit_traced(&m, y, loss, &Default::default(), |_, l| trace.push(l)).unwrap();
            assert_eq!(trace.len(), 101);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{loss:?}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn logistic_output_is_a_probability() {
        let (m, y) = step();
        let est = MeanEstimator::fit(&m, &y, LossKind::Logistic, &Default::default()).unwrap();
        for x in [-10.0, 0.0, 0.49, 0.5, 1.0, 1e9, f64::NAN] {
            let p = est.predict_row(&[x]).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
        assert!(est.predict_row(&[0.9]).unwrap() > 0.9);
    }

    #[test]
    fn logistic_rejects_single_class_and_non_binary() {
        let (m, _) = step();
        assert!(MeanEstimator::fit(&m, &vec![1.0; 100], LossKind::Logistic, &Default::default()).is_err());
        let mut y = vec![0.0; 100];
        y[3] = 0.5;
        y[4] = 1.0;
        assert!(MeanEstimator::fit(&m, &y, LossKind::Logistic, &Default::default()).is_err());
    }

    #[test]
    fn predicts_rows_with_missing_features() {
        let mut x: Vec<f64> = (0..200).map(|i| i as f64).collect();
        for i in (0..200).step_by(5) {
            x[i] = f64::NAN;
        }
        let y: Vec<f64> = (0..200).map(|i| (i as f64) / 10.0).collect();
        let m = FeatureMatrix::new(vec![FeatureKind::Numeric], vec![x]).unwrap();
        let est = MeanEstimator::fit(&m, &y, LossKind::Squared, &Default::default()).unwrap();
        assert!(est.predict_row(&[f64::NAN]).unwrap().is_finite());
    }
}
