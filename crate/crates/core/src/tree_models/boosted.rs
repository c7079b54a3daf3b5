//! Gradient-boosted regression trees on squared error.
//!
//! Round `k` fits a tree to the current residuals on a seeded row subsample
//! and adds it with shrinkage `learning_rate`. Validation RMSE is recorded
//! after every round; training stops once `early_stopping_rounds` pass
//! without a new minimum and the model keeps the prefix up to the best round.
//! There are no second-order or leaf-weight penalties.

use rand::seq::index;
use rand::Rng;

use super::forest::stream_rng;
use super::tree::{fit_samples, RegressionTree, TreeParams};
use super::ModelError;
use crate::features::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostedParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub rounds: usize,
    pub early_stopping_rounds: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for BoostedParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_depth: 30,
            subsample: 0.5,
            colsample_bytree: 1.0,
            rounds: 100,
            early_stopping_rounds: 10,
            min_samples_leaf: 1,
            seed: 3007,
        }
    }
}

impl BoostedParams {
    fn validate(&self) -> Result<(), ModelError> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.subsample > 0.0
            && self.subsample <= 1.0
            && self.colsample_bytree > 0.0
            && self.colsample_bytree <= 1.0
            && self.rounds > 0
            && self.early_stopping_rounds > 0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::Params(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    pub params: BoostedParams,
    /// Mean training target.
    pub base: f64,
    pub trees: Vec<RegressionTree>,
    /// Validation RMSE after each fitted round, including rounds past the best.
    pub val_rmse: Vec<f64>,
    pub train_rmse: Vec<f64>,
}

fn rmse(pred: &[f64], y: &[f64]) -> f64 {
    (pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64).sqrt()
}

fn take(n: usize, frac: f64, rng: &mut impl Rng) -> Option<Vec<usize>> {
    let k = ((frac * n as f64).round() as usize).clamp(1, n);
    if k == n {
        return None;
    }
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    Some(v)
}

pub fn fit_boosted(x: &Matrix, y: &[f64], x_val: &Matrix, y_val: &[f64], params: &BoostedParams) -> Result<BoostedModel, ModelError> {
    params.validate()?;
    let n = x.n_rows();
    if n == 0 || y.len() != n {
        return Err(ModelError::EmptyInput);
    }
    if x_val.n_rows() == 0 || y_val.len() != x_val.n_rows() {
        return Err(ModelError::NoValidation);
    }
    if x_val.n_features() != x.n_features() {
        return Err(ModelError::Shape("validation features differ from training features".into()));
    }
    let tp = TreeParams { max_depth: params.max_depth, min_samples_leaf: params.min_samples_leaf, max_features: 1.0 };
    let base = y.iter().sum::<f64>() / n as f64;
    let mut fit = vec![base; n];
    let mut fit_val = vec![base; x_val.n_rows()];
    let mut residual = vec![0.0; n];
    let mut model = BoostedModel { params: *params, base, trees: Vec::new(), val_rmse: Vec::new(), train_rmse: Vec::new() };
    let mut best = 0;
    for k in 0..params.rounds {
        let mut rng = stream_rng(params.seed, k);
        let rows = take(n, params.subsample, &mut rng).unwrap_or_else(|| (0..n).collect());
        let allowed = take(x.n_features(), params.colsample_bytree, &mut rng).unwrap_or_else(|| (0..x.n_features()).collect());
        for i in 0..n {
            residual[i] = y[i] - fit[i];
        }
        let tree = fit_samples(x, &residual, &rows, &allowed, &tp, &mut rng)?;
        for (i, f) in fit.iter_mut().enumerate() {
            *f += params.learning_rate * tree.predict_with(|j| x.get(i, j));
        }
        for (i, f) in fit_val.iter_mut().enumerate() {
            *f += params.learning_rate * tree.predict_with(|j| x_val.get(i, j));
        }
        model.trees.push(tree);
        model.train_rmse.push(rmse(&fit, y));
        model.val_rmse.push(rmse(&fit_val, y_val));
        if model.val_rmse[k] < model.val_rmse[best] {
            best = k;
        }
        if k - best >= params.early_stopping_rounds {
            break;
        }
    }
    model.trees.truncate(best + 1);
    Ok(model)
}

impl BoostedModel {
    /// Number of kept rounds.
    pub fn best_round(&self) -> usize {
        self.trees.len()
    }

    pub fn predict_with(&self, x: impl Fn(usize) -> f64 + Copy) -> f64 {
        // Accumulated in the same order as during training.
        let mut f = self.base;
        for t in &self.trees {
            f += self.params.learning_rate * t.predict_with(x);
        }
        f
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict_with(|f| x.get(i, f))).collect()
    }
}
