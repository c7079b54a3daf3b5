//! Bagged regression trees averaged at prediction time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{fit_samples, RegressionTree, TreeParams};
use super::ModelError;
use crate::features::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub max_features: f64,
    pub bootstrap: bool,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_estimators: 60, max_depth: 15, max_features: 1.0, bootstrap: true, min_samples_leaf: 1, seed: 3007 }
    }
}

impl ForestParams {
    pub fn tree(&self) -> TreeParams {
        TreeParams { max_depth: self.max_depth, min_samples_leaf: self.min_samples_leaf, max_features: self.max_features }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub params: ForestParams,
    pub trees: Vec<RegressionTree>,
}

/// Stream `k` of the master seed; tree `k` draws only from it.
pub(crate) fn stream_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

pub fn fit_forest(x: &Matrix, y: &[f64], params: &ForestParams) -> Result<ForestModel, ModelError> {
    if params.n_estimators == 0 {
        return Err(ModelError::Params("n_estimators must be positive".into()));
    }
    let n = x.n_rows();
    if n == 0 {
        return Err(ModelError::EmptyInput);
    }
    let allowed: Vec<usize> = (0..x.n_features()).collect();
    let tp = params.tree();
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(params.seed, k);
            let rows: Vec<usize> = if params.bootstrap {
                let mut r: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                r.sort_unstable();
                r
            } else {
                (0..n).collect()
            };
            fit_samples(x, y, &rows, &allowed, &tp, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    Ok(ForestModel { params: *params, trees })
}

impl ForestModel {
    pub fn predict_with(&self, x: impl Fn(usize) -> f64 + Copy) -> f64 {
        self.trees.iter().map(|t| t.predict_with(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict_with(|f| x.get(i, f))).collect()
    }

    /// Smallest and largest leaf value over all trees.
    pub fn leaf_range(&self) -> (f64, f64) {
        self.trees
            .iter()
            .flat_map(|t| t.leaf_values())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}
