//! Accuracy metrics, per-regime error percentiles, radionuclide-conditional
//! permutation importance and exhaustive feature ablation.
//!
//! Metrics and ablation RMSE are computed on physical doses. Permutation
//! importance measures the increase of mean squared error in the model's
//! log10 target space.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{DoseTable, Scenario};
use crate::features::FEATURE_NAMES;
use crate::tree_models::{ModelError, SurrogateModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} truths, {1} predictions")]
    Length(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("true dose must be positive, got {0}")]
    NonPositive(f64),
    #[error("R² undefined: true values have zero variance")]
    ZeroVariance,
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
    #[error("radionuclide `{nuclide}` has {rows} test rows, need at least {need}")]
    SubsetTooSmall { nuclide: String, rows: usize, need: usize },
    #[error("repeats must be at least {0}")]
    Repeats(usize),
    #[error("ablation subset {subset:?}: {source}")]
    Ablation { subset: Vec<usize>, source: Box<ModelError> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub r2: f64,
    pub mape_percent: f64,
    pub smape_percent: f64,
    pub rmse_physical: f64,
}

fn check_pairs(y: &[f64], p: &[f64], need: usize) -> Result<(), EvalError> {
    if y.len() != p.len() {
        return Err(EvalError::Length(y.len(), p.len()));
    }
    if y.len() < need {
        return Err(EvalError::TooFew { need, got: y.len() });
    }
    match y.iter().find(|&&v| !(v > 0.0)) {
        Some(&v) => Err(EvalError::NonPositive(v)),
        None => Ok(()),
    }
}

pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<MetricSet, EvalError> {
    check_pairs(y_true, y_pred, 2)?;
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    let mape = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs() / y.abs()).sum::<f64>() * 100.0 / n;
    Ok(MetricSet {
        r2: 1.0 - ss_res / ss_tot,
        mape_percent: mape,
        smape_percent: smape(y_true, y_pred),
        rmse_physical: (ss_res / n).sqrt(),
    })
}

/// Symmetric MAPE in percent; a pair with both values zero contributes 0.
pub fn smape(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.abs() + y.abs();
            if d == 0.0 {
                0.0
            } else {
                2.0 * (x - y).abs() / d
            }
        })
        .sum();
    s * 100.0 / a.len() as f64
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> f64 {
    let s: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    (s / y_true.len() as f64).sqrt()
}

fn mse(y_true: &[f64], y_pred: &[f64]) -> f64 {
    let s: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    s / y_true.len() as f64
}

/// Linear interpolation between order statistics at position `(n − 1)·p`.
/// `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Fisher–Pearson sample skewness `m3 / m2^1.5`.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Stability,
    Radionuclide,
}

impl GroupBy {
    pub fn key(self, s: &Scenario) -> String {
        match self {
            Self::Stability => s.stability.to_string(),
            Self::Radionuclide => s.nuclide.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeStat {
    pub n: usize,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

pub fn relative_errors(y_true: &[f64], y_pred: &[f64]) -> Vec<f64> {
    y_true.iter().zip(y_pred).map(|(y, p)| 100.0 * (y - p).abs() / y).collect()
}

pub fn summarize(errors: &[f64]) -> Result<RegimeStat, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::TooFew { need: 1, got: 0 });
    }
    let mut e = errors.to_vec();
    e.sort_by(f64::total_cmp);
    Ok(RegimeStat { n: e.len(), median: percentile(&e, 0.5), p10: percentile(&e, 0.1), p90: percentile(&e, 0.9) })
}

/// Relative-error percentiles (%) per group key.
pub fn regime_stats(y_true: &[f64], y_pred: &[f64], keys: &[String]) -> Result<BTreeMap<String, RegimeStat>, EvalError> {
    check_pairs(y_true, y_pred, 1)?;
    if keys.len() != y_true.len() {
        return Err(EvalError::Length(keys.len(), y_true.len()));
    }
    let err = relative_errors(y_true, y_pred);
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (k, e) in keys.iter().zip(err) {
        groups.entry(k.clone()).or_default().push(e);
    }
    groups.into_iter().map(|(k, v)| summarize(&v).map_err(|_| EvalError::EmptyGroup(k.clone())).map(|s| (k, s))).collect()
}

pub const MIN_IMPORTANCE_ROWS: usize = 20;
pub const MIN_REPEATS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrix {
    pub nuclides: Vec<String>,
    /// Mean increase of log-space MSE per (nuclide, feature), unclipped.
    pub raw: Vec<[f64; 4]>,
    /// Negatives clipped to zero, then each row scaled to sum to one.
    /// A row whose clipped entries are all zero stays zero.
    pub normalized: Vec<[f64; 4]>,
}

impl ImportanceMatrix {
    /// Column index of each row's largest normalized entry (first on ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.normalized.iter().map(|r| (0..4).fold(0, |b, j| if r[j] > r[b] { j } else { b })).collect()
    }
}

fn normalize(raw: &[f64; 4]) -> [f64; 4] {
    let clipped = raw.map(|v| v.max(0.0));
    let s: f64 = clipped.iter().sum();
    if s > 0.0 {
        clipped.map(|v| v / s)
    } else {
        [0.0; 4]
    }
}

/// For each radionuclide `r` in `test` and feature `f`, the mean over
/// `repeats` of `MSE(f shuffled within rows of r) − MSE(unshuffled)` in
/// target space. Shuffles draw from stream `(r·4 + f)·repeats + k` of `seed`.
pub fn conditional_permutation_importance(
    model: &SurrogateModel,
    test: &DoseTable,
    repeats: usize,
    seed: u64,
) -> Result<ImportanceMatrix, EvalError> {
    if repeats < MIN_REPEATS {
        return Err(EvalError::Repeats(MIN_REPEATS));
    }
    let nuclides = test.nuclides();
    let mut subsets = Vec::with_capacity(nuclides.len());
    for n in &nuclides {
        let sub = test.filter(|r| &r.scenario.nuclide == n);
        if sub.len() < MIN_IMPORTANCE_ROWS {
            return Err(EvalError::SubsetTooSmall { nuclide: n.clone(), rows: sub.len(), need: MIN_IMPORTANCE_ROWS });
        }
        let (x, y) = model.pre.transform(&sub).map_err(ModelError::from)?;
        let base = mse(&y, &model.predict(&x));
        subsets.push((x, y, base));
    }
    let tasks: Vec<(usize, usize, usize)> =
        (0..nuclides.len()).flat_map(|r| (0..4).flat_map(move |f| (0..repeats).map(move |k| (r, f, k)))).collect();
    let deltas: Vec<f64> = tasks
        .par_iter()
        .map(|&(r, f, k)| {
            let (x, y, base) = &subsets[r];
            let mut xp = x.clone();
            let mut rng = crate::tree_models::stream_rng(seed, (r * 4 + f) * repeats + k);
            xp.column_mut(f).shuffle(&mut rng);
            mse(y, &model.predict(&xp)) - base
        })
        .collect();
    let raw: Vec<[f64; 4]> = (0..nuclides.len())
        .map(|r| {
            let mut row = [0.0; 4];
            for (f, v) in row.iter_mut().enumerate() {
                let start = (r * 4 + f) * repeats;
                *v = deltas[start..start + repeats].iter().sum::<f64>() / repeats as f64;
            }
            row
        })
        .collect();
    let normalized = raw.iter().map(normalize).collect();
    Ok(ImportanceMatrix { nuclides, raw, normalized })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// Ascending feature indices.
    pub subset: Vec<usize>,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    /// All 15 non-empty subsets, ordered by size then lexicographically.
    pub rows: Vec<AblationRow>,
    /// `(size, mean RMSE over subsets of that size)` for sizes 1..=4.
    pub by_size: Vec<(usize, f64)>,
}

pub fn feature_subsets() -> Vec<Vec<usize>> {
    let mut s: Vec<Vec<usize>> = (1u32..16).map(|m| (0..4).filter(|&f| m & (1 << f) != 0).collect()).collect();
    s.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    s
}

/// Retrains with `train` on every non-empty feature subset and scores
/// physical-space RMSE on `test`.
pub fn exhaustive_ablation<F>(train: F, test: &DoseTable) -> Result<AblationTable, EvalError>
where
    F: Fn(&[usize]) -> Result<SurrogateModel, ModelError> + Sync,
{
    let truth = test.doses();
    let scenarios = test.scenarios();
    let rows: Vec<AblationRow> = feature_subsets()
        .into_par_iter()
        .map(|subset| {
            let fail = |e: ModelError| EvalError::Ablation { subset: subset.clone(), source: Box::new(e) };
            let model = train(&subset).map_err(fail)?;
            let pred = model.predict_dose(&scenarios).map_err(fail)?;
            Ok(AblationRow { rmse: rmse(&truth, &pred), subset })
        })
        .collect::<Result<_, EvalError>>()?;
    let by_size = (1..=4)
        .map(|k| {
            let v: Vec<f64> = rows.iter().filter(|r| r.subset.len() == k).map(|r| r.rmse).collect();
            (k, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    Ok(AblationTable { rows, by_size })
}

/// Train/test pairing of a results table row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Regime {
    LrLr,
    LrHr,
    HrHr,
    HrLr,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::LrLr, Regime::LrHr, Regime::HrHr, Regime::HrLr];

    pub fn train(self) -> &'static str {
        match self {
            Self::LrLr | Self::LrHr => "LR-train",
            Self::HrHr | Self::HrLr => "HR-train",
        }
    }

    pub fn test(self) -> &'static str {
        match self {
            Self::LrLr | Self::HrLr => "LR-test",
            Self::LrHr | Self::HrHr => "HR-test",
        }
    }
}

pub struct MetricsEntry {
    pub model: String,
    pub regime: Regime,
    pub metrics: MetricSet,
}

pub fn metrics_csv(entries: &[MetricsEntry]) -> String {
    let mut s = String::from("model,train,test,r2,mape_percent,smape_percent,rmse_uSv_per_hr\n");
    for e in entries {
        let m = &e.metrics;
        writeln!(s, "{},{},{},{:.6},{:.4},{:.4},{:.6e}", e.model, e.regime.train(), e.regime.test(), m.r2, m.mape_percent, m.smape_percent, m.rmse_physical)
            .unwrap();
    }
    s
}

pub struct WhiskerEntry {
    pub model: String,
    pub train: String,
    pub test: String,
    pub group_by: GroupBy,
    pub stats: BTreeMap<String, RegimeStat>,
}

/// Whisker data: one line per (model, train, test, grouping, group).
pub fn regime_csv(entries: &[WhiskerEntry]) -> String {
    let mut s = String::from("model,train,test,group_by,group,n,p10_percent,median_percent,p90_percent\n");
    for e in entries {
        let by = match e.group_by {
            GroupBy::Stability => "stability",
            GroupBy::Radionuclide => "radionuclide",
        };
        for (g, st) in &e.stats {
            writeln!(s, "{},{},{},{by},{g},{},{:.4},{:.4},{:.4}", e.model, e.train, e.test, st.n, st.p10, st.median, st.p90).unwrap();
        }
    }
    s
}

/// Per-row errors for faceting by (radionuclide, stability).
pub fn error_samples_csv(model: &str, test: &DoseTable, pred: &[f64]) -> String {
    let mut s = String::from("model,radionuclide,stability,release_height_m,distance_m,dose_true,dose_pred,rel_error_percent\n");
    for (r, p) in test.rows().iter().zip(pred) {
        let sc = &r.scenario;
        writeln!(s, "{model},{},{},{},{},{:.8e},{:.8e},{:.4}", sc.nuclide, sc.stability, sc.height, sc.distance, r.dose, p, 100.0 * (r.dose - p).abs() / r.dose)
            .unwrap();
    }
    s
}

pub fn importance_csv(model: &str, m: &ImportanceMatrix) -> String {
    let mut s = format!("model,radionuclide,kind,{}\n", FEATURE_NAMES.join(","));
    for (kind, rows) in [("raw", &m.raw), ("normalized", &m.normalized)] {
        for (n, r) in m.nuclides.iter().zip(rows.iter()) {
            writeln!(s, "{model},{n},{kind},{:.6e},{:.6e},{:.6e},{:.6e}", r[0], r[1], r[2], r[3]).unwrap();
        }
    }
    s
}

pub fn ablation_csv(model: &str, t: &AblationTable) -> String {
    let mut s = format!("model,size,{},rmse_uSv_per_hr\n", FEATURE_NAMES.join(","));
    for r in &t.rows {
        let flags: Vec<&str> = (0..4).map(|f| if r.subset.contains(&f) { "1" } else { "0" }).collect();
        writeln!(s, "{model},{},{},{:.6e}", r.subset.len(), flags.join(","), r.rmse).unwrap();
    }
    for (k, v) in &t.by_size {
        writeln!(s, "{model},{k},mean,mean,mean,mean,{v:.6e}").unwrap();
    }
    s
}
