//! Regression trees, random forests and gradient boosting, plus the surrogate
//! wrapper that carries preprocessing and a versioned, checksummed text format.

mod boosted;
mod forest;
mod tree;

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

pub use boosted::{fit_boosted, BoostedModel, BoostedParams};
pub use forest::{fit_forest, ForestModel, ForestParams};
pub(crate) use forest::stream_rng;
pub use tree::{fit_tree, RegressionTree, TreeParams};

use crate::dataset::{sha256_hex, DatasetError, DoseTable, Preprocessor, Scenario};
use crate::features::Matrix;
use crate::kv::{KvError, KvMap};
use tree::LEAF;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "plumeshine-model";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty training input")]
    EmptyInput,
    #[error("boosting needs a non-empty validation set")]
    NoValidation,
    #[error("shape: {0}")]
    Shape(String),
    #[error("invalid hyperparameters: {0}")]
    Params(String),
    #[error("unsupported model format version {0}")]
    Version(String),
    #[error("model file is truncated")]
    Truncated,
    #[error("model checksum mismatch")]
    Checksum,
    #[error("model file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Forest,
    Boosted,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::Forest, Family::Boosted];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Forest => "forest",
            Self::Boosted => "boosted",
        })
    }
}

impl FromStr for Family {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forest" | "rf" => Ok(Self::Forest),
            "boosted" | "xgb" => Ok(Self::Boosted),
            _ => Err(ModelError::Params(format!("unknown model family `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ensemble {
    Forest(ForestModel),
    Boosted(BoostedModel),
}

impl Ensemble {
    pub fn family(&self) -> Family {
        match self {
            Self::Forest(_) => Family::Forest,
            Self::Boosted(_) => Family::Boosted,
        }
    }

    fn trees(&self) -> &[RegressionTree] {
        match self {
            Self::Forest(m) => &m.trees,
            Self::Boosted(m) => &m.trees,
        }
    }

    fn predict_with(&self, x: impl Fn(usize) -> f64 + Copy) -> f64 {
        match self {
            Self::Forest(m) => m.predict_with(x),
            Self::Boosted(m) => m.predict_with(x),
        }
    }
}

/// A fitted ensemble with the preprocessing it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub ensemble: Ensemble,
    pub pre: Preprocessor,
    /// Columns of the full preprocessed matrix the ensemble was trained on.
    pub features: Vec<usize>,
}

fn check_features(features: &[usize]) -> Result<(), ModelError> {
    if features.is_empty() || features.iter().any(|&f| f >= 4) || features.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ModelError::Params(format!("feature subset {features:?} must be ascending, non-empty and within 0..4")));
    }
    Ok(())
}

pub fn train_forest(train: &DoseTable, features: &[usize], params: &ForestParams) -> Result<SurrogateModel, ModelError> {
    check_features(features)?;
    let pre = Preprocessor::fit(train)?;
    let (x, y) = pre.transform(train)?;
    let m = fit_forest(&x.select_columns(features), &y, params)?;
    Ok(SurrogateModel { ensemble: Ensemble::Forest(m), pre, features: features.to_vec() })
}

/// The preprocessor is fitted on `train` only; `val` drives early stopping.
pub fn train_boosted(train: &DoseTable, val: &DoseTable, features: &[usize], params: &BoostedParams) -> Result<SurrogateModel, ModelError> {
    check_features(features)?;
    let pre = Preprocessor::fit(train)?;
    let (x, y) = pre.transform(train)?;
    let (xv, yv) = pre.transform(val)?;
    let m = fit_boosted(&x.select_columns(features), &y, &xv.select_columns(features), &yv, params)?;
    Ok(SurrogateModel { ensemble: Ensemble::Boosted(m), pre, features: features.to_vec() })
}

impl SurrogateModel {
    pub fn family(&self) -> Family {
        self.ensemble.family()
    }

    /// Target-space predictions from the full four-column feature matrix.
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.ensemble.predict_with(|j| x.get(i, self.features[j]))).collect()
    }

    pub fn predict_dose(&self, scenarios: &[Scenario]) -> Result<Vec<f64>, ModelError> {
        let x = self.pre.features(scenarios)?;
        Ok(self.pre.inverse_target(&self.predict(&x)))
    }

    pub fn to_text(&self) -> String {
        let mut kv = KvMap::new();
        kv.set("kind", self.family());
        kv.set("features", self.features.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","));
        self.pre.to_kv(&mut kv);
        let floats = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        match &self.ensemble {
            Ensemble::Forest(m) => {
                let p = &m.params;
                kv.set("forest.n_estimators", p.n_estimators)
                    .set("forest.max_depth", p.max_depth)
                    .set("forest.max_features", format!("{:?}", p.max_features))
                    .set("forest.bootstrap", p.bootstrap)
                    .set("forest.min_samples_leaf", p.min_samples_leaf)
                    .set("forest.seed", p.seed);
            }
            Ensemble::Boosted(m) => {
                let p = &m.params;
                kv.set("boosted.learning_rate", format!("{:?}", p.learning_rate))
                    .set("boosted.max_depth", p.max_depth)
                    .set("boosted.subsample", format!("{:?}", p.subsample))
                    .set("boosted.colsample_bytree", format!("{:?}", p.colsample_bytree))
                    .set("boosted.rounds", p.rounds)
                    .set("boosted.early_stopping_rounds", p.early_stopping_rounds)
                    .set("boosted.min_samples_leaf", p.min_samples_leaf)
                    .set("boosted.seed", p.seed)
                    .set("boosted.base", format!("{:?}", m.base))
                    .set("boosted.val_rmse", floats(&m.val_rmse))
                    .set("boosted.train_rmse", floats(&m.train_rmse));
            }
        }
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\n{kv}---\n");
        for t in self.ensemble.trees() {
            writeln!(out, "tree {}", t.n_nodes()).unwrap();
            for i in 0..t.n_nodes() {
                if t.feature[i] == LEAF {
                    writeln!(out, "L {:?}", t.value[i]).unwrap();
                } else {
                    writeln!(out, "S {} {:?} {} {}", t.feature[i], t.threshold[i], t.left[i], t.right[i]).unwrap();
                }
            }
        }
        let sum = sha256_hex(out.as_bytes());
        writeln!(out, "sha256 {sum}").unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let first = text.lines().next().ok_or(ModelError::Truncated)?;
        match first.split_once(' ') {
            Some((MAGIC, v)) if v == FORMAT_VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(ModelError::Version(v.to_string())),
            _ => return Err(ModelError::Parse { line: 1, msg: "not a model file".into() }),
        }
        let body_end = text.trim_end_matches('\n').rfind('\n').ok_or(ModelError::Truncated)? + 1;
        let (body, tail) = text.split_at(body_end);
        let sum = tail.trim_end().strip_prefix("sha256 ").ok_or(ModelError::Truncated)?;
        if sum != sha256_hex(body.as_bytes()) {
            return Err(ModelError::Checksum);
        }
        let (head, trees_text) = body.split_once("\n---\n").ok_or(ModelError::Truncated)?;
        let kv = KvMap::parse(head.split_once('\n').map_or("", |h| h.1))?;
        let head_lines = head.lines().count() + 1;
        let trees = parse_trees(trees_text, head_lines)?;
        let features: Vec<usize> = kv.list_or("features", Vec::new())?;
        check_features(&features)?;
        let pre = Preprocessor::from_kv(&kv)?;
        let family: Family = kv.require("kind")?.parse()?;
        let ensemble = match family {
            Family::Forest => {
                let d = ForestParams::default();
                let params = ForestParams {
                    n_estimators: kv.get_or("forest.n_estimators", d.n_estimators)?,
                    max_depth: kv.get_or("forest.max_depth", d.max_depth)?,
                    max_features: kv.get_or("forest.max_features", d.max_features)?,
                    bootstrap: kv.get_or("forest.bootstrap", d.bootstrap)?,
                    min_samples_leaf: kv.get_or("forest.min_samples_leaf", d.min_samples_leaf)?,
                    seed: kv.get_or("forest.seed", d.seed)?,
                };
                Ensemble::Forest(ForestModel { params, trees })
            }
            Family::Boosted => {
                let d = BoostedParams::default();
                let params = BoostedParams {
                    learning_rate: kv.get_or("boosted.learning_rate", d.learning_rate)?,
                    max_depth: kv.get_or("boosted.max_depth", d.max_depth)?,
                    subsample: kv.get_or("boosted.subsample", d.subsample)?,
                    colsample_bytree: kv.get_or("boosted.colsample_bytree", d.colsample_bytree)?,
                    rounds: kv.get_or("boosted.rounds", d.rounds)?,
                    early_stopping_rounds: kv.get_or("boosted.early_stopping_rounds", d.early_stopping_rounds)?,
                    min_samples_leaf: kv.get_or("boosted.min_samples_leaf", d.min_samples_leaf)?,
                    seed: kv.get_or("boosted.seed", d.seed)?,
                };
                Ensemble::Boosted(BoostedModel {
                    params,
                    base: kv.require("boosted.base")?.parse().map_err(|_| ModelError::Params("bad boosted.base".into()))?,
                    trees,
                    val_rmse: kv.list_or("boosted.val_rmse", Vec::new())?,
                    train_rmse: kv.list_or("boosted.train_rmse", Vec::new())?,
                })
            }
        };
        if ensemble.trees().is_empty() {
            return Err(ModelError::Truncated);
        }
        Ok(Self { ensemble, pre, features })
    }
}

fn parse_trees(text: &str, first_line: usize) -> Result<Vec<RegressionTree>, ModelError> {
    let mut trees = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + first_line + 1, l));
    while let Some((ln, l)) = lines.next() {
        let bad = |line: usize, msg: &str| ModelError::Parse { line, msg: msg.into() };
        let n: usize = l.strip_prefix("tree ").and_then(|s| s.parse().ok()).ok_or_else(|| bad(ln, "expected `tree <nodes>`"))?;
        let mut t = RegressionTree { feature: vec![], threshold: vec![], left: vec![], right: vec![], value: vec![] };
        for _ in 0..n {
            let (ln, l) = lines.next().ok_or(ModelError::Truncated)?;
            let parts: Vec<&str> = l.split(' ').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(ln, "bad number"));
            let idx = |s: &str| s.parse::<u32>().ok().filter(|&i| (i as usize) < n).ok_or_else(|| bad(ln, "bad node index"));
            match parts.as_slice() {
                ["L", v] => {
                    t.feature.push(LEAF);
                    t.threshold.push(0.0);
                    t.left.push(0);
                    t.right.push(0);
                    t.value.push(num(v)?);
                }
                ["S", f, thr, l, r] => {
                    t.feature.push(f.parse().ok().filter(|&f: &u32| f < 4).ok_or_else(|| bad(ln, "bad feature"))?);
                    t.threshold.push(num(thr)?);
                    t.left.push(idx(l)?);
                    t.right.push(idx(r)?);
                    t.value.push(0.0);
                }
                _ => return Err(bad(ln, "expected `L <value>` or `S <feature> <threshold> <left> <right>`")),
            }
        }
        // Preorder layout: children always follow their parent, so walks terminate.
        let id = t.feature.len();
        for i in 0..id {
            if t.feature[i] != LEAF && (t.left[i] as usize <= i || t.right[i] as usize <= i) {
                return Err(bad(ln, "child index precedes its parent"));
            }
        }
        trees.push(t);
    }
    Ok(trees)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DoseRow, Provenance};
    use crate::dispersion::StabilityClass;

    fn table() -> DoseTable {
        let mut rows = Vec::new();
        for (n, nuc) in ["Ar-41", "Cs-137"].iter().enumerate() {
            for s in [StabilityClass::A, StabilityClass::D] {
                for h in [10.0, 100.0] {
                    for x in [25.0, 60.0, 150.0, 400.0, 1000.0] {
                        let dose = 1e-9 * (1.0 + n as f64) * (-x / 500.0f64).exp() * (20.0 / (h + 10.0)) * (1.0 + s.index() as f64 * 0.1);
                        rows.push(DoseRow { scenario: Scenario { nuclide: nuc.to_string(), stability: s, height: h, distance: x }, dose });
                    }
                }
            }
        }
        DoseTable::new(Provenance::LowRes, rows, KvMap::new()).unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = table();
        let f = train_forest(&t, &[0, 1, 2, 3], &ForestParams { n_estimators: 3, ..Default::default() }).unwrap();
        let b = train_boosted(&t, &t, &[1, 2, 3], &BoostedParams { rounds: 5, ..Default::default() }).unwrap();
        for m in [f, b] {
            let text = m.to_text();
            let back = SurrogateModel::from_text(&text).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let t = table();
        let text = train_forest(&t, &[0, 1, 2, 3], &ForestParams { n_estimators: 2, ..Default::default() }).unwrap().to_text();
        let mut bytes = text.clone().into_bytes();
        let i = text.find("\nL ").unwrap() + 3;
        bytes[i] = if bytes[i] == b'1' { b'2' } else { b'1' };
        assert!(matches!(SurrogateModel::from_text(std::str::from_utf8(&bytes).unwrap()), Err(ModelError::Checksum)));
        let cut = &text[..text.len() / 2];
        assert!(matches!(SurrogateModel::from_text(cut), Err(ModelError::Truncated | ModelError::Checksum)));
        let v2 = text.replacen("plumeshine-model 1", "plumeshine-model 2", 1);
        assert!(matches!(SurrogateModel::from_text(&v2), Err(ModelError::Version(_))));
    }

    #[test]
    fn feature_subset_must_be_valid() {
        let t = table();
        assert!(train_forest(&t, &[], &ForestParams::default()).is_err());
        assert!(train_forest(&t, &[2, 1], &ForestParams::default()).is_err());
        assert!(train_forest(&t, &[4], &ForestParams::default()).is_err());
    }
}
