//! Pipeline configuration in the `key: value` format shared with table
//! sidecars. Every key is optional; missing keys fall back to the full-scale
//! defaults below.

use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use plumeshine_core::dataset::Grid;
use plumeshine_core::dispersion::StabilityClass;
use plumeshine_core::dose_kernel::KernelConfig;
use plumeshine_core::kv::KvMap;
use plumeshine_core::nuclide_db::{load_db, NuclideDb};
use plumeshine_core::tree_models::{BoostedParams, ForestParams};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSpec {
    pub nuclides: Vec<String>,
    pub stabilities: Vec<StabilityClass>,
    pub height: f64,
    /// Quadrature knots per curve; PCHIP is checked at the geometric
    /// midpoint of every knot interval.
    pub knots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    /// Concurrent reference quadratures.
    pub workers: usize,
    /// Model files served, relative to the output directory unless absolute.
    pub models: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub db_path: Option<PathBuf>,
    pub grid: Grid,
    pub kernel: KernelConfig,
    pub points_per_group: usize,
    pub drop_knots: bool,
    pub lowres_test_fraction: f64,
    pub highres_test_fraction: f64,
    /// Share of each training set held back for boosted early stopping.
    pub validation_fraction: f64,
    pub forest: ForestParams,
    pub boosted: BoostedParams,
    pub importance_repeats: usize,
    /// Number of consecutive seeds for the argmax stability report.
    pub importance_seeds: usize,
    pub profile: ProfileSpec,
    pub service: ServiceConfig,
}

fn list<T: std::str::FromStr>(map: &KvMap, key: &str, default: Vec<T>) -> Result<Vec<T>, CliError> {
    Ok(map.list_or(key, default)?)
}

impl PipelineConfig {
    pub fn from_kv(map: &KvMap, seed_override: Option<u64>) -> Result<Self, CliError> {
        let known = [
            "seed", "db.path", "grid.nuclides", "grid.stabilities", "grid.heights", "grid.distances", "grid.distance_count",
            "grid.distance_min", "grid.distance_max", "kernel.rel_tol", "kernel.mfp_multiple", "kernel.sigma_multiple",
            "kernel.near_field_epsilon", "kernel.max_subdivisions", "densify.points_per_group", "densify.drop_knots",
            "split.lowres_test_fraction", "split.highres_test_fraction", "split.validation_fraction", "forest.n_estimators",
            "forest.max_depth", "forest.max_features", "forest.bootstrap", "forest.min_samples_leaf", "boosted.learning_rate",
            "boosted.max_depth", "boosted.subsample", "boosted.colsample_bytree", "boosted.rounds", "boosted.early_stopping_rounds",
            "boosted.min_samples_leaf", "importance.repeats", "importance.seeds", "profile.nuclides", "profile.stabilities",
            "profile.height", "profile.knots", "service.host", "service.port", "service.workers", "service.models",
        ];
        if let Some(k) = map.keys().find(|k| !known.contains(k)) {
            return Err(CliError::Config(format!("unknown key `{k}`")));
        }
        let seed = match seed_override {
            Some(s) => s,
            None => map.get_or("seed", 3007u64)?,
        };
        let db_path = map.get("db.path").map(PathBuf::from);
        let db = match &db_path {
            Some(p) => open_db(p)?,
            None => NuclideDb::default_db(),
        };
        let full = Grid::full(&db);
        let distances = match map.get("grid.distances") {
            Some(_) => list(map, "grid.distances", vec![])?,
            None => Grid::log_distances(
                map.get_or("grid.distance_count", 45usize)?,
                map.get_or("grid.distance_min", 25.0)?,
                map.get_or("grid.distance_max", 2000.0)?,
            ),
        };
        let grid = Grid {
            nuclides: list(map, "grid.nuclides", full.nuclides.clone())?,
            stabilities: list(map, "grid.stabilities", full.stabilities.clone())?,
            heights: list(map, "grid.heights", full.heights.clone())?,
            distances,
        };
        grid.validate(&db).map_err(|e| CliError::Config(e.to_string()))?;
        let kd = KernelConfig::default();
        let kernel = KernelConfig {
            rel_tol: map.get_or("kernel.rel_tol", kd.rel_tol)?,
            mfp_multiple: map.get_or("kernel.mfp_multiple", kd.mfp_multiple)?,
            sigma_multiple: map.get_or("kernel.sigma_multiple", kd.sigma_multiple)?,
            near_field_epsilon: map.get_or("kernel.near_field_epsilon", kd.near_field_epsilon)?,
            max_subdivisions: map.get_or("kernel.max_subdivisions", kd.max_subdivisions)?,
            alpha: kd.alpha,
        };
        kernel.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let fd = ForestParams::default();
        let forest = ForestParams {
            n_estimators: map.get_or("forest.n_estimators", fd.n_estimators)?,
            max_depth: map.get_or("forest.max_depth", fd.max_depth)?,
            max_features: map.get_or("forest.max_features", fd.max_features)?,
            bootstrap: map.get_or("forest.bootstrap", fd.bootstrap)?,
            min_samples_leaf: map.get_or("forest.min_samples_leaf", fd.min_samples_leaf)?,
            seed,
        };
        let bd = BoostedParams::default();
        let boosted = BoostedParams {
            learning_rate: map.get_or("boosted.learning_rate", bd.learning_rate)?,
            max_depth: map.get_or("boosted.max_depth", bd.max_depth)?,
            subsample: map.get_or("boosted.subsample", bd.subsample)?,
            colsample_bytree: map.get_or("boosted.colsample_bytree", bd.colsample_bytree)?,
            rounds: map.get_or("boosted.rounds", bd.rounds)?,
            early_stopping_rounds: map.get_or("boosted.early_stopping_rounds", bd.early_stopping_rounds)?,
            min_samples_leaf: map.get_or("boosted.min_samples_leaf", bd.min_samples_leaf)?,
            seed,
        };
        let profile = ProfileSpec {
            nuclides: list(map, "profile.nuclides", ["Ar-41", "Co-60", "Cs-137", "Eu-155"].map(String::from).to_vec())?,
            stabilities: list(map, "profile.stabilities", StabilityClass::ALL.to_vec())?,
            height: map.get_or("profile.height", 140.0)?,
            knots: map.get_or("profile.knots", 45usize)?,
        };
        let host: String = map.get_or("service.host", "127.0.0.1".to_string())?;
        let port: u16 = map.get_or("service.port", 8080)?;
        let addr = format!("{host}:{port}").parse().map_err(|_| CliError::Config(format!("bad service address `{host}:{port}`")))?;
        let service = ServiceConfig {
            addr,
            workers: map.get_or("service.workers", 4usize)?,
            models: list(map, "service.models", vec!["models/forest_hr.model".into(), "models/boosted_hr.model".into()])?,
        };
        let cfg = Self {
            seed,
            db_path,
            grid,
            kernel,
            points_per_group: map.get_or("densify.points_per_group", 2000usize)?,
            drop_knots: map.get_or("densify.drop_knots", true)?,
            lowres_test_fraction: map.get_or("split.lowres_test_fraction", 0.01)?,
            highres_test_fraction: map.get_or("split.highres_test_fraction", 0.00025)?,
            validation_fraction: map.get_or("split.validation_fraction", 0.1)?,
            forest,
            boosted,
            importance_repeats: map.get_or("importance.repeats", 10usize)?,
            importance_seeds: map.get_or("importance.seeds", 5usize)?,
            profile,
            service,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, seed_override: Option<u64>) -> Result<Self, CliError> {
        let map = match path {
            Some(p) => KvMap::parse(&std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?)?,
            None => KvMap::new(),
        };
        Self::from_kv(&map, seed_override)
    }

    fn validate(&self) -> Result<(), CliError> {
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v < 0.5 {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must be in (0, 0.5), got {v}")))
            }
        };
        frac("split.lowres_test_fraction", self.lowres_test_fraction)?;
        frac("split.highres_test_fraction", self.highres_test_fraction)?;
        frac("split.validation_fraction", self.validation_fraction)?;
        if self.points_per_group < 2 {
            return Err(CliError::Config("densify.points_per_group must be at least 2".into()));
        }
        if self.importance_seeds == 0 {
            return Err(CliError::Config("importance.seeds must be positive".into()));
        }
        if self.profile.knots < 2 || !(10.0..=200.0).contains(&self.profile.height) {
            return Err(CliError::Config("profile needs at least 2 knots and a height in [10, 200] m".into()));
        }
        if self.service.workers == 0 {
            return Err(CliError::Config("service.workers must be positive".into()));
        }
        Ok(())
    }

    pub fn db(&self) -> Result<NuclideDb, CliError> {
        match &self.db_path {
            Some(p) => open_db(p),
            None => Ok(NuclideDb::default_db()),
        }
    }

    /// Settings that shape the outputs, recorded in every sidecar.
    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("seed", self.seed);
        self.grid.to_kv(&mut m);
        m.set("kernel.config", self.kernel.canonical())
            .set("densify.points_per_group", self.points_per_group)
            .set("densify.drop_knots", self.drop_knots)
            .set("split.lowres_test_fraction", self.lowres_test_fraction)
            .set("split.highres_test_fraction", self.highres_test_fraction)
            .set("split.validation_fraction", self.validation_fraction);
        m
    }
}

fn open_db(p: &Path) -> Result<NuclideDb, CliError> {
    let f = File::open(p).map_err(|e| CliError::io(p, e))?;
    Ok(load_db(BufReader::new(f))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_full_scale_defaults() {
        let c = PipelineConfig::from_kv(&KvMap::new(), None).unwrap();
        assert_eq!(c.seed, 3007);
        assert_eq!(c.grid.len(), 17 * 6 * 20 * 45);
        assert_eq!(c.points_per_group, 2000);
        assert_eq!((c.lowres_test_fraction, c.highres_test_fraction), (0.01, 0.00025));
        assert_eq!(c.forest, ForestParams::default());
        assert_eq!(c.boosted, BoostedParams::default());
    }

    #[test]
    fn seed_override_reaches_models() {
        let m = KvMap::parse("seed: 5\n").unwrap();
        let c = PipelineConfig::from_kv(&m, Some(9)).unwrap();
        assert_eq!((c.seed, c.forest.seed, c.boosted.seed), (9, 9, 9));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::from_kv(&KvMap::parse("grid.colour: red\n").unwrap(), None).is_err());
        assert!(PipelineConfig::from_kv(&KvMap::parse("grid.heights: 5\n").unwrap(), None).is_err());
        assert!(PipelineConfig::from_kv(&KvMap::parse("split.lowres_test_fraction: 0.7\n").unwrap(), None).is_err());
        assert!(PipelineConfig::from_kv(&KvMap::parse("kernel.rel_tol: lots\n").unwrap(), None).is_err());
    }
}
