//! Dose tables: generation from the kernel, PCHIP densification along
//! distance, seeded splits, CSV persistence and feature preprocessing.
//!
//! Tables are kept sorted by `(nuclide, stability, height, distance)` and
//! doses are rounded to the 9 significant digits written to CSV, so a table
//! in memory and the same table reloaded from disk are identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dispersion::{ReleaseSpec, StabilityClass};
use crate::dose_kernel::{dose_rate, KernelConfig, KernelError, Receptor};
use crate::features::Matrix;
use crate::kv::{KvError, KvMap};
use crate::nuclide_db::{DbError, NuclideDb};
use crate::pchip::{PchipCurve, PchipError};

pub const CSV_HEADER: [&str; 5] = ["radionuclide", "stability", "release_height_m", "distance_m", "dose_uSv_per_hr"];

/// Generated points closer than this to a knot distance count as the knot.
pub const KNOT_TOLERANCE_M: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("kernel failed at {scenario}: {source}")]
    Kernel { scenario: Scenario, source: KernelError },
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("group {group}: {source}")]
    Pchip { group: String, source: PchipError },
    #[error("group {group} has {knots} distinct distances, need at least 2")]
    TooFewKnots { group: String, knots: usize },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("split: {0}")]
    Split(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("metadata: {0}")]
    Meta(#[from] KvError),
    #[error("unknown {kind} `{value}`")]
    UnknownCategory { kind: &'static str, value: String },
    #[error("preprocessor: {0}")]
    Preprocess(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub nuclide: String,
    pub stability: StabilityClass,
    pub height: f64,
    pub distance: f64,
}

/// Exact identity of a scenario, for set comparisons.
pub type ScenarioKey = (String, StabilityClass, u64, u64);

impl Scenario {
    pub fn key(&self) -> ScenarioKey {
        (self.nuclide.clone(), self.stability, self.height.to_bits(), self.distance.to_bits())
    }

    fn order(&self, other: &Self) -> std::cmp::Ordering {
        self.nuclide
            .cmp(&other.nuclide)
            .then(self.stability.cmp(&other.stability))
            .then(self.height.total_cmp(&other.height))
            .then(self.distance.total_cmp(&other.distance))
    }

    fn same_group(&self, other: &Self) -> bool {
        self.nuclide == other.nuclide && self.stability == other.stability && self.height == other.height
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} class {} H={} m x={} m", self.nuclide, self.stability, self.height, self.distance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoseRow {
    pub scenario: Scenario,
    pub dose: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    LowRes,
    HighResInterp,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LowRes => "lowres",
            Self::HighResInterp => "highres_interp",
        })
    }
}

impl std::str::FromStr for Provenance {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lowres" => Ok(Self::LowRes),
            "highres_interp" => Ok(Self::HighResInterp),
            _ => Err(DatasetError::UnknownCategory { kind: "provenance", value: s.into() }),
        }
    }
}

/// Round to the 9 significant digits used on disk.
pub fn round_dose(dose: f64) -> f64 {
    format!("{dose:.8e}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoseTable {
    pub provenance: Provenance,
    rows: Vec<DoseRow>,
    pub meta: KvMap,
}

impl DoseTable {
    /// Sorts rows and rounds doses; rejects non-positive or non-finite doses.
    pub fn new(provenance: Provenance, mut rows: Vec<DoseRow>, meta: KvMap) -> Result<Self, DatasetError> {
        for (i, r) in rows.iter_mut().enumerate() {
            if !(r.dose > 0.0 && r.dose.is_finite()) {
                return Err(DatasetError::Row { row: i, msg: format!("dose must be positive and finite, got {}", r.dose) });
            }
            r.dose = round_dose(r.dose);
        }
        rows.sort_by(|a, b| a.scenario.order(&b.scenario));
        Ok(Self { provenance, rows, meta })
    }

    pub fn rows(&self) -> &[DoseRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn doses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.dose).collect()
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        self.rows.iter().map(|r| r.scenario.clone()).collect()
    }

    pub fn keys(&self) -> BTreeSet<ScenarioKey> {
        self.rows.iter().map(|r| r.scenario.key()).collect()
    }

    pub fn nuclides(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.scenario.nuclide.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Rows sharing `(nuclide, stability, height)`, in table order.
    pub fn groups(&self) -> impl Iterator<Item = &[DoseRow]> {
        self.rows.chunk_by(|a, b| a.scenario.same_group(&b.scenario))
    }

    pub fn filter(&self, keep: impl Fn(&DoseRow) -> bool) -> Self {
        Self {
            provenance: self.provenance,
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let s = &r.scenario;
            w.write_record([
                s.nuclide.clone(),
                s.stability.to_string(),
                s.height.to_string(),
                s.distance.to_string(),
                format!("{:.8e}", r.dose),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R, provenance: Provenance, meta: KvMap) -> Result<Self, DatasetError> {
        let mut rdr = csv::Reader::from_reader(source);
        let header = rdr.headers()?.clone();
        if header.iter().map(str::trim).ne(CSV_HEADER) {
            return Err(DatasetError::Row { row: 0, msg: format!("expected header {}", CSV_HEADER.join(",")) });
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |msg: &str| DatasetError::Row { row: i + 1, msg: msg.to_string() };
            let num = |j: usize| rec[j].trim().parse::<f64>().map_err(|_| bad(&format!("bad number `{}`", &rec[j])));
            rows.push(DoseRow {
                scenario: Scenario {
                    nuclide: rec[0].trim().to_string(),
                    stability: rec[1].parse().map_err(|_| bad("bad stability class"))?,
                    height: num(2)?,
                    distance: num(3)?,
                },
                dose: num(4)?,
            });
        }
        Self::new(provenance, rows, meta)
    }

    /// Writes `path` and its `.meta` sidecar.
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut meta = self.meta.clone();
        meta.set("provenance", self.provenance).set("rows", self.len());
        self.write_csv(BufWriter::new(File::create(path)?))?;
        std::fs::write(meta_path(path), meta.to_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let meta = KvMap::parse(&std::fs::read_to_string(meta_path(path))?)?;
        let provenance = meta.require("provenance")?.parse()?;
        let table = Self::read_csv(BufReader::new(File::open(path)?), provenance, meta)?;
        let declared: usize = table.meta.get_or("rows", table.len())?;
        if declared != table.len() {
            return Err(DatasetError::Row { row: table.len(), msg: format!("sidecar declares {declared} rows") });
        }
        Ok(table)
    }
}

/// `runs/lr.csv` → `runs/lr.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Scenario grid for low-resolution generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nuclides: Vec<String>,
    pub stabilities: Vec<StabilityClass>,
    pub heights: Vec<f64>,
    pub distances: Vec<f64>,
}

impl Grid {
    /// `n` log-spaced points from `lo` to `hi` inclusive.
    pub fn log_distances(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        let (a, b) = (lo.ln(), hi.ln());
        let mut v: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
        v[0] = lo;
        v[n - 1] = hi;
        v
    }

    /// All 17 shipped nuclides, six classes, heights 10..200 step 10, 45 distances.
    pub fn full(db: &NuclideDb) -> Self {
        Self {
            nuclides: db.names().map(String::from).collect(),
            stabilities: StabilityClass::ALL.to_vec(),
            heights: (1..=20).map(|i| 10.0 * i as f64).collect(),
            distances: Self::log_distances(45, 25.0, 2000.0),
        }
    }

    /// Reduced grid: a noble gas, a caesium isotope, a europium isotope and a
    /// high-energy emitter at five heights.
    pub fn desk() -> Self {
        Self {
            nuclides: ["Ar-41", "Co-60", "Cs-137", "Eu-155"].map(String::from).to_vec(),
            stabilities: StabilityClass::ALL.to_vec(),
            heights: vec![10.0, 50.0, 100.0, 150.0, 200.0],
            distances: Self::log_distances(45, 25.0, 2000.0),
        }
    }

    pub fn len(&self) -> usize {
        self.nuclides.len() * self.stabilities.len() * self.heights.len() * self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, db: &NuclideDb) -> Result<(), DatasetError> {
        if self.is_empty() {
            return Err(DatasetError::Grid("every axis needs at least one value".into()));
        }
        for n in &self.nuclides {
            db.get(n)?;
        }
        if let Some(h) = self.heights.iter().find(|&&h| !(10.0..=200.0).contains(&h)) {
            return Err(DatasetError::Grid(format!("height {h} outside [10, 200] m")));
        }
        if let Some(x) = self.distances.iter().find(|&&x| !(25.0..=2000.0).contains(&x)) {
            return Err(DatasetError::Grid(format!("distance {x} outside [25, 2000] m")));
        }
        if self.distances.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(DatasetError::Grid("distances must be strictly ascending".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self, map: &mut KvMap) {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        map.set("grid.nuclides", self.nuclides.join(","))
            .set("grid.stabilities", self.stabilities.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","))
            .set("grid.heights", join(&self.heights))
            .set("grid.distances", join(&self.distances));
    }
}

/// One `(nuclide, stability, height)` group of ground-level centreline doses.
pub fn generate_group(
    db: &NuclideDb,
    nuclide: &str,
    stability: StabilityClass,
    height: f64,
    distances: &[f64],
    cfg: &KernelConfig,
) -> Result<Vec<DoseRow>, DatasetError> {
    let record = db.get(nuclide)?;
    let release = ReleaseSpec::unit(stability, height);
    distances
        .iter()
        .map(|&x| {
            let scenario = Scenario { nuclide: record.name.clone(), stability, height, distance: x };
            match dose_rate(db, record, &release, &Receptor::centerline(x), cfg) {
                Ok(d) => Ok(DoseRow { scenario, dose: d.dose }),
                Err(source) => Err(DatasetError::Kernel { scenario, source }),
            }
        })
        .collect()
}

pub fn kernel_hash(cfg: &KernelConfig) -> String {
    sha256_hex(cfg.canonical().as_bytes())
}

pub fn generate_lowres(db: &NuclideDb, grid: &Grid, cfg: &KernelConfig) -> Result<DoseTable, DatasetError> {
    grid.validate(db)?;
    let groups: Vec<(&String, StabilityClass, f64)> = grid
        .nuclides
        .iter()
        .flat_map(|n| grid.stabilities.iter().flat_map(move |&s| grid.heights.iter().map(move |&h| (n, s, h))))
        .collect();
    let rows: Vec<Vec<DoseRow>> = groups
        .par_iter()
        .map(|&(n, s, h)| generate_group(db, n, s, h, &grid.distances, cfg))
        .collect::<Result<_, _>>()?;
    let mut meta = KvMap::new();
    grid.to_kv(&mut meta);
    meta.set("kernel.config", cfg.canonical()).set("kernel.sha256", kernel_hash(cfg));
    DoseTable::new(Provenance::LowRes, rows.into_iter().flatten().collect(), meta)
}

fn group_label(r: &Scenario) -> String {
    format!("{}/{}/{}", r.nuclide, r.stability, r.height)
}

/// PCHIP in log10 dose over distance, resampled on `points_per_group`
/// uniformly spaced distances spanning each group's knots.
pub fn densify(lowres: &DoseTable, points_per_group: usize, drop_knots: bool) -> Result<DoseTable, DatasetError> {
    if points_per_group < 2 {
        return Err(DatasetError::Grid("points_per_group must be at least 2".into()));
    }
    let groups: Vec<&[DoseRow]> = lowres.groups().collect();
    let rows: Vec<Vec<DoseRow>> = groups
        .par_iter()
        .map(|g| densify_group(g, points_per_group, drop_knots))
        .collect::<Result<_, _>>()?;
    let mut meta = lowres.meta.clone();
    meta.set("densify.points_per_group", points_per_group)
        .set("densify.drop_knots", drop_knots)
        .set("densify.source_rows", lowres.len());
    DoseTable::new(Provenance::HighResInterp, rows.into_iter().flatten().collect(), meta)
}

fn densify_group(group: &[DoseRow], n: usize, drop_knots: bool) -> Result<Vec<DoseRow>, DatasetError> {
    let first = &group[0].scenario;
    let xs: Vec<f64> = group.iter().map(|r| r.scenario.distance).collect();
    let ys: Vec<f64> = group.iter().map(|r| r.dose.log10()).collect();
    let distinct = xs.windows(2).filter(|w| w[0] != w[1]).count() + 1;
    if distinct < 2 {
        return Err(DatasetError::TooFewKnots { group: group_label(first), knots: distinct });
    }
    let curve = PchipCurve::fit(&xs, &ys).map_err(|source| DatasetError::Pchip { group: group_label(first), source })?;
    let (lo, hi) = curve.domain();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x = if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
        if drop_knots && near_any(&xs, x, KNOT_TOLERANCE_M) {
            continue;
        }
        let y = curve.eval(x).map_err(|source| DatasetError::Pchip { group: group_label(first), source })?;
        out.push(DoseRow { scenario: Scenario { distance: x, ..first.clone() }, dose: 10f64.powf(y) });
    }
    Ok(out)
}

/// `sorted` ascending.
fn near_any(sorted: &[f64], x: f64, tol: f64) -> bool {
    let i = sorted.partition_point(|&k| k < x);
    (i < sorted.len() && sorted[i] - x <= tol) || (i > 0 && x - sorted[i - 1] <= tol)
}

/// Drops rows of `table` lying within [`KNOT_TOLERANCE_M`] of any row of
/// `knots` in the same group.
pub fn exclude_knots(table: &DoseTable, knots: &DoseTable) -> DoseTable {
    let mut by_group: BTreeMap<(String, StabilityClass, u64), Vec<f64>> = BTreeMap::new();
    for r in knots.rows() {
        let s = &r.scenario;
        by_group.entry((s.nuclide.clone(), s.stability, s.height.to_bits())).or_default().push(s.distance);
    }
    table.filter(|r| {
        let s = &r.scenario;
        by_group
            .get(&(s.nuclide.clone(), s.stability, s.height.to_bits()))
            .is_none_or(|xs| !near_any(xs, s.distance, KNOT_TOLERANCE_M))
    })
}

/// Count of rows in `a` within [`KNOT_TOLERANCE_M`] of a row of `b` in the same group.
pub fn near_overlap(a: &DoseTable, b: &DoseTable) -> usize {
    a.len() - exclude_knots(a, b).len()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    pub lowres_test_fraction: f64,
    pub highres_test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { seed: 3007, lowres_test_fraction: 0.01, highres_test_fraction: 0.00025 }
    }
}

/// Seeded uniform row split; returns `(train, test)` with
/// `round(fraction · n)` test rows.
pub fn split(table: &DoseTable, fraction: f64, seed: u64) -> Result<(DoseTable, DoseTable), DatasetError> {
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(DatasetError::Split(format!("fraction {fraction} outside (0, 0.5)")));
    }
    let n = table.len();
    let n_test = (fraction * n as f64).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(DatasetError::Split(format!("fraction {fraction} of {n} rows leaves an empty side")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &idx[..n_test] {
        is_test[i] = true;
    }
    let side = |test: bool| {
        let mut meta = table.meta.clone();
        meta.set("split.seed", seed).set("split.fraction", fraction).set("split.side", if test { "test" } else { "train" });
        DoseTable {
            provenance: table.provenance,
            rows: table.rows.iter().zip(&is_test).filter(|(_, &t)| t == test).map(|(r, _)| r.clone()).collect(),
            meta,
        }
    };
    Ok((side(false), side(true)))
}

/// Min–max bounds, category codes and target transform fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub height: (f64, f64),
    pub distance: (f64, f64),
    /// Sorted; a nuclide's code is its index.
    pub nuclides: Vec<String>,
    pub log_target: bool,
}

impl Preprocessor {
    pub fn fit(train: &DoseTable) -> Result<Self, DatasetError> {
        if train.is_empty() {
            return Err(DatasetError::Preprocess("empty training table".into()));
        }
        let bounds = |f: fn(&Scenario) -> f64| {
            train.rows.iter().map(|r| f(&r.scenario)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let height = bounds(|s| s.height);
        let distance = bounds(|s| s.distance);
        if !(height.0 < height.1 && distance.0 < distance.1) {
            return Err(DatasetError::Preprocess("height and distance each need two distinct training values".into()));
        }
        Ok(Self { height, distance, nuclides: train.nuclides(), log_target: true })
    }

    pub fn nuclide_code(&self, name: &str) -> Result<usize, DatasetError> {
        self.nuclides
            .binary_search_by(|n| n.as_str().cmp(name))
            .map_err(|_| DatasetError::UnknownCategory { kind: "radionuclide", value: name.into() })
    }

    /// True when height and distance lie inside the training bounds.
    pub fn in_bounds(&self, s: &Scenario) -> bool {
        (self.height.0..=self.height.1).contains(&s.height) && (self.distance.0..=self.distance.1).contains(&s.distance)
    }

    pub fn encode(&self, s: &Scenario) -> Result<[f64; 4], DatasetError> {
        let scale = |v: f64, (lo, hi): (f64, f64)| (v - lo) / (hi - lo);
        Ok([
            self.nuclide_code(&s.nuclide)? as f64,
            s.stability.index() as f64,
            scale(s.height, self.height),
            scale(s.distance, self.distance),
        ])
    }

    pub fn features(&self, scenarios: &[Scenario]) -> Result<Matrix, DatasetError> {
        let mut cols = vec![Vec::with_capacity(scenarios.len()); 4];
        for s in scenarios {
            for (c, v) in cols.iter_mut().zip(self.encode(s)?) {
                c.push(v);
            }
        }
        Ok(Matrix::from_columns(cols))
    }

    pub fn target(&self, dose: f64) -> Result<f64, DatasetError> {
        if !(dose > 0.0 && dose.is_finite()) {
            return Err(DatasetError::Preprocess(format!("dose must be positive and finite, got {dose}")));
        }
        Ok(if self.log_target { dose.log10() } else { dose })
    }

    pub fn transform(&self, table: &DoseTable) -> Result<(Matrix, Vec<f64>), DatasetError> {
        let x = self.features(&table.scenarios())?;
        let y = table.rows.iter().map(|r| self.target(r.dose)).collect::<Result<_, _>>()?;
        Ok((x, y))
    }

    pub fn inverse_target(&self, predictions: &[f64]) -> Vec<f64> {
        if self.log_target {
            predictions.iter().map(|p| 10f64.powf(*p)).collect()
        } else {
            predictions.to_vec()
        }
    }

    pub fn to_kv(&self, map: &mut KvMap) {
        map.set("pre.height_min", format!("{:?}", self.height.0))
            .set("pre.height_max", format!("{:?}", self.height.1))
            .set("pre.distance_min", format!("{:?}", self.distance.0))
            .set("pre.distance_max", format!("{:?}", self.distance.1))
            .set("pre.nuclides", self.nuclides.join(","))
            .set("pre.log_target", self.log_target);
    }

    pub fn from_kv(map: &KvMap) -> Result<Self, DatasetError> {
        let num = |k: &str| -> Result<f64, DatasetError> {
            let v = map.require(k)?;
            v.parse().map_err(|_| KvError::Value { key: k.into(), value: v.into() }.into())
        };
        let pre = Self {
            height: (num("pre.height_min")?, num("pre.height_max")?),
            distance: (num("pre.distance_min")?, num("pre.distance_max")?),
            nuclides: map.list_or("pre.nuclides", Vec::new())?,
            log_target: map.require("pre.log_target")?.parse().map_err(|_| DatasetError::Preprocess("bad pre.log_target".into()))?,
        };
        if pre.nuclides.is_empty() || pre.nuclides.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DatasetError::Preprocess("pre.nuclides must be a sorted, non-empty, duplicate-free list".into()));
        }
        Ok(pre)
    }
}
