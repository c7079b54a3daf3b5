//! Pipeline stages. Each stage reads its inputs from and writes its outputs
//! to a single output directory with fixed file names, so stages can be run
//! one at a time or chained by [`run_all`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plumeshine_core::dataset::{self, DoseTable, Provenance};
use plumeshine_core::evaluation::{
    self, conditional_permutation_importance, exhaustive_ablation, metrics, regime_stats, skewness, GroupBy, MetricsEntry, Regime,
    WhiskerEntry,
};
use plumeshine_core::features::FEATURE_NAMES;
use plumeshine_core::kv::KvMap;
use plumeshine_core::pchip::PchipCurve;
use plumeshine_core::tree_models::{train_boosted, train_forest, Ensemble, Family, ModelError, SurrogateModel};
use rayon::prelude::*;
use tracing::info;

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const ALL_FEATURES: [usize; 4] = [0, 1, 2, 3];

/// Which low- or high-resolution table a stage works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Low,
    High,
}

impl Resolution {
    pub const ALL: [Resolution; 2] = [Resolution::Low, Resolution::High];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Low => "lr",
            Self::High => "hr",
        }
    }
}

impl std::str::FromStr for Resolution {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lr" | "low" | "lowres" => Ok(Self::Low),
            "hr" | "high" | "highres" => Ok(Self::High),
            _ => Err(CliError::Config(format!("unknown resolution `{s}`, expected lr or hr"))),
        }
    }
}

/// File names under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn lowres(&self) -> PathBuf {
        self.root.join("lowres.csv")
    }

    pub fn highres(&self) -> PathBuf {
        self.root.join("highres.csv")
    }

    pub fn train(&self, r: Resolution) -> PathBuf {
        self.root.join(format!("{}_train.csv", r.tag()))
    }

    pub fn test(&self, r: Resolution) -> PathBuf {
        self.root.join(format!("{}_test.csv", r.tag()))
    }

    pub fn model(&self, family: Family, r: Resolution) -> PathBuf {
        self.root.join("models").join(format!("{family}_{}.model", r.tag()))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn save(table: &DoseTable, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    table.save(path)?;
    info!(path = %path.display(), rows = table.len(), "wrote table");
    Ok(())
}

fn load(path: &Path) -> Result<DoseTable, CliError> {
    DoseTable::load(path).map_err(|e| match e {
        dataset::DatasetError::Io(source) => CliError::io(&dataset::meta_path(path), source),
        e => e.into(),
    })
}

pub fn load_model(path: &Path) -> Result<SurrogateModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(SurrogateModel::from_text(&text)?)
}

/// Low-resolution and high-resolution test rows together.
pub fn unified_test(lr_test: &DoseTable, hr_test: &DoseTable) -> Result<DoseTable, CliError> {
    let rows = lr_test.rows().iter().chain(hr_test.rows()).cloned().collect();
    let mut meta = KvMap::new();
    meta.set("unified", "lr_test+hr_test");
    // Provenance is nominal here; the table never reaches disk.
    Ok(DoseTable::new(Provenance::LowRes, rows, meta)?)
}

pub fn generate(cfg: &PipelineConfig, out: &Path) -> Result<DoseTable, CliError> {
    let db = cfg.db()?;
    info!(rows = cfg.grid.len(), rel_tol = cfg.kernel.rel_tol, "generating low-resolution table");
    let mut t = dataset::generate_lowres(&db, &cfg.grid, &cfg.kernel)?;
    t.meta.set("seed", cfg.seed);
    save(&t, &Layout::new(out).lowres())?;
    Ok(t)
}

fn split_into(cfg: &PipelineConfig, table: &DoseTable, fraction: f64, r: Resolution, out: &Path) -> Result<(), CliError> {
    let (train, test) = dataset::split(table, fraction, cfg.seed)?;
    let l = Layout::new(out);
    save(&train, &l.train(r))?;
    save(&test, &l.test(r))
}

pub fn split(cfg: &PipelineConfig, which: Resolution, out: &Path) -> Result<(), CliError> {
    let l = Layout::new(out);
    match which {
        Resolution::Low => split_into(cfg, &load(&l.lowres())?, cfg.lowres_test_fraction, which, out),
        Resolution::High => split_into(cfg, &load(&l.highres())?, cfg.highres_test_fraction, which, out),
    }
}

/// Densifies the low-resolution training rows only, then drops any point
/// that lands on a low-resolution test knot.
pub fn densify(cfg: &PipelineConfig, out: &Path) -> Result<DoseTable, CliError> {
    let l = Layout::new(out);
    let lr_train = load(&l.train(Resolution::Low))?;
    let lr_test = load(&l.test(Resolution::Low))?;
    let hr = dataset::densify(&lr_train, cfg.points_per_group, cfg.drop_knots)?;
    let mut hr = dataset::exclude_knots(&hr, &lr_test);
    hr.meta.set("densify.source", "lr_train");
    save(&hr, &l.highres())?;
    Ok(hr)
}

/// Forest on all of `train`; boosted on a seeded carve-out of `train`, the
/// rest driving early stopping.
pub fn fit_model(cfg: &PipelineConfig, family: Family, train: &DoseTable, features: &[usize]) -> Result<SurrogateModel, ModelError> {
    Ok(match family {
        Family::Forest => train_forest(train, features, &cfg.forest)?,
        Family::Boosted => {
            let (fit, val) = dataset::split(train, cfg.validation_fraction, cfg.seed.wrapping_add(1))?;
            train_boosted(&fit, &val, features, &cfg.boosted)?
        }
    })
}

pub fn train(cfg: &PipelineConfig, families: &[Family], resolutions: &[Resolution], out: &Path) -> Result<(), CliError> {
    let l = Layout::new(out);
    for &r in resolutions {
        let t = load(&l.train(r))?;
        for &f in families {
            info!(family = %f, train = r.tag(), rows = t.len(), "training");
            let m = fit_model(cfg, f, &t, &ALL_FEATURES)?;
            write(&l.model(f, r), &m.to_text())?;
        }
    }
    Ok(())
}

fn regime_tables(r: Regime) -> (Resolution, Resolution) {
    match r {
        Regime::LrLr => (Resolution::Low, Resolution::Low),
        Regime::LrHr => (Resolution::Low, Resolution::High),
        Regime::HrHr => (Resolution::High, Resolution::High),
        Regime::HrLr => (Resolution::High, Resolution::Low),
    }
}

/// Metrics for all four train/test pairings, whisker statistics and
/// per-row errors of the high-resolution models on the unified test set,
/// and a plain summary.
pub fn evaluate(cfg: &PipelineConfig, families: &[Family], out: &Path) -> Result<Vec<MetricsEntry>, CliError> {
    let l = Layout::new(out);
    let lr_test = load(&l.test(Resolution::Low))?;
    let hr_test = load(&l.test(Resolution::High))?;
    let unified = unified_test(&lr_test, &hr_test)?;
    let mut entries = Vec::new();
    let mut whiskers = Vec::new();
    let mut summary = cfg.to_kv();
    for &f in families {
        for r in Regime::ALL {
            let (tr, te) = regime_tables(r);
            let model = load_model(&l.model(f, tr))?;
            let test = if te == Resolution::Low { &lr_test } else { &hr_test };
            let pred = model.predict_dose(&test.scenarios())?;
            entries.push(MetricsEntry { model: f.to_string(), regime: r, metrics: metrics(&test.doses(), &pred)? });
        }
        for r in Resolution::ALL {
            if let Ensemble::Boosted(b) = &load_model(&l.model(f, r))?.ensemble {
                summary.set(&format!("boosted.{}.kept_rounds", r.tag()), b.best_round());
                summary.set(&format!("boosted.{}.fitted_rounds", r.tag()), b.val_rmse.len());
            }
        }
        let model = load_model(&l.model(f, Resolution::High))?;
        let pred = model.predict_dose(&unified.scenarios())?;
        let truth = unified.doses();
        for by in [GroupBy::Stability, GroupBy::Radionuclide] {
            let keys: Vec<String> = unified.rows().iter().map(|r| by.key(&r.scenario)).collect();
            whiskers.push(WhiskerEntry {
                model: f.to_string(),
                train: "HR-train".into(),
                test: "LR-test+HR-test".into(),
                group_by: by,
                stats: regime_stats(&truth, &pred, &keys)?,
            });
        }
        write(&l.report(&format!("errors_{f}.csv")), &evaluation::error_samples_csv(&f.to_string(), &unified, &pred))?;
    }
    write(&l.report("metrics.csv"), &evaluation::metrics_csv(&entries))?;
    write(&l.report("regimes.csv"), &evaluation::regime_csv(&whiskers))?;
    let lowres = load(&l.lowres())?;
    let d = lowres.doses();
    let logd: Vec<f64> = d.iter().map(|v| v.log10()).collect();
    summary
        .set("rows.lowres", lowres.len())
        .set("rows.lr_test", lr_test.len())
        .set("rows.hr_test", hr_test.len())
        .set("skewness.dose", format!("{:.4}", skewness(&d)))
        .set("skewness.log10_dose", format!("{:.4}", skewness(&logd)));
    write(&l.report("summary.txt"), &summary.to_string())?;
    Ok(entries)
}

/// Radionuclide-conditional permutation importance of the high-resolution
/// models on the unified test set, repeated over `importance.seeds`
/// consecutive seeds for the argmax stability table.
pub fn importance(cfg: &PipelineConfig, families: &[Family], out: &Path) -> Result<(), CliError> {
    let l = Layout::new(out);
    let unified = unified_test(&load(&l.test(Resolution::Low))?, &load(&l.test(Resolution::High))?)?;
    let mut argmax = String::from("model,seed,radionuclide,argmax_feature\n");
    for &f in families {
        let model = load_model(&l.model(f, Resolution::High))?;
        for k in 0..cfg.importance_seeds as u64 {
            let seed = cfg.seed.wrapping_add(k);
            let m = conditional_permutation_importance(&model, &unified, cfg.importance_repeats, seed)?;
            if k == 0 {
                write(&l.report(&format!("importance_{f}.csv")), &evaluation::importance_csv(&f.to_string(), &m))?;
            }
            for (n, j) in m.nuclides.iter().zip(m.argmax()) {
                writeln!(argmax, "{f},{seed},{n},{}", FEATURE_NAMES[j]).unwrap();
            }
        }
    }
    write(&l.report("importance_argmax.csv"), &argmax)
}

/// Retrains on every feature subset of the high-resolution training set and
/// scores on the unified test set.
pub fn ablate(cfg: &PipelineConfig, families: &[Family], out: &Path) -> Result<(), CliError> {
    let l = Layout::new(out);
    let train = load(&l.train(Resolution::High))?;
    let unified = unified_test(&load(&l.test(Resolution::Low))?, &load(&l.test(Resolution::High))?)?;
    for &f in families {
        info!(family = %f, "ablation");
        let t = exhaustive_ablation(
            |features| fit_model(cfg, f, &train, features),
            &unified,
        )?;
        write(&l.report(&format!("ablation_{f}.csv")), &evaluation::ablation_csv(&f.to_string(), &t))?;
    }
    Ok(())
}

/// Dose-versus-distance curves: quadrature at log-spaced knots and at each
/// interval's geometric midpoint, with the log-PCHIP value at the same
/// distances.
pub fn profile(cfg: &PipelineConfig, out: &Path) -> Result<String, CliError> {
    let db = cfg.db()?;
    let p = &cfg.profile;
    let knots = dataset::Grid::log_distances(p.knots, 25.0, 2000.0);
    let mids: Vec<f64> = knots.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
    let mut all: Vec<f64> = knots.iter().chain(&mids).copied().collect();
    all.sort_by(f64::total_cmp);
    let groups: Vec<(&String, _)> = p.nuclides.iter().flat_map(|n| p.stabilities.iter().map(move |&s| (n, s))).collect();
    let curves = groups
        .par_iter()
        .map(|&(n, s)| {
            let rec = db.get(n)?;
            let dose = plumeshine_core::dose_kernel::dose_profile(&db, rec, s, p.height, &all, &cfg.kernel)?;
            Ok::<_, CliError>((n, s, dose))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("radionuclide,stability,release_height_m,distance_m,kind,reference_dose_uSv_per_hr,pchip_dose_uSv_per_hr,rel_diff_percent\n");
    for (n, s, dose) in curves {
        let (kx, ky): (Vec<f64>, Vec<f64>) =
            dose.iter().filter(|(x, _)| knots.binary_search_by(|k| k.total_cmp(x)).is_ok()).map(|&(x, d)| (x, d.log10())).unzip();
        let curve = PchipCurve::fit(&kx, &ky).map_err(|e| CliError::Config(format!("profile {n}/{s}: {e}")))?;
        for (x, d) in dose {
            let kind = if knots.binary_search_by(|k| k.total_cmp(&x)).is_ok() { "knot" } else { "midpoint" };
            let ip = 10f64.powf(curve.eval(x).map_err(|e| CliError::Config(format!("profile {n}/{s}: {e}")))?);
            writeln!(csv, "{n},{s},{},{x:.6},{kind},{d:.8e},{ip:.8e},{:.4}", p.height, 100.0 * (ip - d) / d).unwrap();
        }
    }
    write(&Layout::new(out).report("profile.csv"), &csv)?;
    Ok(csv)
}

/// Every stage in order, from grid generation to ablation.
pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    generate(cfg, out)?;
    run_from_lowres(cfg, out)
}

/// Every stage after generation, reading `lowres.csv` from `out`.
pub fn run_from_lowres(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    split(cfg, Resolution::Low, out)?;
    densify(cfg, out)?;
    split(cfg, Resolution::High, out)?;
    train(cfg, &Family::ALL, &Resolution::ALL, out)?;
    evaluate(cfg, &Family::ALL, out)?;
    importance(cfg, &Family::ALL, out)?;
    ablate(cfg, &Family::ALL, out)
}
