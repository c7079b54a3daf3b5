use std::collections::BTreeSet;

use plumeshine_core::dataset::{
    densify, exclude_knots, generate_lowres, near_overlap, split, DoseRow, DoseTable, Grid, Preprocessor, Provenance, Scenario,
};
use plumeshine_core::dispersion::{ReleaseSpec, StabilityClass};
use plumeshine_core::dose_kernel::{dose_rate, KernelConfig, Receptor};
use plumeshine_core::kv::KvMap;
use plumeshine_core::nuclide_db::NuclideDb;

fn cfg() -> KernelConfig {
    KernelConfig { rel_tol: 1e-3, ..Default::default() }
}

/// Smooth synthetic table: 2 nuclides x 2 classes x 2 heights x `n` log distances.
fn synthetic(n: usize) -> DoseTable {
    let xs = Grid::log_distances(n, 25.0, 2000.0);
    let mut rows = Vec::new();
    for (a, nuc) in ["Co-60", "Cs-137"].iter().enumerate() {
        for s in [StabilityClass::B, StabilityClass::E] {
            for h in [10.0, 120.0] {
                for &x in &xs {
                    let bump = (-(x.ln() - (h / 3.0 + 40.0f64).ln()).powi(2)).exp();
                    let dose = 1e-9 * (1.0 + a as f64) * (1.0 + 3.0 * bump) * (x / 25.0).powf(-1.2 - 0.1 * s.index() as f64);
                    rows.push(DoseRow { scenario: Scenario { nuclide: nuc.to_string(), stability: s, height: h, distance: x }, dose });
                }
            }
        }
    }
    DoseTable::new(Provenance::LowRes, rows, KvMap::new()).unwrap()
}

fn csv_bytes(t: &DoseTable) -> Vec<u8> {
    let mut v = Vec::new();
    t.write_csv(&mut v).unwrap();
    v
}

#[test]
fn small_grid_has_one_positive_row_per_point() {
    let db = NuclideDb::default_db();
    let grid = Grid {
        nuclides: vec!["Ar-41".into(), "Cs-137".into()],
        stabilities: vec![StabilityClass::A, StabilityClass::F],
        heights: vec![20.0, 150.0],
        distances: vec![40.0, 300.0, 1500.0],
    };
    let t = generate_lowres(&db, &grid, &cfg()).unwrap();
    assert_eq!(t.len(), 24);
    assert_eq!(t.keys().len(), 24);
    assert!(t.doses().iter().all(|&d| d > 0.0));
}

#[test]
fn single_point_grid_equals_dose_rate() {
    let db = NuclideDb::default_db();
    let grid = Grid { nuclides: vec!["Eu-155".into()], stabilities: vec![StabilityClass::C], heights: vec![60.0], distances: vec![210.0] };
    let t = generate_lowres(&db, &grid, &cfg()).unwrap();
    let d = dose_rate(&db, db.get("Eu-155").unwrap(), &ReleaseSpec::unit(StabilityClass::C, 60.0), &Receptor::centerline(210.0), &cfg()).unwrap();
    assert_eq!(t.len(), 1);
    assert!((t.rows()[0].dose - d.dose).abs() / d.dose < 1e-8);
}

#[test]
fn grid_outside_ranges_is_rejected() {
    let db = NuclideDb::default_db();
    let mut g = Grid::desk();
    g.heights.push(250.0);
    assert!(generate_lowres(&db, &g, &cfg()).is_err());
    let mut g = Grid::desk();
    g.nuclides.push("Xx-999".into());
    assert!(generate_lowres(&db, &g, &cfg()).is_err());
}

#[test]
fn desk_and_full_grid_sizes() {
    assert_eq!(Grid::desk().len(), 5400);
    assert_eq!(Grid::full(&NuclideDb::default_db()).len(), 17 * 6 * 20 * 45);
}

#[test]
fn split_is_deterministic_disjoint_and_exhaustive() {
    let t = synthetic(45);
    let (a1, b1) = split(&t, 0.03, 3007).unwrap();
    let (a2, b2) = split(&t, 0.03, 3007).unwrap();
    assert_eq!(csv_bytes(&a1), csv_bytes(&a2));
    assert_eq!(csv_bytes(&b1), csv_bytes(&b2));
    assert_eq!(b1.len(), (0.03 * t.len() as f64).round() as usize);
    assert!(a1.keys().is_disjoint(&b1.keys()));
    let union: BTreeSet<_> = a1.keys().union(&b1.keys()).cloned().collect();
    assert_eq!(union, t.keys());
    let (_, b3) = split(&t, 0.03, 3008).unwrap();
    assert_ne!(b1.keys(), b3.keys());
}

#[test]
fn hundred_rows_split_ninety_nine_to_one() {
    let t = DoseTable::new(Provenance::LowRes, synthetic(45).rows()[..100].to_vec(), KvMap::new()).unwrap();
    assert_eq!(t.len(), 100);
    let (a, b) = split(&t, 0.01, 1).unwrap();
    assert_eq!((a.len(), b.len()), (99, 1));
}

#[test]
fn split_rejects_degenerate_fractions() {
    let t = synthetic(3);
    assert!(split(&t, 0.0, 1).is_err());
    assert!(split(&t, 0.5, 1).is_err());
    assert!(split(&t, 0.01, 1).is_err());
}

#[test]
fn densified_table_has_no_knot_rows() {
    let lr = synthetic(45);
    let hr = densify(&lr, 2000, true).unwrap();
    assert_eq!(hr.provenance, Provenance::HighResInterp);
    assert_eq!(near_overlap(&hr, &lr), 0);
    assert!(hr.keys().is_disjoint(&lr.keys()));
    // Both endpoints are knots, so each group loses at least those two.
    let per_group = hr.len() / 8;
    assert!((1990..=1998).contains(&per_group), "{per_group}");
}

#[test]
fn two_point_densify_reproduces_endpoint_knots() {
    let lr = synthetic(45);
    let hr = densify(&lr, 2, false).unwrap();
    assert_eq!(hr.len(), 16);
    for (g_lr, g_hr) in lr.groups().zip(hr.groups()) {
        for (k, r) in [(&g_lr[0], &g_hr[0]), (&g_lr[g_lr.len() - 1], &g_hr[1])] {
            assert_eq!(k.scenario, r.scenario);
            assert!((k.dose - r.dose).abs() / k.dose < 1e-12);
        }
    }
}

#[test]
fn densified_doses_stay_within_bracketing_knots() {
    let lr = synthetic(12);
    let hr = densify(&lr, 400, true).unwrap();
    for (g_lr, g_hr) in lr.groups().zip(hr.groups()) {
        for r in g_hr {
            let i = g_lr.partition_point(|k| k.scenario.distance < r.scenario.distance);
            let (a, b) = (g_lr[i - 1].dose, g_lr[i].dose);
            assert!(r.dose >= a.min(b) * (1.0 - 1e-12) && r.dose <= a.max(b) * (1.0 + 1e-12));
        }
    }
}

#[test]
fn densify_needs_two_knots_per_group() {
    let lr = synthetic(45).filter(|r| r.scenario.distance == 25.0);
    assert!(densify(&lr, 10, true).is_err());
}

#[test]
fn four_way_topology_has_no_key_leaks() {
    let lr = synthetic(45);
    let (lr_train, lr_test) = split(&lr, 0.03, 3007).unwrap();
    let hr = exclude_knots(&densify(&lr_train, 400, true).unwrap(), &lr_test);
    let (hr_train, hr_test) = split(&hr, 0.01, 3007).unwrap();
    for train in [&lr_train, &hr_train] {
        for test in [&lr_test, &hr_test] {
            assert!(train.keys().is_disjoint(&test.keys()));
        }
    }
    assert_eq!(near_overlap(&hr, &lr), 0);
}

#[test]
fn csv_and_sidecar_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lr.csv");
    let mut t = synthetic(5);
    t.meta.set("grid.note", "synthetic");
    t.save(&path).unwrap();
    let back = DoseTable::load(&path).unwrap();
    assert_eq!(back.provenance, Provenance::LowRes);
    assert_eq!(back.meta.get("grid.note"), Some("synthetic"));
    assert_eq!(csv_bytes(&back), csv_bytes(&t));
    let first = std::fs::read_to_string(&path).unwrap();
    assert!(first.starts_with("radionuclide,stability,release_height_m,distance_m,dose_uSv_per_hr\n"));
}

#[test]
fn preprocessor_scales_training_bounds_to_unit_interval() {
    let t = synthetic(5);
    let p = Preprocessor::fit(&t).unwrap();
    let (x, y) = p.transform(&t).unwrap();
    let h = x.column(2);
    assert_eq!(h.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
    assert_eq!(h.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
    assert_eq!(p.target(1e-10).unwrap(), -10.0);
    assert_eq!(y.len(), t.len());
    let mut unseen = t.scenarios()[0].clone();
    unseen.nuclide = "Ar-41".into();
    assert!(p.encode(&unseen).is_err());
    assert!(p.in_bounds(&t.scenarios()[0]));
    assert!(!p.in_bounds(&Scenario { height: 200.0, ..t.scenarios()[0].clone() }));
}
