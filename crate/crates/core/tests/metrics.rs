use plumeshine_core::dataset::{DoseRow, DoseTable, Provenance, Scenario};
use plumeshine_core::dispersion::StabilityClass;
use plumeshine_core::evaluation::{
    conditional_permutation_importance, exhaustive_ablation, feature_subsets, metrics, percentile, regime_stats, relative_errors,
    smape, summarize, EvalError, GroupBy,
};
use plumeshine_core::kv::KvMap;
use plumeshine_core::tree_models::{train_forest, ForestParams};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

#[test]
fn perfect_prediction_anchors() {
    let y = [1.0, 2.0, 4.0, 8.0];
    let m = metrics(&y, &y).unwrap();
    assert_eq!((m.r2, m.mape_percent, m.smape_percent, m.rmse_physical), (1.0, 0.0, 0.0, 0.0));
}

#[test]
fn mean_prediction_has_zero_r2() {
    let y = [1.0, 2.0, 4.0, 9.0];
    let m = metrics(&y, &[4.0; 4]).unwrap();
    assert_eq!(m.r2, 0.0);
}

#[test]
fn three_point_fixture() {
    // y = (1, 2, 4), p = (2, 2, 2): mean 7/3, SS_tot 42/9, SS_res 5.
    let m = metrics(&[1.0, 2.0, 4.0], &[2.0, 2.0, 2.0]).unwrap();
    assert!(close(m.r2, -1.0 / 14.0), "{}", m.r2);
    assert!(close(m.mape_percent, 50.0));
    assert!(close(m.smape_percent, 400.0 / 9.0));
    assert!(close(m.rmse_physical, (5.0f64 / 3.0).sqrt()));
}

#[test]
fn threefold_overprediction_has_smape_one_hundred() {
    assert!(close(smape(&[1.0, 1.0, 1.0], &[3.0, 3.0, 3.0]), 100.0));
    assert!(close(smape(&[1.0, 1.0], &[3.0, 3.0]), 100.0));
}

#[test]
fn smape_reaches_two_hundred_only_without_overlap() {
    assert_eq!(smape(&[1.0], &[0.0]), 200.0);
    assert!(smape(&[1e-6], &[1.0]) < 200.0);
    assert_eq!(smape(&[2.0, 5.0], &[7.0, 1.0]), smape(&[7.0, 1.0], &[2.0, 5.0]));
}

#[test]
fn metric_preconditions() {
    assert!(matches!(metrics(&[2.0, 2.0], &[1.0, 3.0]), Err(EvalError::ZeroVariance)));
    assert!(matches!(metrics(&[1.0], &[1.0]), Err(EvalError::TooFew { .. })));
    assert!(matches!(metrics(&[1.0, 2.0], &[1.0]), Err(EvalError::Length(2, 1))));
    assert!(matches!(metrics(&[1.0, -2.0], &[1.0, 1.0]), Err(EvalError::NonPositive(_))));
}

#[test]
fn percentiles_of_one_to_hundred() {
    let e: Vec<f64> = (1..=100).map(f64::from).collect();
    let s = summarize(&e).unwrap();
    assert!(close(s.median, 50.5) && close(s.p10, 10.9) && close(s.p90, 90.1));
    assert_eq!(s.n, 100);
    assert_eq!(percentile(&[3.0], 0.9), 3.0);
}

#[test]
fn regime_groups_partition_rows() {
    let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let p = [1.1, 2.0, 2.7, 4.0, 5.0, 6.6];
    let keys: Vec<String> = ["A", "B", "A", "C", "B", "A"].map(String::from).to_vec();
    let g = regime_stats(&y, &p, &keys).unwrap();
    assert_eq!(g.values().map(|s| s.n).sum::<usize>(), 6);
    assert!(close(g["A"].median, 10.0));
    assert_eq!(g["B"].p90, 0.0);
    let perfect = regime_stats(&y, &y, &keys).unwrap();
    assert!(perfect.values().all(|s| s.median == 0.0 && s.p10 == 0.0 && s.p90 == 0.0));
    assert!(close(relative_errors(&[4.0], &[5.0])[0], 25.0));
}

#[test]
fn group_keys() {
    let s = Scenario { nuclide: "Cs-137".into(), stability: StabilityClass::E, height: 10.0, distance: 25.0 };
    assert_eq!(GroupBy::Stability.key(&s), "E");
    assert_eq!(GroupBy::Radionuclide.key(&s), "Cs-137");
}

fn table() -> DoseTable {
    let mut rows = Vec::new();
    for (k, nuc) in ["Ar-41", "Co-60"].iter().enumerate() {
        for s in [StabilityClass::A, StabilityClass::D, StabilityClass::F] {
            for h in [10.0, 60.0, 110.0, 160.0] {
                for i in 0..12 {
                    let x = 25.0 * 1.45f64.powi(i);
                    let dose = 1e-9 * (1.0 + k as f64) * (x / (h + 20.0)).powf(-1.5 - 0.2 * s.index() as f64).min(2.0);
                    rows.push(DoseRow { scenario: Scenario { nuclide: nuc.to_string(), stability: s, height: h, distance: x }, dose });
                }
            }
        }
    }
    DoseTable::new(Provenance::LowRes, rows, KvMap::new()).unwrap()
}

#[test]
fn importance_rows_are_normalized_and_nuclide_column_is_zero() {
    let t = table();
    let m = train_forest(&t, &[0, 1, 2, 3], &ForestParams { n_estimators: 10, ..Default::default() }).unwrap();
    let a = conditional_permutation_importance(&m, &t, 10, 1).unwrap();
    let b = conditional_permutation_importance(&m, &t, 10, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.nuclides, ["Ar-41", "Co-60"]);
    for (raw, norm) in a.raw.iter().zip(&a.normalized) {
        assert_eq!(raw[0], 0.0);
        assert!(norm.iter().all(|&v| v >= 0.0));
        assert!((norm.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(matches!(conditional_permutation_importance(&m, &t, 4, 1), Err(EvalError::Repeats(5))));
    let tiny = t.filter(|r| r.scenario.distance < 30.0);
    assert!(matches!(conditional_permutation_importance(&m, &tiny, 10, 1), Err(EvalError::SubsetTooSmall { .. })));
}

#[test]
fn unused_feature_has_zero_importance() {
    let t = table();
    let m = train_forest(&t, &[2, 3], &ForestParams { n_estimators: 5, ..Default::default() }).unwrap();
    let a = conditional_permutation_importance(&m, &t, 5, 3).unwrap();
    assert!(a.raw.iter().all(|r| r[0] == 0.0 && r[1] == 0.0));
}

#[test]
fn ablation_covers_all_subsets_and_full_row_matches_headline() {
    let subsets = feature_subsets();
    assert_eq!(subsets.len(), 15);
    assert_eq!(subsets[0], [0]);
    assert_eq!(subsets[14], [0, 1, 2, 3]);
    let t = table();
    let p = ForestParams { n_estimators: 6, ..Default::default() };
    let ab = exhaustive_ablation(|f| train_forest(&t, f, &p), &t).unwrap();
    assert_eq!(ab.rows.len(), 15);
    assert_eq!(ab.by_size.iter().map(|b| b.0).collect::<Vec<_>>(), [1, 2, 3, 4]);
    let full = train_forest(&t, &[0, 1, 2, 3], &p).unwrap();
    let headline = metrics(&t.doses(), &full.predict_dose(&t.scenarios()).unwrap()).unwrap().rmse_physical;
    let row = ab.rows.iter().filter(|r| r.subset.len() == 4).collect::<Vec<_>>();
    assert_eq!(row.len(), 1);
    assert!((row[0].rmse - headline).abs() <= 1e-12 * headline);
    let again = exhaustive_ablation(|f| train_forest(&t, f, &p), &t).unwrap();
    assert_eq!(ab, again);
}
