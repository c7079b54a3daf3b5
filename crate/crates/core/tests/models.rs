use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use plumeshine_core::dataset::{split, DoseRow, DoseTable, Grid, Provenance, Scenario};
use plumeshine_core::dispersion::StabilityClass;
use plumeshine_core::features::Matrix;
use plumeshine_core::kv::KvMap;
use plumeshine_core::tree_models::{
    fit_forest, fit_tree, train_boosted, train_forest, BoostedParams, Ensemble, ForestParams, ModelError, SurrogateModel, TreeParams,
};

fn table() -> DoseTable {
    let mut rows = Vec::new();
    for nuc in ["Ar-41", "Cs-137", "Eu-155"] {
        for s in StabilityClass::ALL {
            for h in [10.0, 70.0, 130.0, 200.0] {
                for x in Grid::log_distances(15, 25.0, 2000.0) {
                    let scale = match nuc {
                        "Ar-41" => 3.0,
                        "Cs-137" => 1.0,
                        _ => 0.2,
                    };
                    let peak = 8.0 * h / (1.0 + s.index() as f64);
                    let dose = 1e-9 * scale * (-(x.ln() - peak.ln()).powi(2) / 2.0).exp() / (1.0 + h / 50.0) + 1e-13;
                    rows.push(DoseRow { scenario: Scenario { nuclide: nuc.into(), stability: s, height: h, distance: x }, dose });
                }
            }
        }
    }
    DoseTable::new(Provenance::LowRes, rows, KvMap::new()).unwrap()
}

fn small_forest() -> ForestParams {
    ForestParams { n_estimators: 8, ..Default::default() }
}

fn small_boost() -> BoostedParams {
    BoostedParams { max_depth: 8, rounds: 40, ..Default::default() }
}

fn probes(n: usize) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..n)
        .map(|_| Scenario {
            nuclide: ["Ar-41", "Cs-137", "Eu-155"][rng.gen_range(0..3)].into(),
            stability: StabilityClass::from_index(rng.gen_range(0..6)).unwrap(),
            height: rng.gen_range(10.0..200.0),
            distance: rng.gen_range(25.0..2000.0),
        })
        .collect()
}

#[test]
fn same_seed_gives_identical_model_files() {
    let t = table();
    let (train, val) = split(&t, 0.1, 5).unwrap();
    let a = train_forest(&train, &[0, 1, 2, 3], &small_forest()).unwrap().to_text();
    let b = train_forest(&train, &[0, 1, 2, 3], &small_forest()).unwrap().to_text();
    assert_eq!(a, b);
    let a = train_boosted(&train, &val, &[0, 1, 2, 3], &small_boost()).unwrap().to_text();
    let b = train_boosted(&train, &val, &[0, 1, 2, 3], &small_boost()).unwrap().to_text();
    assert_eq!(a, b);
    let c = train_boosted(&train, &val, &[0, 1, 2, 3], &BoostedParams { seed: 1, ..small_boost() }).unwrap().to_text();
    assert_ne!(a, c);
}

#[test]
fn saved_models_predict_bit_identically() {
    let t = table();
    let (train, val) = split(&t, 0.1, 5).unwrap();
    let one = train_forest(&train, &[0, 1, 2, 3], &ForestParams { n_estimators: 1, ..Default::default() }).unwrap();
    let boosted = train_boosted(&train, &val, &[1, 2, 3], &small_boost()).unwrap();
    let p = probes(100);
    for m in [one, boosted] {
        let back = SurrogateModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let (a, b) = (m.predict_dose(&p).unwrap(), back.predict_dose(&p).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn corrupt_or_truncated_model_files_are_rejected() {
    let t = table();
    let m = train_forest(&t, &[0, 1, 2, 3], &ForestParams { n_estimators: 2, max_depth: 4, ..Default::default() }).unwrap();
    let text = m.to_text();
    let i = text.find("\nL ").unwrap() + 3;
    let mut bytes = text.clone().into_bytes();
    bytes[i] = if bytes[i] == b'1' { b'2' } else { b'1' };
    assert!(matches!(SurrogateModel::from_text(&String::from_utf8(bytes).unwrap()), Err(ModelError::Checksum)));
    assert!(SurrogateModel::from_text(&text[..text.len() / 2]).is_err());
    let wrong = text.replacen("plumeshine-model 1", "plumeshine-model 9", 1);
    assert!(matches!(SurrogateModel::from_text(&wrong), Err(ModelError::Version(_))));
}

#[test]
fn batch_and_single_predictions_agree() {
    let t = table();
    let m = train_forest(&t, &[0, 1, 2, 3], &small_forest()).unwrap();
    let p = probes(30);
    let batch = m.predict_dose(&p).unwrap();
    for (s, b) in p.iter().zip(&batch) {
        assert_eq!(m.predict_dose(std::slice::from_ref(s)).unwrap()[0].to_bits(), b.to_bits());
    }
}

#[test]
fn unseen_nuclide_is_an_error() {
    let m = train_forest(&table(), &[0, 1, 2, 3], &small_forest()).unwrap();
    let s = Scenario { nuclide: "Co-60".into(), stability: StabilityClass::D, height: 50.0, distance: 300.0 };
    assert!(m.predict_dose(&[s]).is_err());
}

#[test]
fn single_tree_forest_without_bootstrap_equals_tree() {
    let t = table();
    let m = train_forest(&t, &[0, 1, 2, 3], &ForestParams { n_estimators: 1, bootstrap: false, ..Default::default() }).unwrap();
    let (x, y) = m.pre.transform(&t).unwrap();
    let tree = fit_tree(&x, &y, &TreeParams { max_depth: 15, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(m.predict(&x), tree.predict(&x));
}

#[test]
fn forest_fits_held_out_noisy_quadratic_better_than_a_deep_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut sample = |n: usize| {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a * a + 0.5 * b + rng.gen_range(-0.1..0.1)).collect();
        (Matrix::from_columns(vec![a, b]), y)
    };
    let (x, y) = sample(400);
    let (xt, yt) = sample(400);
    let mse = |p: Vec<f64>, y: &[f64]| p.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64;
    let tree = fit_tree(&x, &y, &TreeParams { max_depth: 30, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let forest = fit_forest(&x, &y, &ForestParams::default()).unwrap();
    let tree_test = mse(tree.predict(&xt), &yt);
    assert!(mse(forest.predict(&x), &y) <= tree_test);
    assert!(mse(forest.predict(&xt), &yt) < tree_test);
}

#[test]
fn boosted_beats_forest_on_validation() {
    let t = table();
    let (train, val) = split(&t, 0.1, 9).unwrap();
    let f = train_forest(&train, &[0, 1, 2, 3], &ForestParams::default()).unwrap();
    let b = train_boosted(&train, &val, &[0, 1, 2, 3], &BoostedParams::default()).unwrap();
    let (xv, yv) = f.pre.transform(&val).unwrap();
    let rmse = |p: Vec<f64>| (p.iter().zip(&yv).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / yv.len() as f64).sqrt();
    let (rf, rb) = (rmse(f.predict(&xv)), rmse(b.predict(&xv)));
    let Ensemble::Boosted(bm) = &b.ensemble else { unreachable!() };
    assert!(bm.trees.len() <= 100);
    assert!((bm.val_rmse[bm.best_round() - 1] - rb).abs() < 1e-12);
    assert!(rb < rf, "boosted {rb} vs forest {rf}");
}

#[test]
fn log_space_predictions_stay_near_training_targets() {
    let t = table();
    let (train, val) = split(&t, 0.1, 9).unwrap();
    let b = train_boosted(&train, &val, &[0, 1, 2, 3], &small_boost()).unwrap();
    let (_, y) = b.pre.transform(&train).unwrap();
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let x = b.pre.features(&probes(200)).unwrap();
    assert!(b.predict(&x).iter().all(|&p| p >= lo - 1.0 && p <= hi + 1.0));
}

#[test]
fn feature_subset_must_be_valid() {
    let t = table();
    assert!(train_forest(&t, &[], &small_forest()).is_err());
    assert!(train_forest(&t, &[2, 1], &small_forest()).is_err());
    assert!(train_forest(&t, &[4], &small_forest()).is_err());
}
