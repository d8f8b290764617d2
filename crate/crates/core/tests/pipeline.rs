use std::fs;

use covnet_core::imitation::{
    evaluate_policy, fresh_instances, generate_dataset, generate_records, prepare, split, train, Dataset, Policy,
    TrainConfig, TrainRecord, DEFAULT_SPLIT,
};
use covnet_core::neural::{ModelConfig, ModelParams};
use covnet_core::selectors::greedy_central;
use covnet_core::world::ScenarioParams;
use proptest::prelude::*;

#[test]
fn dataset_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let params = ScenarioParams::default();
    generate_dataset(20, 100, params, 17, &a).unwrap();
    generate_dataset(20, 100, params, 17, &b).unwrap();
    generate_dataset(20, 100, params, 18, &c).unwrap();
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_ne!(bytes, fs::read(&c).unwrap());

    let data = Dataset::read(&a).unwrap();
    assert_eq!(data.header.instances, 100);
    assert_eq!(data.records, generate_records(20, params, 17, 0..100).unwrap());
    for rec in &data.records {
        assert_eq!(rec.labels.len(), 20);
        assert!(rec.labels.iter().all(|&l| l < 5));
        assert_eq!(greedy_central(&rec.scenario()).assignment, rec.labels().unwrap());
    }
}

#[test]
fn malformed_datasets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d");
    generate_dataset(4, 3, ScenarioParams::default(), 1, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();

    fs::write(&path, lines[..3].join("\n")).unwrap();
    assert!(Dataset::read(&path).is_err());
    fs::write(&path, text.replace("\"labels\":[", "\"labels\":[7,")).unwrap();
    assert!(Dataset::read(&path).is_err());
    fs::write(&path, "").unwrap();
    assert!(Dataset::read(&path).is_err());
    assert!(generate_dataset(4, 0, ScenarioParams::default(), 1, &path).is_err());
    assert!(generate_dataset(4, 1, ScenarioParams::default(), 1, &dir.path().join("no/such/dir")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn records_round_trip_exactly(n in 1usize..30, seed in any::<u64>(), index in 0u64..1000) {
        let rec = generate_records(n, ScenarioParams::default(), seed, index..index + 1).unwrap().remove(0);
        let back: TrainRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        prop_assert_eq!(&back, &rec);
        prop_assert_eq!(back.scenario(), rec.scenario());
    }
}

#[test]
fn network_memorizes_a_small_set() {
    let recs = generate_records(20, ScenarioParams::default(), 4, 0..10).unwrap();
    let samples = prepare(&recs).unwrap();
    let cfg = TrainConfig { epochs: 500, seed: 4, ..Default::default() };
    let out = train(&samples, &[], &cfg).unwrap();
    assert_eq!(out.steps, 500);
    let last = out.history.last().unwrap();
    let (_, acc) = covnet_core::imitation::evaluate_loss(&out.model, &samples, 64).unwrap();
    assert!(acc >= 0.99, "train accuracy {acc}, last epoch {last:?}");
}

#[test]
fn early_training_loss_trends_down() {
    let recs = generate_records(20, ScenarioParams::default(), 6, 0..1000).unwrap();
    let (tr, va, _) = split(&recs, DEFAULT_SPLIT, 6).unwrap();
    let cfg = TrainConfig { epochs: 20, seed: 6, ..Default::default() };
    let out = train(&prepare(&tr).unwrap(), &prepare(&va).unwrap(), &cfg).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|e| e.train_loss).collect();
    let avg: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(avg.windows(2).all(|w| w[1] <= w[0]), "{avg:?}");
    assert!(out.history.last().unwrap().val_accuracy > 0.2);
}

/// A randomly initialized network picks near-arbitrary actions, so its
/// coverage lands within a small margin of uniform random assignment.
#[test]
fn random_weights_match_random_assignment() {
    let scenarios = fresh_instances(20, 320, ScenarioParams::default(), 5).unwrap();
    let (mut model, mut random) = (Vec::new(), Vec::new());
    for (k, s) in scenarios.iter().enumerate() {
        let p = ModelParams::<f32>::init(ModelConfig::default(), 1000 + k as u64).unwrap();
        let e = evaluate_policy(Policy::Model(&p), std::slice::from_ref(s)).unwrap();
        model.push(e.instances[0].ratio);
        random.push(e.instances[0].random_ratio);
    }
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var / v.len() as f64)
    };
    let ((ma, va), (mb, vb)) = (stats(&model), stats(&random));
    let diff = ma - mb;
    let half_width = 1.96 * (va + vb).sqrt();
    // Equivalence within five ratio points at 95% confidence.
    assert!(diff.abs() + half_width < 0.05, "model {ma:.4}, random {mb:.4}, ci ±{half_width:.4}");
}
