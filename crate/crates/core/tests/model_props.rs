use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tracekit::features::{Label, LabeledPath, SuspiciousMethodSet};
use tracekit::model::{
    class_weights, fit_logistic, logo_evaluate, loss_and_gradient, rank_paths, recall_at_k, AnomalyModel, Logistic,
    LogisticScorer, OracleScorer, ScoredPath, TrainConfig,
};
use tracekit::synthetic::{benchmark_dataset, BenchmarkConfig};
use tracekit::{Rational, TxHash};

/// Largest relative discrepancy between the analytic gradient and central
/// differences of the loss, over all coordinates.
fn gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..40);
    let d = rng.random_range(1..10);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    let model = Logistic {
        weights: (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
        bias: rng.random_range(-1.0..1.0),
    };
    let cw = class_weights::<f64>(&labels, rng.random_bool(0.5));
    let l2 = rng.random_range(0.0..0.1);
    let (_, g) = loss_and_gradient(&model, &rows, &labels, &cw, l2);
    let h = 1e-5;
    let loss_at = |m: &Logistic<f64>| loss_and_gradient(m, &rows, &labels, &cw, l2).0;
    let mut worst: f64 = 0.0;
    for j in 0..=d {
        let mut plus = model.clone();
        let mut minus = model.clone();
        if j < d {
            plus.weights[j] += h;
            minus.weights[j] -= h;
        } else {
            plus.bias += h;
            minus.bias -= h;
        }
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        let analytic = if j < d { g.weights[j] } else { g.bias };
        let scale = analytic.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..50 {
        let e = gradient_error(seed);
        assert!(e < 1e-6, "instance {seed}: relative error {e:e}");
    }
}

/// Two Gaussian-ish clouds separated by a margin along a random direction.
pub fn blobs(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ux, uy) = (angle.cos(), angle.sin());
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 2 == 0;
        let along = if y { rng.random_range(0.5..3.0) } else { -rng.random_range(0.5..3.0) };
        let across = rng.random_range(-3.0..3.0);
        rows.push(vec![along * ux - across * uy + 1.0, along * uy + across * ux - 0.5]);
        labels.push(y);
    }
    (rows, labels)
}

#[test]
fn separable_blobs_are_learned() {
    for seed in 0..5 {
        let (rows, labels) = blobs(seed, 200);
        let m = fit_logistic(&rows, &labels, &TrainConfig::default()).unwrap();
        let correct = rows
            .iter()
            .zip(&labels)
            .filter(|(x, &y)| (m.predict(x).unwrap() >= 0.5) == y)
            .count();
        assert!(correct as f64 / 200.0 >= 0.99, "seed {seed}: {correct}/200");
    }
}

#[test]
fn f32_and_f64_agree_on_blobs() {
    let (rows, labels) = blobs(9, 200);
    let cfg = TrainConfig { max_iterations: 500, ..TrainConfig::default() };
    let m64 = fit_logistic(&rows, &labels, &cfg).unwrap();
    let rows32: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
    let m32 = fit_logistic(&rows32, &labels, &cfg).unwrap();
    for (a, b) in m64.weights.iter().zip(&m32.weights) {
        assert!((a - *b as f64).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn retraining_is_bit_identical() {
    let data = benchmark_dataset(&BenchmarkConfig { incidents: 4, ..BenchmarkConfig::default() });
    let m = SuspiciousMethodSet::default();
    let digest = || {
        let model = AnomalyModel::<f64>::train(&data, &m, &TrainConfig::default()).unwrap();
        hex::encode(Sha256::digest(model.to_json().as_bytes()))
    };
    assert_eq!(digest(), digest());
}

#[test]
fn single_class_and_loading_errors() {
    let p = LabeledPath {
        incident_id: "i".into(),
        tx_hash: TxHash::from_label("t"),
        path_key: "k".into(),
        sig: vec!["transfer".into()],
        fanout: 1,
        label: Label::Benign,
    };
    let m = SuspiciousMethodSet::default();
    assert!(AnomalyModel::<f64>::train(&[p.clone(), p], &m, &TrainConfig::default()).is_err());
    let good = AnomalyModel::<f64>::train(
        &benchmark_dataset(&BenchmarkConfig { incidents: 2, ..BenchmarkConfig::default() }),
        &m,
        &TrainConfig::default(),
    )
    .unwrap();
    let mut bad = good.clone();
    bad.weights.pop();
    assert!(AnomalyModel::<f64>::from_json(&bad.to_json()).is_err());
    let extra = good.to_json().replacen('{', "{\"surprise\": 1,", 1);
    assert!(AnomalyModel::<f64>::from_json(&extra).is_err());
    assert_eq!(AnomalyModel::<f64>::from_json(&good.to_json()).unwrap(), good);
}

fn scored(keys: &[(u8, u8)]) -> Vec<ScoredPath> {
    keys.iter()
        .enumerate()
        .map(|(i, &(s, sem))| ScoredPath {
            path_key: format!("p{i:03}"),
            score: s as f64 / 8.0,
            semantic: Rational::new(sem as u64, 4),
        })
        .collect()
}

proptest! {
    #[test]
    fn ranking_is_a_sorted_truncation_independent_of_input_order(
        keys in proptest::collection::vec((0u8..8, 0u8..5), 0..60),
        cutoff in 1usize..30,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let base = scored(&keys);
        let mut shuffled = base.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = rank_paths("x", base.clone(), cutoff).unwrap();
        let b = rank_paths("x", shuffled, cutoff).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.ranked.len(), keys.len().min(cutoff));
        for w in a.ranked.windows(2) {
            prop_assert!(w[0].probability >= w[1].probability);
        }
        let kept: BTreeSet<&str> = a.keys().collect();
        let min_kept = a.ranked.last().map(|r| r.probability);
        for s in &base {
            if !kept.contains(s.path_key.as_str()) {
                prop_assert!(s.score <= min_kept.unwrap());
            }
        }
    }

    #[test]
    fn recall_is_a_fraction(keys in proptest::collection::vec((0u8..8, 0u8..5), 1..40), gt_mask in any::<u64>(), cutoff in 1usize..30) {
        let base = scored(&keys);
        let gt: BTreeSet<String> = base.iter().enumerate().filter(|(i, _)| gt_mask >> (i % 64) & 1 == 1).map(|(_, s)| s.path_key.clone()).collect();
        prop_assume!(!gt.is_empty());
        let r = recall_at_k(&rank_paths("x", base, cutoff).unwrap(), &gt).unwrap();
        prop_assert!(r <= Rational::new(1, 1));
        if cutoff >= keys.len() {
            prop_assert_eq!(r, Rational::new(1, 1));
        }
    }
}

#[test]
fn identical_incidents_have_equal_fold_recall() {
    let data = benchmark_dataset(&BenchmarkConfig { incidents: 1, ..BenchmarkConfig::default() });
    let twin: Vec<LabeledPath> = data
        .iter()
        .map(|p| LabeledPath { incident_id: "twin".into(), ..p.clone() })
        .collect();
    let all: Vec<LabeledPath> = data.iter().cloned().chain(twin).collect();
    let m = SuspiciousMethodSet::default();
    let r = logo_evaluate(&all, &LogisticScorer::<f64>::new(TrainConfig::default(), m.clone()), &m, 20).unwrap();
    assert_eq!(r.folds.len(), 2);
    assert_eq!(r.folds[0].recall, r.folds[1].recall);
    let o = logo_evaluate(&all, &OracleScorer, &m, 20).unwrap();
    assert_eq!(o.mean_recall, 1.0);
}
