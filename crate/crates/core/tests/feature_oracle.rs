//! Path features against a naive re-enumeration computed from the generated
//! parent array, never from the library's tree or path code.

use std::collections::BTreeMap;

use num_traits::Zero;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracekit::features::{
    assemble_vector, PathCorpus, PathFeatures, ScalerBounds, ScalingMode, PathSample, SuspiciousMethodSet, Vocabulary,
};
use tracekit::synthetic::{random_forest, signature_db};
use tracekit::trace::flatten_forest;
use tracekit::tree::{build_forest, enumerate_paths};
use tracekit::{Rational, TxHash};

const ALPHABET: [&str; 6] = ["transfer", "swap", "balanceOf", "approve", "fallback", "0x12345678"];

struct Naive {
    leaf: usize,
    nodes: Vec<usize>,
    sig: Vec<String>,
}

fn naive_paths(parents: &[Option<usize>], methods: &[String]) -> Vec<Naive> {
    let n = parents.len();
    let has_child: Vec<bool> = (0..n).map(|i| parents.contains(&Some(i))).collect();
    (0..n)
        .filter(|&i| !has_child[i])
        .map(|leaf| {
            let mut chain = vec![leaf];
            while let Some(p) = parents[*chain.last().unwrap()] {
                chain.push(p);
            }
            chain.reverse();
            let sig = chain[1..].iter().map(|&i| methods[i].clone()).collect();
            Naive { leaf, nodes: chain, sig }
        })
        .collect()
}

fn check(seed: u64, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rf = random_forest(&mut rng, n, &ALPHABET);
    let m = SuspiciousMethodSet::default();
    let forest = build_forest(&flatten_forest(&rf.roots, &signature_db()));
    let paths = enumerate_paths(&forest);
    let corpus = PathCorpus::from_paths(&paths);
    let naive = naive_paths(&rf.parents, &rf.methods);
    assert_eq!(paths.len(), naive.len());
    let by_leaf: BTreeMap<usize, &Naive> = naive.iter().map(|p| (p.leaf, p)).collect();
    let docs = naive.len() as f64;

    for p in &paths {
        let o = by_leaf[&p.leaf()];
        assert_eq!(p.nodes, o.nodes);
        let pf = PathFeatures::<f64>::compute(&forest, p, &corpus, &m).unwrap();

        let fanout: usize = o
            .nodes
            .iter()
            .map(|&v| rf.parents.iter().filter(|q| **q == Some(v)).count())
            .sum();
        assert_eq!(pf.fanout, fanout);
        assert_eq!(pf.depth, o.nodes.len());
        let freq = naive.iter().filter(|q| q.sig == o.sig).count();
        assert_eq!(pf.frequency, freq);
        assert_eq!(pf.inv_frequency, Rational::new(1, freq as u64));
        let hits = o.sig.iter().filter(|t| ALPHABET_SUSPICIOUS.contains(&t.as_str()) || t.starts_with("0x")).count();
        let sem = if o.sig.is_empty() { Rational::zero() } else { Rational::new(hits as u64, o.sig.len() as u64) };
        assert_eq!(pf.semantic, sem);

        let mut want: BTreeMap<String, f64> = BTreeMap::new();
        for t in &o.sig {
            if want.contains_key(t) {
                continue;
            }
            let tf = o.sig.iter().filter(|x| *x == t).count() as f64 / o.sig.len() as f64;
            let df = naive.iter().filter(|q| q.sig.contains(t)).count() as f64;
            want.insert(t.clone(), tf * (docs / (1.0 + df)).ln());
        }
        assert_eq!(pf.tfidf.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>());
        for (k, v) in &want {
            assert!((pf.tfidf[k] - v).abs() <= 1e-9, "tfidf[{k}] {} vs {v}", pf.tfidf[k]);
        }
    }
}

/// Names from the alphabet that are in the default suspicious table.
const ALPHABET_SUSPICIOUS: [&str; 3] = ["transfer", "balanceOf", "fallback"];

#[test]
fn oracle_suite_500_forests() {
    for seed in 0..500u64 {
        let n = 1 + (seed as usize * 7) % 12;
        check(seed, n);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn oracle_matches_on_random_small_forests(seed in any::<u64>(), n in 1usize..=12) {
        check(seed, n);
    }

    /// A token has a TF-IDF entry exactly when it occurs in the path; its
    /// weight is zero only where the IDF vanishes (|C| = 1 + df).
    #[test]
    fn tfidf_support_is_the_path(seed in any::<u64>(), n in 1usize..=30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rf = random_forest(&mut rng, n, &ALPHABET);
        let forest = build_forest(&flatten_forest(&rf.roots, &signature_db()));
        let paths = enumerate_paths(&forest);
        let corpus = PathCorpus::from_paths(&paths);
        for p in &paths {
            let w = tracekit::features::tfidf::<f64>(p, &corpus);
            for t in ALPHABET {
                prop_assert_eq!(w.contains_key(t), p.sig.iter().any(|s| s == t));
            }
            for (t, v) in &w {
                let df = corpus.document_frequency(t);
                prop_assert_eq!(*v == 0.0, corpus.len() == 1 + df);
            }
        }
    }

    #[test]
    fn bounded_features(seed in any::<u64>(), n in 1usize..=40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rf = random_forest(&mut rng, n, &ALPHABET);
        let forest = build_forest(&flatten_forest(&rf.roots, &signature_db()));
        let paths = enumerate_paths(&forest);
        let corpus = PathCorpus::from_paths(&paths);
        let m = SuspiciousMethodSet::default();
        let tx = TxHash::from_label("t");
        let samples: Vec<PathSample> = paths.iter().map(|p| PathSample::from_path(&forest, p, &tx)).collect();
        let vocab = Vocabulary::build(paths.iter().map(|p| p.sig.as_slice()), 4);
        let bounds = ScalerBounds::from_samples(ScalingMode::PerIncident, &samples);
        for p in &paths {
            let pf = PathFeatures::<f64>::compute(&forest, p, &corpus, &m).unwrap();
            prop_assert!(pf.semantic <= Rational::new(1, 1));
            prop_assert!(pf.inv_frequency <= Rational::new(1, 1) && pf.inv_frequency > Rational::zero());
            prop_assert!(pf.depth >= 1 && pf.fanout + 1 >= pf.depth);
            let x = assemble_vector(&pf, &vocab, &bounds);
            prop_assert_eq!(x.len(), vocab.dimension());
            prop_assert!(x[..4].iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn vocabulary_order_and_cap() {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let sigs = [s(&["b", "a"]), s(&["a", "c"]), s(&["c", "a", "b"]), s(&["d"])];
    let v = Vocabulary::build(sigs.iter().map(Vec::as_slice), 3);
    assert_eq!(v.0, vec!["a", "b", "c"]);
    let v = Vocabulary::build(sigs.iter().map(Vec::as_slice), 10);
    assert_eq!(v.0, vec!["a", "b", "c", "d"]);
}
