//! Path descriptors (fanout, depth, frequency, semantic density, TF-IDF) and
//! the classifier feature layout.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::primitives::TxHash;
use crate::scalar::{ratio_to_scalar, Scalar};
use crate::trace::bare_name;
use crate::tree::{CallForest, ExecPath};
use crate::Rational;

/// Number of scalar features ahead of the TF-IDF block.
pub const SCALAR_FEATURES: usize = 4;
pub const DEFAULT_VOCAB_CAP: usize = 512;

pub const DEFAULT_SUSPICIOUS: [&str; 20] = [
    "selfdestruct",
    "fallback",
    "receive",
    "initialize",
    "transfer",
    "transferFrom",
    "onlyOwner",
    "hasRole",
    "ecrecover",
    "assert",
    "require",
    "call",
    "any",
    "tokensReceived",
    "tokensToSend",
    "balanceOf",
    "sweepToken",
    "drain",
    "isOperationReady",
    "beforeCall",
];

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("path signature is not part of the corpus")]
    NotInCorpus,
    #[error("suspicious-method set is empty")]
    EmptySuspiciousSet,
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Normalized high-risk method names. `any` additionally matches every
/// unresolved `0x…` selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuspiciousMethodSet(BTreeSet<String>);

impl Default for SuspiciousMethodSet {
    fn default() -> Self {
        Self(DEFAULT_SUSPICIOUS.iter().map(|s| s.to_string()).collect())
    }
}

impl SuspiciousMethodSet {
    pub fn new<I, S>(names: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = names
            .into_iter()
            .map(|n| bare_name(n.as_ref()).to_string())
            .filter(|n| !n.is_empty())
            .collect();
        if set.is_empty() {
            return Err(FeatureError::EmptySuspiciousSet);
        }
        Ok(Self(set))
    }

    /// One name per line; blank lines and `#` comments are ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn contains(&self, method: &str) -> bool {
        let name = bare_name(method);
        self.0.contains(name) || (name.starts_with("0x") && self.0.contains("any"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

/// Signature sequences of all root-to-leaf paths of one incident.
#[derive(Debug, Clone, Default)]
pub struct PathCorpus {
    docs: usize,
    df: HashMap<String, usize>,
    sig_count: HashMap<Vec<String>, usize>,
}

impl PathCorpus {
    pub fn new<'a, I>(sigs: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut corpus = Self::default();
        for sig in sigs {
            corpus.docs += 1;
            *corpus.sig_count.entry(sig.to_vec()).or_default() += 1;
            let distinct: BTreeSet<&String> = sig.iter().collect();
            for t in distinct {
                *corpus.df.entry(t.clone()).or_default() += 1;
            }
        }
        corpus
    }

    pub fn from_paths(paths: &[ExecPath]) -> Self {
        Self::new(paths.iter().map(|p| p.sig.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.docs
    }

    pub fn is_empty(&self) -> bool {
        self.docs == 0
    }

    pub fn document_frequency(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }

    pub fn sig_frequency(&self, sig: &[String]) -> Result<usize, FeatureError> {
        match self.sig_count.get(sig) {
            Some(&n) if n > 0 => Ok(n),
            _ => Err(FeatureError::NotInCorpus),
        }
    }
}

/// Sum of out-degrees over the path's nodes.
pub fn fanout(forest: &CallForest, path: &ExecPath) -> usize {
    path.nodes.iter().map(|&n| forest.out_degree(n)).sum()
}

/// Node count, ℓ + 1.
pub fn depth(path: &ExecPath) -> usize {
    path.nodes.len()
}

/// Number of corpus paths with the same signature sequence.
pub fn frequency(path: &ExecPath, corpus: &PathCorpus) -> Result<usize, FeatureError> {
    corpus.sig_frequency(&path.sig)
}

/// Share of edges whose method is suspicious; 0 for single-node paths.
pub fn semantic_anomaly(path: &ExecPath, m: &SuspiciousMethodSet) -> Rational {
    semantic_of_sig(&path.sig, m)
}

pub fn semantic_of_sig(sig: &[String], m: &SuspiciousMethodSet) -> Rational {
    if sig.is_empty() {
        return Rational::zero();
    }
    let hits = sig.iter().filter(|t| m.contains(t)).count();
    Rational::new(hits as u64, sig.len() as u64)
}

/// TF·IDF per distinct token of the path, with TF = count/ℓ and
/// IDF = ln(|C| / (1 + df)). IDF is negative for tokens present in every document.
pub fn tfidf<T: Scalar>(path: &ExecPath, corpus: &PathCorpus) -> BTreeMap<String, T> {
    tfidf_of_sig(&path.sig, corpus)
}

pub fn tfidf_of_sig<T: Scalar>(sig: &[String], corpus: &PathCorpus) -> BTreeMap<String, T> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in sig {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let len = T::from_usize_lossy(sig.len());
    let docs = T::from_usize_lossy(corpus.len());
    counts
        .into_iter()
        .map(|(t, c)| {
            let tf = T::from_usize_lossy(c) / len;
            let idf = (docs / T::from_usize_lossy(1 + corpus.document_frequency(t))).ln();
            (t.to_string(), tf * idf)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFeatures<T> {
    pub fanout: usize,
    pub depth: usize,
    pub frequency: usize,
    pub inv_frequency: Rational,
    pub semantic: Rational,
    pub tfidf: BTreeMap<String, T>,
}

impl<T: Scalar> PathFeatures<T> {
    pub fn compute(
        forest: &CallForest,
        path: &ExecPath,
        corpus: &PathCorpus,
        m: &SuspiciousMethodSet,
    ) -> Result<Self, FeatureError> {
        Self::from_sig(&path.sig, fanout(forest, path), corpus, m)
    }

    /// Same as [`Self::compute`] for a path known only by its signature and fanout.
    pub fn from_sig(
        sig: &[String],
        fanout: usize,
        corpus: &PathCorpus,
        m: &SuspiciousMethodSet,
    ) -> Result<Self, FeatureError> {
        let frequency = corpus.sig_frequency(sig)?;
        Ok(Self {
            fanout,
            depth: sig.len() + 1,
            frequency,
            inv_frequency: Rational::new(1, frequency as u64),
            semantic: semantic_of_sig(sig, m),
            tfidf: tfidf_of_sig(sig, corpus),
        })
    }
}

/// Method tokens projected into the TF-IDF block, in vector order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary(pub Vec<String>);

impl Vocabulary {
    /// Tokens by descending document frequency, ties lexicographic, truncated to `cap`.
    pub fn build<'a, I>(sigs: I, cap: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut df: HashMap<&'a str, usize> = HashMap::new();
        for sig in sigs {
            let distinct: BTreeSet<&str> = sig.iter().map(String::as_str).collect();
            for t in distinct {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut tokens: Vec<(&str, usize)> = df.into_iter().collect();
        tokens.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        tokens.truncate(cap);
        Self(tokens.into_iter().map(|(t, _)| t.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dimension(&self) -> usize {
        SCALAR_FEATURES + self.0.len()
    }
}

/// Closed interval used for min–max scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub fn of(values: impl IntoIterator<Item = usize>) -> Self {
        let mut it = values.into_iter();
        let Some(first) = it.next() else {
            return Self { min: 0.0, max: 0.0 };
        };
        let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Self {
            min: lo as f64,
            max: hi as f64,
        }
    }

    /// Maps into [0, 1] over the interval; a degenerate interval maps to 0.
    pub fn scale<T: Scalar>(&self, v: usize) -> T {
        let span = self.max - self.min;
        if span <= 0.0 {
            return T::zero();
        }
        T::from_f64_lossy((v as f64 - self.min) / span)
    }
}

/// How fanout and depth are scaled before entering the feature vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// Bounds from each incident's own corpus.
    #[default]
    PerIncident,
    /// Bounds fixed from the training data.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerBounds {
    pub mode: ScalingMode,
    pub fanout: Bounds,
    pub depth: Bounds,
}

impl ScalerBounds {
    pub fn from_samples<'a>(mode: ScalingMode, samples: impl IntoIterator<Item = &'a PathSample> + Clone) -> Self {
        Self {
            mode,
            fanout: Bounds::of(samples.clone().into_iter().map(|s| s.fanout)),
            depth: Bounds::of(samples.into_iter().map(|s| s.sig.len() + 1)),
        }
    }
}

/// `[fanout_scaled, depth_scaled, inv_frequency, semantic, tfidf over vocab…]`.
/// Tokens outside the vocabulary are dropped.
pub fn assemble_vector<T: Scalar>(pf: &PathFeatures<T>, vocab: &Vocabulary, bounds: &ScalerBounds) -> Vec<T> {
    let mut x = Vec::with_capacity(vocab.dimension());
    x.push(bounds.fanout.scale(pf.fanout));
    x.push(bounds.depth.scale(pf.depth));
    x.push(ratio_to_scalar(&pf.inv_frequency));
    x.push(ratio_to_scalar(&pf.semantic));
    x.extend(vocab.0.iter().map(|t| pf.tfidf.get(t).copied().unwrap_or_else(T::zero)));
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Attack,
    Benign,
}

/// What the classifier needs to know about a path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSample {
    pub path_key: String,
    pub sig: Vec<String>,
    pub fanout: usize,
}

impl PathSample {
    pub fn from_path(forest: &CallForest, path: &ExecPath, tx: &TxHash) -> Self {
        Self {
            path_key: crate::tree::path_key(tx, forest.node(path.leaf()).record.index),
            sig: path.sig.clone(),
            fanout: fanout(forest, path),
        }
    }
}

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledPath {
    pub incident_id: String,
    pub tx_hash: TxHash,
    pub path_key: String,
    pub sig: Vec<String>,
    /// Not recoverable from `sig`; carried so structural features survive serialization.
    pub fanout: usize,
    pub label: Label,
}

impl LabeledPath {
    pub fn sample(&self) -> PathSample {
        PathSample {
            path_key: self.path_key.clone(),
            sig: self.sig.clone(),
            fanout: self.fanout,
        }
    }

    pub fn is_attack(&self) -> bool {
        self.label == Label::Attack
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("dataset line {line}: {message}")]
pub struct DatasetError {
    /// 1-based.
    pub line: usize,
    pub message: String,
}

/// JSON-lines dataset, one `LabeledPath` per line. Blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<LabeledPath>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn dataset_to_jsonl(paths: &[LabeledPath]) -> String {
    paths
        .iter()
        .map(|p| serde_json::to_string(p).expect("labeled path serializes") + "\n")
        .collect()
}

/// Feature rows for all paths of one incident, in input order, plus their
/// exact semantic scores (used for ranking tie-breaks).
pub fn featurize_incident<T: Scalar>(
    samples: &[PathSample],
    m: &SuspiciousMethodSet,
    vocab: &Vocabulary,
    training_bounds: &ScalerBounds,
) -> (Vec<Vec<T>>, Vec<Rational>) {
    let corpus = PathCorpus::new(samples.iter().map(|s| s.sig.as_slice()));
    let bounds = match training_bounds.mode {
        ScalingMode::PerIncident => ScalerBounds::from_samples(ScalingMode::PerIncident, samples),
        ScalingMode::Global => *training_bounds,
    };
    samples
        .iter()
        .map(|s| {
            let pf = PathFeatures::<T>::from_sig(&s.sig, s.fanout, &corpus, m)
                .expect("every sample belongs to its own corpus");
            (assemble_vector(&pf, vocab, &bounds), pf.semantic)
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_forest, enumerate_paths};

    fn s(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn dataset_errors_name_the_line() {
        let ok = r#"{"incident_id":"a","tx_hash":"0x0000000000000000000000000000000000000000000000000000000000000001","path_key":"k","sig":["x"],"fanout":1,"label":"attack"}"#;
        assert_eq!(parse_dataset(&format!("{ok}\n\n{ok}\n")).unwrap().len(), 2);
        let e = parse_dataset(&format!("{ok}\n{{oops\n")).unwrap_err();
        assert_eq!(e.line, 2);
        let again = parse_dataset(&dataset_to_jsonl(&parse_dataset(ok).unwrap())).unwrap();
        assert_eq!(again[0].label, Label::Attack);
    }

    #[test]
    fn default_set_is_the_table() {
        let m = SuspiciousMethodSet::default();
        assert_eq!(m.names().count(), 20);
        assert!(m.contains("transfer"));
        assert!(m.contains("transfer(address,uint256)"));
        assert!(m.contains("0xdeadbeef"));
        assert!(!m.contains("approve"));
        assert!(SuspiciousMethodSet::new(Vec::<String>::new()).is_err());
        let only = SuspiciousMethodSet::new(["drain"]).unwrap();
        assert!(!only.contains("0xdeadbeef"));
    }

    #[test]
    fn semantic_examples() {
        let m = SuspiciousMethodSet::default();
        assert_eq!(
            semantic_of_sig(&s(&["approve", "transfer", "swapExactTokens"]), &m),
            Rational::new(1, 3)
        );
        assert_eq!(semantic_of_sig(&s(&["approve", "swap"]), &m), Rational::zero());
        assert_eq!(semantic_of_sig(&s(&["transfer", "transfer"]), &m), Rational::new(1, 1));
        assert_eq!(semantic_of_sig(&[], &m), Rational::zero());
    }

    #[test]
    fn tfidf_examples() {
        let docs = [s(&["a", "a", "b"]), s(&["c"]), s(&["d"])];
        let corpus = PathCorpus::new(docs.iter().map(Vec::as_slice));
        let w: BTreeMap<String, f64> = tfidf_of_sig(&docs[0], &corpus);
        assert!((w["a"] - (2.0 / 3.0) * 1.5f64.ln()).abs() < 1e-12);

        let everywhere = [s(&["x"]), s(&["x"]), s(&["x", "y"])];
        let corpus = PathCorpus::new(everywhere.iter().map(Vec::as_slice));
        let w: BTreeMap<String, f64> = tfidf_of_sig(&everywhere[0], &corpus);
        assert!((w["x"] - (3.0f64 / 4.0).ln()).abs() < 1e-12);
        assert!(w["x"] < 0.0);

        let single = [s(&["t"])];
        let corpus = PathCorpus::new(single.iter().map(Vec::as_slice));
        let w: BTreeMap<String, f64> = tfidf_of_sig(&single[0], &corpus);
        assert!((w["t"] - 0.5f64.ln()).abs() < 1e-12);

        assert!(tfidf_of_sig::<f64>(&[], &corpus).is_empty());
    }

    #[test]
    fn frequency_counts_identical_sigs() {
        let docs = [s(&["transfer", "withdraw"]), s(&["x"]), s(&["transfer", "withdraw"]), s(&["transfer", "withdraw"])];
        let corpus = PathCorpus::new(docs.iter().map(Vec::as_slice));
        assert_eq!(corpus.sig_frequency(&docs[0]).unwrap(), 3);
        assert_eq!(corpus.sig_frequency(&docs[1]).unwrap(), 1);
        assert!(matches!(corpus.sig_frequency(&s(&["nope"])), Err(FeatureError::NotInCorpus)));
    }

    #[test]
    fn fanout_on_branching_path() {
        use crate::tree::tests::rec;
        // r has children c1, c2; c1 has child g
        let t = [rec(0, "E", "R", "r"), rec(1, "R", "C1", "c1"), rec(2, "C1", "G", "g"), rec(3, "R", "C2", "c2")];
        let f = build_forest(&t);
        let paths = enumerate_paths(&f);
        assert_eq!(fanout(&f, &paths[0]), 3);
        assert_eq!(depth(&paths[0]), 3);
        assert_eq!(fanout(&f, &paths[1]), 2);
    }

    #[test]
    fn vocabulary_order_and_cap() {
        let docs = [s(&["b", "a"]), s(&["a"]), s(&["c", "b"]), s(&["d"])];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 512);
        assert_eq!(v.0, s(&["a", "b", "c", "d"]));
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 2);
        assert_eq!(v.0, s(&["a", "b"]));
        assert_eq!(v.dimension(), 6);
    }

    #[test]
    fn vector_layout() {
        let pf = PathFeatures::<f64> {
            fanout: 0,
            depth: 1,
            frequency: 1,
            inv_frequency: Rational::new(1, 1),
            semantic: Rational::zero(),
            tfidf: BTreeMap::new(),
        };
        let b = ScalerBounds {
            mode: ScalingMode::Global,
            fanout: Bounds { min: 0.0, max: 4.0 },
            depth: Bounds { min: 1.0, max: 5.0 },
        };
        assert_eq!(assemble_vector(&pf, &Vocabulary::default(), &b), vec![0.0, 0.0, 1.0, 0.0]);
        let mut pf2 = pf.clone();
        pf2.fanout = 2;
        pf2.depth = 5;
        pf2.semantic = Rational::new(1, 2);
        pf2.tfidf.insert("t".into(), 0.25);
        pf2.tfidf.insert("oov".into(), 9.0);
        let v = Vocabulary(s(&["u", "t"]));
        assert_eq!(assemble_vector(&pf2, &v, &b), vec![0.5, 1.0, 1.0, 0.5, 0.0, 0.25]);
        let constant = Bounds { min: 3.0, max: 3.0 };
        assert_eq!(constant.scale::<f64>(3), 0.0);
    }

    #[test]
    fn labeled_path_json() {
        let lp = LabeledPath {
            incident_id: "inc".into(),
            tx_hash: TxHash::from_label("t"),
            path_key: "k".into(),
            sig: s(&["a"]),
            fanout: 1,
            label: Label::Attack,
        };
        let line = serde_json::to_string(&lp).unwrap();
        assert!(line.contains("\"label\":\"attack\""));
        assert_eq!(serde_json::from_str::<LabeledPath>(&line).unwrap(), lp);
    }
}
