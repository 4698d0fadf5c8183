//! Logistic path classifier, ranking, recall@k and leave-one-group-out evaluation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::{
    featurize_incident, semantic_of_sig, LabeledPath, PathSample, ScalerBounds, ScalingMode, SuspiciousMethodSet,
    Vocabulary, DEFAULT_VOCAB_CAP,
};
use crate::scalar::{ratio_to_scalar, Scalar};
use crate::Rational;

pub const DEFAULT_CUTOFF: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("training data contains only one class")]
    SingleClass,
    #[error("training data is empty")]
    Empty,
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("feature dimension {got} does not match model dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("{0} labels for {1} rows")]
    LabelCount(usize, usize),
    #[error("leave-one-group-out needs at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("recall is undefined for an empty ground-truth set")]
    EmptyGroundTruth,
    #[error("cutoff must be at least 1")]
    ZeroCutoff,
    #[error("model file: {0}")]
    Format(String),
    #[error("no external score for path {0}")]
    MissingScore(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Weight each example by the inverse frequency of its class.
    pub class_weighting: bool,
    pub vocab_cap: usize,
    pub scaling: ScalingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 1e-4,
            tolerance: 1e-8,
            max_iterations: 10_000,
            class_weighting: true,
            vocab_cap: DEFAULT_VOCAB_CAP,
            scaling: ScalingMode::PerIncident,
        }
    }
}

/// Affine score followed by the logistic function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> Logistic<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![T::zero(); dim],
            bias: T::zero(),
        }
    }

    pub fn score(&self, x: &[T]) -> Result<T, ModelError> {
        if x.len() != self.weights.len() {
            return Err(ModelError::Dimension {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    pub fn predict(&self, x: &[T]) -> Result<T, ModelError> {
        self.score(x).map(Scalar::sigmoid)
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&u, &v)| acc + u * v)
}

/// Per-example loss weights: `n / (2·n_class)` when enabled, else 1.
pub fn class_weights<T: Scalar>(labels: &[bool], enabled: bool) -> Vec<T> {
    if !enabled {
        return vec![T::one(); labels.len()];
    }
    let n = labels.len();
    let pos = labels.iter().filter(|&&y| y).count();
    let w = |count: usize| T::from_usize_lossy(n) / (T::from_usize_lossy(2) * T::from_usize_lossy(count.max(1)));
    let (wp, wn) = (w(pos), w(n - pos));
    labels.iter().map(|&y| if y { wp } else { wn }).collect()
}

/// Weighted mean logistic loss plus `(λ/2)‖w‖²` (bias unregularized), with its gradient.
pub fn loss_and_gradient<T: Scalar>(
    model: &Logistic<T>,
    rows: &[Vec<T>],
    labels: &[bool],
    weights: &[T],
    l2: T,
) -> (T, Logistic<T>) {
    let n = T::from_usize_lossy(rows.len().max(1));
    let mut loss = T::zero();
    let mut grad = Logistic::zeros(model.weights.len());
    for ((x, &y), &c) in rows.iter().zip(labels).zip(weights) {
        let z = dot(&model.weights, x) + model.bias;
        let yf = if y { T::one() } else { T::zero() };
        loss = loss + c * (z.softplus() - yf * z);
        let r = c * (z.sigmoid() - yf);
        for (g, &xi) in grad.weights.iter_mut().zip(x) {
            *g = *g + r * xi;
        }
        grad.bias = grad.bias + r;
    }
    let half = T::from_f64_lossy(0.5);
    loss = loss / n + half * l2 * dot(&model.weights, &model.weights);
    for (g, &w) in grad.weights.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
    }
    grad.bias = grad.bias / n;
    (loss, grad)
}

fn validate<T: Scalar>(rows: &[Vec<T>], labels: &[bool]) -> Result<usize, ModelError> {
    if rows.len() != labels.len() {
        return Err(ModelError::LabelCount(labels.len(), rows.len()));
    }
    let Some(first) = rows.first() else {
        return Err(ModelError::Empty);
    };
    let dim = first.len();
    for (r, x) in rows.iter().enumerate() {
        if x.len() != dim {
            return Err(ModelError::Dimension { expected: dim, got: x.len() });
        }
        if let Some(c) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { row: r, col: c });
        }
    }
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(ModelError::SingleClass);
    }
    Ok(dim)
}

/// Full-batch gradient descent from zero initialization.
pub fn fit_logistic<T: Scalar>(rows: &[Vec<T>], labels: &[bool], cfg: &TrainConfig) -> Result<Logistic<T>, ModelError> {
    let dim = validate(rows, labels)?;
    let cw = class_weights::<T>(labels, cfg.class_weighting);
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let l2 = T::from_f64_lossy(cfg.l2);
    let tol = T::from_f64_lossy(cfg.tolerance);
    let mut model = Logistic::zeros(dim);
    for _ in 0..cfg.max_iterations {
        let (_, g) = loss_and_gradient(&model, rows, labels, &cw, l2);
        let norm = (dot(&g.weights, &g.weights) + g.bias * g.bias).sqrt();
        if norm < tol {
            break;
        }
        for (w, &gw) in model.weights.iter_mut().zip(&g.weights) {
            *w = *w - lr * gw;
        }
        model.bias = model.bias - lr * g.bias;
    }
    Ok(model)
}

/// Trained classifier plus everything needed to featurize new incidents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub vocab: Vocabulary,
    pub scaler_bounds: ScalerBounds,
    pub config_digest: String,
}

/// Digest over the training configuration and the suspicious-method set.
pub fn config_digest(cfg: &TrainConfig, m: &SuspiciousMethodSet) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    for name in m.names() {
        h.update(b"\n");
        h.update(name.as_bytes());
    }
    hex::encode(h.finalize())
}

fn group_by_incident(paths: &[LabeledPath]) -> BTreeMap<&str, Vec<&LabeledPath>> {
    let mut groups: BTreeMap<&str, Vec<&LabeledPath>> = BTreeMap::new();
    for p in paths {
        groups.entry(p.incident_id.as_str()).or_default().push(p);
    }
    groups
}

impl<T: Scalar> AnomalyModel<T> {
    /// Builds the vocabulary and scaler bounds from `paths`, featurizes each
    /// incident against its own corpus and fits the classifier.
    pub fn train(paths: &[LabeledPath], m: &SuspiciousMethodSet, cfg: &TrainConfig) -> Result<Self, ModelError> {
        let vocab = Vocabulary::build(paths.iter().map(|p| p.sig.as_slice()), cfg.vocab_cap);
        let samples: Vec<PathSample> = paths.iter().map(LabeledPath::sample).collect();
        let bounds = ScalerBounds::from_samples(cfg.scaling, &samples);
        let mut rows = Vec::with_capacity(paths.len());
        let mut labels = Vec::with_capacity(paths.len());
        for group in group_by_incident(paths).values() {
            let samples: Vec<PathSample> = group.iter().map(|p| p.sample()).collect();
            let (x, _) = featurize_incident::<T>(&samples, m, &vocab, &bounds);
            rows.extend(x);
            labels.extend(group.iter().map(|p| p.is_attack()));
        }
        let fitted = fit_logistic(&rows, &labels, cfg)?;
        Ok(Self {
            weights: fitted.weights,
            bias: fitted.bias,
            vocab,
            scaler_bounds: bounds,
            config_digest: config_digest(cfg, m),
        })
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    fn logistic(&self) -> Logistic<T> {
        Logistic {
            weights: self.weights.clone(),
            bias: self.bias,
        }
    }

    pub fn predict(&self, x: &[T]) -> Result<T, ModelError> {
        self.logistic().predict(x)
    }

    /// Probabilities and exact semantic scores for every path of one incident.
    pub fn score_incident(
        &self,
        samples: &[PathSample],
        m: &SuspiciousMethodSet,
    ) -> Result<(Vec<T>, Vec<Rational>), ModelError> {
        let (rows, semantic) = featurize_incident::<T>(samples, m, &self.vocab, &self.scaler_bounds);
        let lg = self.logistic();
        let probs = rows.iter().map(|x| lg.predict(x)).collect::<Result<_, _>>()?;
        Ok((probs, semantic))
    }

    pub fn rank(
        &self,
        incident_id: &str,
        samples: &[PathSample],
        m: &SuspiciousMethodSet,
        cutoff: usize,
    ) -> Result<RankingResult, ModelError> {
        let (probs, semantic) = self.score_incident(samples, m)?;
        let scored = samples
            .iter()
            .zip(probs)
            .zip(semantic)
            .map(|((s, p), sem)| ScoredPath {
                path_key: s.path_key.clone(),
                score: p.to_f64_lossy(),
                semantic: sem,
            })
            .collect();
        rank_paths(incident_id, scored, cutoff)
    }

    /// Checks shape and finiteness after loading.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.weights.len() != self.vocab.dimension() {
            return Err(ModelError::Dimension {
                expected: self.vocab.dimension(),
                got: self.weights.len(),
            });
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::Format("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let m: Self = serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPath {
    pub path_key: String,
    pub score: f64,
    pub semantic: Rational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPath {
    pub path_key: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub incident_id: String,
    /// The top `cutoff` paths, best first.
    pub ranked: Vec<RankedPath>,
    pub cutoff: usize,
}

impl RankingResult {
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|r| r.path_key.as_str())
    }
}

/// Descending score; ties by higher semantic score, then lower path key.
pub fn rank_order(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.semantic.cmp(&a.semantic))
        .then_with(|| a.path_key.cmp(&b.path_key))
}

pub fn rank_paths(incident_id: &str, mut scored: Vec<ScoredPath>, cutoff: usize) -> Result<RankingResult, ModelError> {
    if cutoff == 0 {
        return Err(ModelError::ZeroCutoff);
    }
    scored.sort_by(rank_order);
    scored.truncate(cutoff);
    Ok(RankingResult {
        incident_id: incident_id.to_string(),
        ranked: scored
            .into_iter()
            .map(|s| RankedPath {
                path_key: s.path_key,
                probability: s.score,
            })
            .collect(),
        cutoff,
    })
}

/// `|top-k ∩ gt| / |gt|` over the ranking's retained entries.
pub fn recall_at_k(ranking: &RankingResult, ground_truth: &BTreeSet<String>) -> Result<Rational, ModelError> {
    if ground_truth.is_empty() {
        return Err(ModelError::EmptyGroundTruth);
    }
    let hits = ranking
        .keys()
        .take(ranking.cutoff)
        .filter(|k| ground_truth.contains(*k))
        .count();
    Ok(Rational::new(hits as u64, ground_truth.len() as u64))
}

/// Univariate baseline: the path's semantic density.
pub fn baseline_semantic_score(sig: &[String], m: &SuspiciousMethodSet) -> Rational {
    semantic_of_sig(sig, m)
}

/// Produces one score per held-out path, higher meaning more anomalous.
pub trait PathScorer: Sync {
    fn name(&self) -> &str;
    fn score_fold(&self, train: &[LabeledPath], held_out: &[LabeledPath]) -> Result<Vec<f64>, ModelError>;
}

/// The full-feature logistic model, retrained for every fold.
pub struct LogisticScorer<T> {
    pub config: TrainConfig,
    pub methods: SuspiciousMethodSet,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Scalar> LogisticScorer<T> {
    pub fn new(config: TrainConfig, methods: SuspiciousMethodSet) -> Self {
        Self {
            config,
            methods,
            _scalar: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> PathScorer for LogisticScorer<T> {
    fn name(&self) -> &str {
        "logistic"
    }

    fn score_fold(&self, train: &[LabeledPath], held_out: &[LabeledPath]) -> Result<Vec<f64>, ModelError> {
        let model = AnomalyModel::<T>::train(train, &self.methods, &self.config)?;
        let samples: Vec<PathSample> = held_out.iter().map(LabeledPath::sample).collect();
        let (probs, _) = model.score_incident(&samples, &self.methods)?;
        Ok(probs.into_iter().map(Scalar::to_f64_lossy).collect())
    }
}

pub struct SemanticScorer(pub SuspiciousMethodSet);

impl PathScorer for SemanticScorer {
    fn name(&self) -> &str {
        "semantic"
    }

    fn score_fold(&self, _train: &[LabeledPath], held_out: &[LabeledPath]) -> Result<Vec<f64>, ModelError> {
        Ok(held_out
            .iter()
            .map(|p| ratio_to_scalar::<f64>(&baseline_semantic_score(&p.sig, &self.0)))
            .collect())
    }
}

/// Scores attack paths 1 and everything else 0.
pub struct OracleScorer;

impl PathScorer for OracleScorer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn score_fold(&self, _train: &[LabeledPath], held_out: &[LabeledPath]) -> Result<Vec<f64>, ModelError> {
        Ok(held_out.iter().map(|p| if p.is_attack() { 1.0 } else { 0.0 }).collect())
    }
}

/// Precomputed scores keyed by path key, e.g. from a third-party baseline.
pub struct ExternalScores {
    pub name: String,
    pub scores: BTreeMap<String, f64>,
}

impl ExternalScores {
    /// JSON-lines of `{"path_key": "...", "score": x}`.
    pub fn parse(name: &str, text: &str) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Line {
            path_key: String,
            score: f64,
        }
        let mut scores = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(line).map_err(|e| ModelError::Format(format!("line {}: {e}", i + 1)))?;
            scores.insert(l.path_key, l.score);
        }
        Ok(Self {
            name: name.to_string(),
            scores,
        })
    }
}

impl PathScorer for ExternalScores {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_fold(&self, _train: &[LabeledPath], held_out: &[LabeledPath]) -> Result<Vec<f64>, ModelError> {
        held_out
            .iter()
            .map(|p| {
                self.scores
                    .get(&p.path_key)
                    .copied()
                    .ok_or_else(|| ModelError::MissingScore(p.path_key.clone()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub incident_id: String,
    pub attack_paths: usize,
    pub hits: usize,
    pub recall: Rational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogoReport {
    pub scorer: String,
    pub cutoff: usize,
    pub folds: Vec<FoldResult>,
    /// Incidents without attack paths.
    pub skipped: Vec<String>,
    pub mean_recall: f64,
}

/// Holds out each incident in turn, scores it with a model fitted on the rest
/// and measures recall@`cutoff` against its attack paths.
/// `methods` supplies the semantic tie-break.
pub fn logo_evaluate(
    paths: &[LabeledPath],
    scorer: &dyn PathScorer,
    methods: &SuspiciousMethodSet,
    cutoff: usize,
) -> Result<LogoReport, ModelError> {
    if cutoff == 0 {
        return Err(ModelError::ZeroCutoff);
    }
    let groups = group_by_incident(paths);
    if groups.len() < 2 {
        return Err(ModelError::TooFewGroups(groups.len()));
    }
    let ids: Vec<&str> = groups.keys().copied().collect();
    let outcomes: Vec<Result<Option<FoldResult>, ModelError>> = ids
        .par_iter()
        .map(|&id| {
            let held_out: Vec<LabeledPath> = groups[id].iter().map(|p| (*p).clone()).collect();
            let gt: BTreeSet<String> = held_out
                .iter()
                .filter(|p| p.is_attack())
                .map(|p| p.path_key.clone())
                .collect();
            if gt.is_empty() {
                log::warn!("incident {id} has no attack paths; fold skipped");
                return Ok(None);
            }
            let train: Vec<LabeledPath> = paths.iter().filter(|p| p.incident_id != id).cloned().collect();
            let scores = scorer.score_fold(&train, &held_out)?;
            let scored = held_out
                .iter()
                .zip(scores)
                .map(|(p, score)| ScoredPath {
                    path_key: p.path_key.clone(),
                    score,
                    semantic: semantic_of_sig(&p.sig, methods),
                })
                .collect();
            let ranking = rank_paths(id, scored, cutoff)?;
            let recall = recall_at_k(&ranking, &gt)?;
            Ok(Some(FoldResult {
                incident_id: id.to_string(),
                attack_paths: gt.len(),
                hits: ranking.keys().filter(|k| gt.contains(*k)).count(),
                recall,
            }))
        })
        .collect();
    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for (id, r) in ids.iter().zip(outcomes) {
        match r? {
            Some(f) => folds.push(f),
            None => skipped.push(id.to_string()),
        }
    }
    let mean_recall = if folds.is_empty() {
        0.0
    } else {
        folds.iter().map(|f| ratio_to_scalar::<f64>(&f.recall)).sum::<f64>() / folds.len() as f64
    };
    Ok(LogoReport {
        scorer: scorer.name().to_string(),
        cutoff,
        folds,
        skipped,
        mean_recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_predicts_half() {
        let m = Logistic::<f64>::zeros(3);
        assert_eq!(m.predict(&[1.0, -2.0, 7.0]).unwrap(), 0.5);
        assert!(matches!(m.predict(&[1.0]), Err(ModelError::Dimension { .. })));
    }

    #[test]
    fn hand_set_probability() {
        let m = Logistic {
            weights: vec![0.5, -1.25],
            bias: 0.1,
        };
        let z: f64 = 0.5 * 2.0 - 1.25 * 0.4 + 0.1;
        let want = 1.0 / (1.0 + (-z).exp());
        assert!((m.predict(&[2.0, 0.4]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn stable_at_extreme_scores() {
        let m = Logistic { weights: vec![1.0f64], bias: 0.0 };
        assert_eq!(m.predict(&[1000.0]).unwrap(), 1.0);
        assert_eq!(m.predict(&[-1000.0]).unwrap(), 0.0);
        let lo = m.predict(&[-30.0]).unwrap();
        assert!(lo > 0.0 && lo < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        let rows = vec![vec![1.0f64], vec![2.0]];
        assert!(matches!(
            fit_logistic(&rows, &[true, true], &TrainConfig::default()),
            Err(ModelError::SingleClass)
        ));
        let rows = vec![vec![f64::NAN], vec![2.0]];
        assert!(matches!(
            fit_logistic(&rows, &[true, false], &TrainConfig::default()),
            Err(ModelError::NonFinite { row: 0, col: 0 })
        ));
    }

    #[test]
    fn ranking_tie_breaks() {
        let sp = |k: &str, s: f64, sem: u64| ScoredPath {
            path_key: k.into(),
            score: s,
            semantic: Rational::new(sem, 4),
        };
        let r = rank_paths("i", vec![sp("b", 0.5, 1), sp("a", 0.5, 1), sp("c", 0.5, 3), sp("d", 0.9, 0)], 20).unwrap();
        let keys: Vec<_> = r.keys().collect();
        assert_eq!(keys, vec!["d", "c", "a", "b"]);
        let r = rank_paths("i", vec![sp("x", 0.1, 0)], 20).unwrap();
        assert_eq!(r.ranked.len(), 1);
        let r = rank_paths("i", vec![sp("x", 0.1, 0), sp("y", 0.2, 0)], 1).unwrap();
        assert_eq!(r.ranked.len(), 1);
        assert!(rank_paths("i", vec![], 0).is_err());
    }

    #[test]
    fn recall_values() {
        let ranking = RankingResult {
            incident_id: "i".into(),
            ranked: ["a", "b", "c"]
                .iter()
                .map(|k| RankedPath {
                    path_key: k.to_string(),
                    probability: 0.5,
                })
                .collect(),
            cutoff: 20,
        };
        let gt = |ks: &[&str]| ks.iter().map(|k| k.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(recall_at_k(&ranking, &gt(&["a", "b", "c"])).unwrap(), Rational::new(1, 1));
        assert_eq!(recall_at_k(&ranking, &gt(&["a", "b", "z"])).unwrap(), Rational::new(2, 3));
        assert_eq!(recall_at_k(&ranking, &gt(&["y", "z"])).unwrap(), Rational::new(0, 1));
        assert!(recall_at_k(&ranking, &BTreeSet::new()).is_err());
    }

    #[test]
    fn class_weights_balance() {
        let w = class_weights::<f64>(&[true, false, false, false], true);
        assert_eq!(w, vec![2.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(class_weights::<f64>(&[true, false], false), vec![1.0, 1.0]);
    }
}
