//! Scope → trace → tree → rank → subgraph → code orchestration producing the
//! incident context bundle.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chain::{BalanceDiff, BlockRange, ChainAccess, ChainError, Transport};
use crate::detect::{build_scope, resolve_creator, CreatorInfo, ProxyResolution};
use crate::extract::{CodeArtifact, Extractor};
use crate::features::{semantic_of_sig, PathSample, SuspiciousMethodSet};
use crate::model::{rank_paths, AnomalyModel, ModelError, RankingResult, ScoredPath, DEFAULT_CUTOFF};
use crate::primitives::{Address, TxHash};
use crate::scalar::{ratio_to_scalar, Scalar};
use crate::subgraph::{extract_subgraph, EnclosingSubgraph, DEFAULT_K};
use crate::trace::{flatten, SignatureDb};
use crate::tree::{build_forest, enumerate_paths, CallForest, ExecPath};
use crate::Rational;

pub const SCHEMA_VERSION: u32 = 1;

/// The structured analysis request: contracts plus a block window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisScope {
    pub contracts: Vec<Address>,
    pub block_range: BlockRange,
    pub label: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ScopeDoc {
    contracts: Vec<Address>,
    block_range: [u64; 2],
    #[serde(default)]
    label: Option<String>,
}

impl Serialize for AnalysisScope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ScopeDoc {
            contracts: self.contracts.clone(),
            block_range: [self.block_range.start_block, self.block_range.end_block],
            label: self.label.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AnalysisScope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        scope_from_value(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid scope field `{field}`: {message}")]
pub struct ScopeError {
    pub field: String,
    pub message: String,
}

fn scope_err(field: impl Into<String>, message: impl Into<String>) -> ScopeError {
    ScopeError {
        field: field.into(),
        message: message.into(),
    }
}

/// Strict parse of `{"contracts": [...], "block_range": [start, end], "label": ...}`.
pub fn parse_scope(document: &str) -> Result<AnalysisScope, ScopeError> {
    let v: Value = serde_json::from_str(document).map_err(|e| scope_err("<document>", e.to_string()))?;
    scope_from_value(&v)
}

fn scope_from_value(v: &Value) -> Result<AnalysisScope, ScopeError> {
    let obj = v.as_object().ok_or_else(|| scope_err("<document>", "expected a JSON object"))?;
    if let Some(k) = obj.keys().find(|k| !matches!(k.as_str(), "contracts" | "block_range" | "label")) {
        return Err(scope_err(k.clone(), "unknown field"));
    }
    let list = obj
        .get("contracts")
        .ok_or_else(|| scope_err("contracts", "missing"))?
        .as_array()
        .ok_or_else(|| scope_err("contracts", "expected an array of addresses"))?;
    if list.is_empty() {
        return Err(scope_err("contracts", "must not be empty"));
    }
    let contracts = list
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let field = format!("contracts[{i}]");
            let s = a.as_str().ok_or_else(|| scope_err(&field, "expected a string"))?;
            s.parse::<Address>().map_err(|e| scope_err(&field, e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let range = obj
        .get("block_range")
        .ok_or_else(|| scope_err("block_range", "missing"))?
        .as_array()
        .ok_or_else(|| scope_err("block_range", "expected [start, end]"))?;
    let bounds = match range.as_slice() {
        [a, b] => match (a.as_u64(), b.as_u64()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(scope_err("block_range", "bounds must be non-negative integers")),
        },
        _ => return Err(scope_err("block_range", "expected exactly two block numbers")),
    };
    let block_range = BlockRange::new(bounds.0, bounds.1).map_err(|e| scope_err("block_range", e.to_string()))?;
    let label = match obj.get("label") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(scope_err("label", "expected a string")),
    };
    Ok(AnalysisScope {
        contracts,
        block_range,
        label,
    })
}

impl AnalysisScope {
    pub fn seeds(&self) -> BTreeSet<Address> {
        self.contracts.iter().copied().collect()
    }

    /// Label, or a name derived from the first contract and range.
    pub fn incident_id(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            format!(
                "{}@{}-{}",
                self.contracts[0], self.block_range.start_block, self.block_range.end_block
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedPath {
    pub path_key: String,
    pub tx_hash: TxHash,
    pub sig: Vec<String>,
    pub probability: f64,
    pub semantic: Rational,
    pub subgraph: EnclosingSubgraph,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxBalanceDiffs {
    pub tx_hash: TxHash,
    pub diffs: Vec<BalanceDiff>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentContext {
    pub schema_version: u32,
    pub scope: AnalysisScope,
    pub addresses: BTreeSet<Address>,
    pub proxies: Vec<ProxyResolution>,
    pub creation_relations: Vec<CreatorInfo>,
    pub code: Vec<CodeArtifact>,
    /// Best first.
    pub flagged: Vec<FlaggedPath>,
    pub balance_diffs: Vec<TxBalanceDiffs>,
    pub diagnostics: Vec<String>,
}

impl IncidentContext {
    pub fn subgraph_addresses(&self) -> BTreeSet<Address> {
        self.flagged
            .iter()
            .flat_map(|f| f.subgraph.nodes.iter().flat_map(|r| [r.from, r.to]))
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{stage} stage: {source}")]
    Chain {
        stage: &'static str,
        #[source]
        source: ChainError,
    },
    #[error("rank stage: {0}")]
    Model(#[from] ModelError),
}

impl PipelineError {
    pub fn is_transport(&self) -> bool {
        matches!(self, PipelineError::Chain { source, .. } if source.is_transport())
    }
}

fn stage(stage: &'static str) -> impl FnOnce(ChainError) -> PipelineError {
    move |source| PipelineError::Chain { stage, source }
}

pub struct PipelineOptions<T> {
    pub k: usize,
    pub cutoff: usize,
    pub methods: SuspiciousMethodSet,
    pub signatures: SignatureDb,
    /// Without a model, paths are ranked by semantic density.
    pub model: Option<AnomalyModel<T>>,
}

impl<T> Default for PipelineOptions<T> {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            cutoff: DEFAULT_CUTOFF,
            methods: SuspiciousMethodSet::default(),
            signatures: SignatureDb::default(),
            model: None,
        }
    }
}

/// Reconstructed forest and paths of one transaction.
pub struct TxForest {
    pub tx_hash: TxHash,
    pub forest: CallForest,
    pub paths: Vec<ExecPath>,
}

/// Fetches and reconstructs every transaction; failures become diagnostics.
pub fn reconstruct<T: Transport>(
    chain: &ChainAccess<T>,
    txs: &[TxHash],
    db: &SignatureDb,
) -> Result<(Vec<TxForest>, Vec<String>), ChainError> {
    let results: Vec<Result<TxForest, ChainError>> = txs
        .par_iter()
        .map(|h| {
            let root = chain.fetch_trace(h)?;
            let forest = build_forest(&flatten(&root, db));
            let paths = enumerate_paths(&forest);
            Ok(TxForest {
                tx_hash: *h,
                forest,
                paths,
            })
        })
        .collect();
    let mut out = Vec::new();
    let mut diagnostics = Vec::new();
    for (h, r) in txs.iter().zip(results) {
        match r {
            Ok(f) => out.push(f),
            Err(e @ ChainError::Transport { .. }) => return Err(e),
            Err(e) => diagnostics.push(format!("trace {h}: {e}")),
        }
    }
    Ok((out, diagnostics))
}

/// Ranks all paths of an incident with the model, or by semantic density.
pub fn rank_incident<T: Scalar>(
    incident_id: &str,
    samples: &[PathSample],
    opts: &PipelineOptions<T>,
) -> Result<RankingResult, ModelError> {
    match &opts.model {
        Some(m) => m.rank(incident_id, samples, &opts.methods, opts.cutoff),
        None => {
            let scored = samples
                .iter()
                .map(|s| {
                    let sem = semantic_of_sig(&s.sig, &opts.methods);
                    ScoredPath {
                        path_key: s.path_key.clone(),
                        score: ratio_to_scalar::<f64>(&sem),
                        semantic: sem,
                    }
                })
                .collect();
            rank_paths(incident_id, scored, opts.cutoff)
        }
    }
}

pub fn run_pipeline<T: Scalar, X: Transport>(
    chain: &ChainAccess<X>,
    scope: &AnalysisScope,
    opts: &PipelineOptions<T>,
    extractor: &Extractor<'_, X>,
) -> Result<IncidentContext, PipelineError> {
    let sc = build_scope(chain, &scope.seeds(), &scope.block_range).map_err(stage("scope"))?;
    let mut diagnostics = sc.diagnostics.clone();
    if opts.model.is_none() {
        diagnostics.push("no model configured; paths ranked by semantic density".into());
    }

    let hashes: Vec<TxHash> = sc.transactions.iter().map(|t| t.tx_hash).collect();
    let (forests, trace_diags) = reconstruct(chain, &hashes, &opts.signatures).map_err(stage("trace"))?;
    diagnostics.extend(trace_diags);

    let mut samples = Vec::new();
    let mut locate: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (fi, tf) in forests.iter().enumerate() {
        for (pi, p) in tf.paths.iter().enumerate() {
            let s = PathSample::from_path(&tf.forest, p, &tf.tx_hash);
            locate.insert(s.path_key.clone(), (fi, pi));
            samples.push(s);
        }
    }
    let ranking = if samples.is_empty() {
        None
    } else {
        Some(rank_incident(&scope.incident_id(), &samples, opts)?)
    };

    let mut flagged = Vec::new();
    for r in ranking.iter().flat_map(|r| &r.ranked) {
        let (fi, pi) = locate[&r.path_key];
        let tf = &forests[fi];
        let path = &tf.paths[pi];
        let subgraph = extract_subgraph(&tf.forest, path, opts.k, r.path_key.clone())
            .expect("paths come from their own forest");
        flagged.push(FlaggedPath {
            path_key: r.path_key.clone(),
            tx_hash: tf.tx_hash,
            sig: path.sig.clone(),
            probability: r.probability,
            semantic: semantic_of_sig(&path.sig, &opts.methods),
            subgraph,
        });
    }

    let mut code_targets = sc.addresses.clone();
    let sub_addrs: BTreeSet<Address> = flagged
        .iter()
        .flat_map(|f| f.subgraph.nodes.iter().flat_map(|r| [r.from, r.to]))
        .collect();
    code_targets.extend(sub_addrs.iter().copied());
    let targets: Vec<Address> = code_targets.into_iter().collect();
    let code: Vec<CodeArtifact> = targets.par_iter().map(|a| extractor.extract(a)).collect();

    let mut creation_relations = sc.creators.clone();
    let covered: BTreeSet<Address> = creation_relations.iter().map(|c| c.contract).collect();
    let extra: Vec<Address> = code
        .iter()
        .filter(|a| a.bytecode_len > 0 && sub_addrs.contains(&a.address) && !covered.contains(&a.address))
        .map(|a| a.address)
        .collect();
    let extra_results: Vec<Result<CreatorInfo, ChainError>> = extra
        .par_iter()
        .map(|a| resolve_creator(chain, a, &scope.block_range))
        .collect();
    for (a, r) in extra.iter().zip(extra_results) {
        match r {
            Ok(c) => creation_relations.push(c),
            Err(e) => diagnostics.push(format!("creator {a}: {e}")),
        }
    }
    creation_relations.sort_by_key(|c| c.contract);

    let diff_results: Vec<Result<TxBalanceDiffs, ChainError>> = forests
        .par_iter()
        .map(|tf| {
            let addrs: BTreeSet<Address> = tf
                .forest
                .nodes
                .iter()
                .flat_map(|n| [n.record.from, n.record.to])
                .filter(|a| !a.is_zero())
                .collect();
            Ok(TxBalanceDiffs {
                tx_hash: tf.tx_hash,
                diffs: chain.fetch_balance_diffs(&tf.tx_hash, &addrs)?,
            })
        })
        .collect();
    let mut balance_diffs = Vec::new();
    for (tf, r) in forests.iter().zip(diff_results) {
        match r {
            Ok(d) => balance_diffs.push(d),
            Err(e @ ChainError::Transport { .. }) => return Err(stage("balance")(e)),
            Err(e) => diagnostics.push(format!("balance diffs {}: {e}", tf.tx_hash)),
        }
    }

    Ok(IncidentContext {
        schema_version: SCHEMA_VERSION,
        scope: scope.clone(),
        addresses: sc.addresses,
        proxies: sc.proxies,
        creation_relations,
        code,
        flagged,
        balance_diffs,
        diagnostics,
    })
}
