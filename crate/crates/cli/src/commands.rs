use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tracekit::chain::{
    BlockRange, ChainAccess, ChainConfig, ExplorerEndpoint, FixtureStore, HttpTransport, Recording, Transport,
};
use tracekit::detect::build_scope;
use tracekit::extract::{ArtifactCache, Clock, CodeArtifact, Decompiler, Extractor, FixedClock, SystemClock};
use tracekit::features::{depth, fanout, parse_dataset, LabeledPath, PathSample, SuspiciousMethodSet};
use tracekit::gateway::{HttpGateway, LlmGateway, MockGateway, ReplayGateway};
use tracekit::model::{
    logo_evaluate, AnomalyModel, ExternalScores, FoldResult, LogisticScorer, OracleScorer, PathScorer,
    RankingResult, SemanticScorer, TrainConfig,
};
use tracekit::pipeline::{parse_scope, rank_incident, reconstruct, run_pipeline, AnalysisScope, PipelineOptions, TxForest};
use tracekit::report::{build_prompt, render_report};
use tracekit::subgraph::{extract_subgraph, subgraph_stats, EnclosingSubgraph, SubgraphStats};
use tracekit::trace::SignatureDb;
use tracekit::{Address, TxHash};

use crate::config::{Settings, DEFAULT_EXPLORER_URL};
use crate::error::CliError;
use crate::mock;
use crate::{
    EvalCmd, ExtractCmd, GatewayMode, RankCmd, ReportCmd, ScopeCmd, ScopeSource, SubgraphCmd, TrainCmd, TreeCmd,
};

type Chain = ChainAccess<Box<dyn Transport>>;

fn open_chain(s: &Settings) -> Result<Chain, CliError> {
    let http = || -> Result<HttpTransport, CliError> {
        let explorer = (s.explorer_key.is_some() || s.explorer_url.is_some()).then(|| ExplorerEndpoint {
            url: s.explorer_url.clone().unwrap_or_else(|| DEFAULT_EXPLORER_URL.into()),
            api_key: s.explorer_key.clone(),
        });
        let t = HttpTransport::new(s.rpc_url.clone(), explorer)?;
        Ok(match s.jobs {
            Some(n) => t.with_max_in_flight(n),
            None => t,
        })
    };
    let transport: Box<dyn Transport> = match &s.fixtures {
        Some(dir) if !s.record => {
            if !dir.is_dir() {
                return Err(CliError::usage(format!("fixture directory {} does not exist", dir.display())));
            }
            Box::new(FixtureStore::open(dir))
        }
        Some(dir) => Box::new(Recording::new(http()?, FixtureStore::open(dir))),
        None if s.rpc_url.is_some() || s.explorer_key.is_some() || s.explorer_url.is_some() => Box::new(http()?),
        None => {
            return Err(CliError::usage(
                "no chain data source: pass --fixtures or --rpc-url (or set TRACELLM_FIXTURES / TRACELLM_RPC_URL)",
            ))
        }
    };
    Ok(ChainAccess::with_config(
        transport,
        ChainConfig {
            max_block_span: s.max_block_span,
        },
    ))
}

/// Fixture replays stamp provenance with `SOURCE_DATE_EPOCH` (default 0) so output is reproducible.
fn clock(s: &Settings) -> Result<Box<dyn Clock>, CliError> {
    if !s.offline() {
        return Ok(Box::new(SystemClock));
    }
    let epoch = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("SOURCE_DATE_EPOCH is not an integer: {v:?}")))?,
        Err(_) => 0,
    };
    Ok(Box::new(FixedClock(epoch)))
}

struct Inputs {
    signatures: SignatureDb,
    methods: SuspiciousMethodSet,
}

fn load_inputs(s: &Settings) -> Result<Inputs, CliError> {
    Ok(Inputs {
        signatures: match &s.signatures {
            Some(p) => SignatureDb::load(p)?,
            None => SignatureDb::default(),
        },
        methods: match &s.suspicious_set {
            Some(p) => SuspiciousMethodSet::load(p)?,
            None => SuspiciousMethodSet::default(),
        },
    })
}

fn load_model(s: &Settings) -> Result<Option<AnomalyModel<f64>>, CliError> {
    let Some(p) = &s.model else {
        return Ok(None);
    };
    let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
    AnomalyModel::from_json(&text)
        .map(Some)
        .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
}

fn options(s: &Settings, inputs: Inputs) -> Result<PipelineOptions<f64>, CliError> {
    Ok(PipelineOptions {
        k: s.k,
        cutoff: s.cutoff,
        methods: inputs.methods,
        signatures: inputs.signatures,
        model: load_model(s)?,
    })
}

fn require_out<'a>(s: &'a Settings, cmd: &str) -> Result<&'a Path, CliError> {
    s.out
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("`{cmd}` writes files and needs --out")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes") + "\n"
}

/// Prints `v` on stdout and, with --out, stores it as `<name>.json`.
fn emit<T: Serialize>(s: &Settings, name: &str, v: &T) -> Result<(), CliError> {
    let text = to_json(v);
    if let Some(out) = &s.out {
        write_file(&out.join(format!("{name}.json")), text.as_bytes())?;
    }
    std::io::stdout()
        .lock()
        .write_all(text.as_bytes())
        .map_err(|e| CliError::usage(format!("stdout: {e}")))
}

fn warn_all(lines: &[String]) {
    for l in lines {
        eprintln!("warning: {l}");
    }
}

fn scope_from_source(src: &ScopeSource) -> Result<Option<AnalysisScope>, CliError> {
    if let Some(p) = &src.scope {
        if !src.address.is_empty() {
            return Err(CliError::usage("--scope and --address are mutually exclusive"));
        }
        let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
        let mut scope = parse_scope(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
        if src.label.is_some() {
            scope.label = src.label.clone();
        }
        return Ok(Some(scope));
    }
    match (src.from_block, src.to_block) {
        (None, None) => Ok(None),
        (Some(from), Some(to)) => {
            if src.address.is_empty() {
                return Err(CliError::usage("a block window needs at least one --address"));
            }
            Ok(Some(AnalysisScope {
                contracts: src.address.clone(),
                block_range: BlockRange::new(from, to)?,
                label: src.label.clone(),
            }))
        }
        _ => Err(CliError::usage("--from-block and --to-block go together")),
    }
}

fn required_scope(src: &ScopeSource) -> Result<AnalysisScope, CliError> {
    scope_from_source(src)?.ok_or_else(|| {
        CliError::usage("no scope: pass --scope FILE or --address with --from-block and --to-block")
    })
}

pub fn scope(s: &Settings, c: ScopeCmd) -> Result<(), CliError> {
    let range = BlockRange::new(c.from_block, c.to_block)?;
    let chain = open_chain(s)?;
    let seeds: BTreeSet<Address> = c.address.iter().copied().collect();
    let result = build_scope(&chain, &seeds, &range)?;
    warn_all(&result.diagnostics);
    emit(s, "scope", &result)
}

/// Every path of every scope transaction, with the ranking over them.
struct Ranked {
    forests: Vec<TxForest>,
    ranking: RankingResult,
}

fn rank_scope(chain: &Chain, scope: &AnalysisScope, opts: &PipelineOptions<f64>) -> Result<Ranked, CliError> {
    let sc = build_scope(chain, &scope.seeds(), &scope.block_range)?;
    warn_all(&sc.diagnostics);
    let hashes: Vec<TxHash> = sc.transactions.iter().map(|t| t.tx_hash).collect();
    let (forests, diags) = reconstruct(chain, &hashes, &opts.signatures)?;
    warn_all(&diags);
    let samples: Vec<PathSample> = forests
        .iter()
        .flat_map(|tf| tf.paths.iter().map(|p| PathSample::from_path(&tf.forest, p, &tf.tx_hash)))
        .collect();
    if opts.model.is_none() {
        eprintln!("warning: no model configured; paths ranked by semantic density");
    }
    let ranking = if samples.is_empty() {
        RankingResult {
            incident_id: scope.incident_id(),
            ranked: Vec::new(),
            cutoff: opts.cutoff,
        }
    } else {
        rank_incident(&scope.incident_id(), &samples, opts)?
    };
    Ok(Ranked { forests, ranking })
}

pub fn rank(s: &Settings, c: RankCmd) -> Result<(), CliError> {
    let scope = required_scope(&c.source)?;
    let opts = options(s, load_inputs(s)?)?;
    let chain = open_chain(s)?;
    let ranked = rank_scope(&chain, &scope, &opts)?;
    emit(s, "ranking", &ranked.ranking)
}

#[derive(Serialize)]
struct PathOut {
    path_key: String,
    /// Record indices, root first.
    nodes: Vec<usize>,
    sig: Vec<String>,
    depth: usize,
    fanout: usize,
}

#[derive(Serialize)]
struct TreeOut {
    tx_hash: TxHash,
    node_count: usize,
    forest: Value,
    paths: Vec<PathOut>,
}

pub fn tree(s: &Settings, c: TreeCmd) -> Result<(), CliError> {
    let inputs = load_inputs(s)?;
    let chain = open_chain(s)?;
    let hashes: Vec<TxHash> = if !c.tx.is_empty() {
        if scope_from_source(&c.source)?.is_some() {
            return Err(CliError::usage("--tx and a scope are mutually exclusive"));
        }
        c.tx.clone()
    } else {
        let scope = required_scope(&c.source)?;
        let sc = build_scope(&chain, &scope.seeds(), &scope.block_range)?;
        warn_all(&sc.diagnostics);
        sc.transactions.iter().map(|t| t.tx_hash).collect()
    };
    let (forests, diags) = reconstruct(&chain, &hashes, &inputs.signatures)?;
    warn_all(&diags);
    let out: Vec<TreeOut> = forests
        .iter()
        .map(|tf| TreeOut {
            tx_hash: tf.tx_hash,
            node_count: tf.forest.len(),
            forest: tf.forest.to_json(),
            paths: tf
                .paths
                .iter()
                .map(|p| PathOut {
                    path_key: PathSample::from_path(&tf.forest, p, &tf.tx_hash).path_key,
                    nodes: p.nodes.iter().map(|&n| tf.forest.node(n).record.index).collect(),
                    sig: p.sig.clone(),
                    depth: depth(p),
                    fanout: fanout(&tf.forest, p),
                })
                .collect(),
        })
        .collect();
    emit(s, "tree", &out)
}

#[derive(Serialize)]
struct SubgraphOut {
    path_key: String,
    tx_hash: TxHash,
    /// Present for ranked paths.
    #[serde(skip_serializing_if = "Option::is_none")]
    probability: Option<f64>,
    stats: SubgraphStats,
    subgraph: EnclosingSubgraph,
}

pub fn subgraph(s: &Settings, c: SubgraphCmd) -> Result<(), CliError> {
    let scope = required_scope(&c.source)?;
    let opts = options(s, load_inputs(s)?)?;
    let chain = open_chain(s)?;
    let ranked = rank_scope(&chain, &scope, &opts)?;
    let mut index = BTreeMap::new();
    for tf in &ranked.forests {
        for p in &tf.paths {
            index.insert(PathSample::from_path(&tf.forest, p, &tf.tx_hash).path_key, (tf, p));
        }
    }
    let wanted: Vec<(String, Option<f64>)> = if c.path_key.is_empty() {
        ranked
            .ranking
            .ranked
            .iter()
            .map(|r| (r.path_key.clone(), Some(r.probability)))
            .collect()
    } else {
        c.path_key.iter().map(|k| (k.clone(), None)).collect()
    };
    let mut out = Vec::new();
    for (key, probability) in wanted {
        let (tf, p) = index
            .get(&key)
            .ok_or_else(|| CliError::usage(format!("path {key} is not in scope")))?;
        let sg = extract_subgraph(&tf.forest, p, s.k, key.clone()).expect("paths come from their own forest");
        out.push(SubgraphOut {
            path_key: key,
            tx_hash: tf.tx_hash,
            probability,
            stats: subgraph_stats(&sg),
            subgraph: sg,
        });
    }
    emit(s, "subgraphs", &out)
}

fn live_gateway(s: &Settings) -> Result<HttpGateway, CliError> {
    Ok(HttpGateway::new(s.gateway_url.clone(), s.gateway_key.clone())?)
}

fn replay_dir(s: &Settings, given: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    match given {
        Some(d) => Ok(d.clone()),
        None => Ok(require_out(s, "replay")?.join("gateway")),
    }
}

fn gateway(
    s: &Settings,
    mode: GatewayMode,
    dir: &Option<PathBuf>,
    mock: impl FnOnce() -> MockGateway,
) -> Result<Box<dyn LlmGateway>, CliError> {
    Ok(match mode {
        GatewayMode::Mock => Box::new(mock()),
        GatewayMode::Replay => Box::new(ReplayGateway::replay(replay_dir(s, dir)?)),
        GatewayMode::Record => Box::new(ReplayGateway::record(replay_dir(s, dir)?, Box::new(live_gateway(s)?))),
        GatewayMode::Live => Box::new(live_gateway(s)?),
    })
}

fn decompiler(s: &Settings) -> Option<Decompiler> {
    s.decompiler_cmd.as_ref().map(|cmd| {
        let d = Decompiler::new(cmd.clone()).with_timeout(Duration::from_secs(s.decompiler_timeout_s));
        match s.jobs {
            Some(n) => d.with_workers(n),
            None => d,
        }
    })
}

pub fn extract(s: &Settings, c: ExtractCmd) -> Result<(), CliError> {
    let chain = open_chain(s)?;
    let clock = clock(s)?;
    let mut targets: BTreeSet<Address> = c.source.address.iter().copied().collect();
    if let Some(scope) = scope_from_source(&c.source)? {
        let sc = build_scope(&chain, &scope.seeds(), &scope.block_range)?;
        warn_all(&sc.diagnostics);
        targets.extend(sc.addresses);
    }
    if targets.is_empty() {
        return Err(CliError::usage("nothing to extract: pass --address or a scope"));
    }
    let dec = decompiler(s);
    let refiner = if c.refine {
        Some(gateway(s, c.gateway, &c.replay_dir, mock::identity_refiner)?)
    } else {
        None
    };
    let mut ex = Extractor::new(&chain, clock.as_ref());
    ex.decompiler = dec.as_ref();
    ex.gateway = refiner.as_deref();
    ex.params = s.gateway_params.clone();
    ex.cache = s.out.as_ref().map(|o| ArtifactCache::new(o.join("cache")));
    let artifacts: Vec<CodeArtifact> = targets.iter().map(|a| ex.extract(a)).collect();
    for a in &artifacts {
        warn_all(&a.diagnostics.iter().map(|d| format!("{}: {d}", a.address)).collect::<Vec<_>>());
    }
    emit(s, "artifacts", &artifacts)
}

fn read_dataset(path: &Path) -> Result<Vec<LabeledPath>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let paths = parse_dataset(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let attacks = paths.iter().filter(|p| p.is_attack()).count();
    if attacks == 0 || attacks == paths.len() {
        return Err(CliError::usage(format!(
            "{}: dataset has a single class ({} paths, {attacks} attack)",
            path.display(),
            paths.len()
        )));
    }
    Ok(paths)
}

fn incident_count(paths: &[LabeledPath]) -> usize {
    paths.iter().map(|p| p.incident_id.as_str()).collect::<BTreeSet<_>>().len()
}

#[derive(Serialize)]
struct TrainOut {
    model_file: PathBuf,
    sha256: String,
    config_digest: String,
    dimension: usize,
    paths: usize,
    incidents: usize,
}

pub fn train(s: &Settings, c: TrainCmd) -> Result<(), CliError> {
    let out = require_out(s, "train")?;
    let methods = load_inputs(s)?.methods;
    let paths = read_dataset(&c.dataset)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        vocab_cap: c.vocab_cap.unwrap_or(defaults.vocab_cap),
        class_weighting: !c.no_class_weighting,
        ..defaults
    };
    let model = AnomalyModel::<f64>::train(&paths, &methods, &cfg)?;
    let text = model.to_json();
    let file = out.join("model.json");
    write_file(&file, text.as_bytes())?;
    emit(
        s,
        "train",
        &TrainOut {
            model_file: file,
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
            config_digest: model.config_digest.clone(),
            dimension: model.dimension(),
            paths: paths.len(),
            incidents: incident_count(&paths),
        },
    )
}

#[derive(Serialize)]
struct ScorerOut {
    scorer: String,
    /// Four decimals.
    mean_recall: String,
    folds: Vec<FoldResult>,
    skipped: Vec<String>,
}

#[derive(Serialize)]
struct EvalOut {
    cutoff: usize,
    paths: usize,
    incidents: usize,
    results: Vec<ScorerOut>,
}

fn scorer(name: &str, methods: &SuspiciousMethodSet) -> Result<Box<dyn PathScorer>, CliError> {
    Ok(match name {
        "full" => Box::new(LogisticScorer::<f64>::new(TrainConfig::default(), methods.clone())),
        "semantic" => Box::new(SemanticScorer(methods.clone())),
        "oracle" => Box::new(OracleScorer),
        other => {
            let Some(file) = other.strip_prefix("external:") else {
                return Err(CliError::usage(format!(
                    "unknown scorer `{other}`; expected full, semantic, oracle or external:<file>"
                )));
            };
            let text = fs::read_to_string(file).map_err(|e| CliError::io(Path::new(file), e))?;
            Box::new(ExternalScores::parse(file, &text).map_err(|e| CliError::usage(format!("{file}: {e}")))?)
        }
    })
}

pub fn eval(s: &Settings, c: EvalCmd) -> Result<(), CliError> {
    let methods = load_inputs(s)?.methods;
    let paths = read_dataset(&c.dataset)?;
    let scorers = c
        .scorer
        .iter()
        .map(|name| scorer(name, &methods))
        .collect::<Result<Vec<_>, _>>()?;
    let mut results = Vec::new();
    for sc in &scorers {
        let r = logo_evaluate(&paths, sc.as_ref(), &methods, s.cutoff)?;
        let mean = format!("{:.4}", r.mean_recall);
        eprintln!("{:<24} mean recall@{} = {mean} over {} folds", r.scorer, s.cutoff, r.folds.len());
        results.push(ScorerOut {
            scorer: r.scorer,
            mean_recall: mean,
            folds: r.folds,
            skipped: r.skipped,
        });
    }
    emit(
        s,
        "eval",
        &EvalOut {
            cutoff: s.cutoff,
            paths: paths.len(),
            incidents: incident_count(&paths),
            results,
        },
    )
}

pub fn report(s: &Settings, c: ReportCmd) -> Result<(), CliError> {
    let out = require_out(s, "report")?.to_path_buf();
    let scope = required_scope(&c.source)?;
    let opts = options(s, load_inputs(s)?)?;
    let chain = open_chain(s)?;
    let clock = clock(s)?;
    let dec = decompiler(s);
    let refiner = if c.refine {
        Some(gateway(s, c.gateway, &c.replay_dir, mock::identity_refiner)?)
    } else {
        None
    };
    let mut ex = Extractor::new(&chain, clock.as_ref());
    ex.decompiler = dec.as_ref();
    ex.gateway = refiner.as_deref();
    ex.params = s.gateway_params.clone();
    ex.cache = Some(ArtifactCache::new(out.join("cache")));

    let ctx = run_pipeline(&chain, &scope, &opts, &ex)?;
    warn_all(&ctx.diagnostics);
    write_file(&out.join("context.json"), to_json(&ctx).as_bytes())?;
    let prompt_file = out.join("prompt.txt");
    write_file(&prompt_file, build_prompt(&ctx).as_bytes())?;

    let gw = gateway(s, c.gateway, &c.replay_dir, || mock::report_gateway(&ctx))?;
    let report = render_report(&ctx, gw.as_ref(), &s.gateway_params).map_err(|e| {
        eprintln!("prompt saved to {}", prompt_file.display());
        CliError::Gateway(format!("{} gateway: {e}", gw.name()))
    })?;
    warn_all(&report.diagnostics);
    let text = report.to_text();
    write_file(&out.join("report.txt"), text.as_bytes())?;
    eprint!("{text}");
    emit(s, "report", &report)
}
