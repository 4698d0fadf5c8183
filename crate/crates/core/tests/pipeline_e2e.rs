use std::path::{Path, PathBuf};

use tracekit::chain::{ChainAccess, FixtureStore};
use tracekit::detect::ProxyMechanism;
use tracekit::extract::{ArtifactKind, Extractor, FixedClock};
use tracekit::gateway::{GatewayParams, MockGateway};
use tracekit::model::AnomalyModel;
use tracekit::pipeline::{parse_scope, run_pipeline, IncidentContext, PipelineOptions};
use tracekit::report::render_report;
use tracekit::synthetic::{incident_scenario, IncidentScenario};
use tracekit::trace::SignatureDb;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn options(with_model: bool) -> PipelineOptions<f64> {
    let root = fixtures();
    PipelineOptions {
        signatures: SignatureDb::load(root.join("incident/signatures.tsv")).unwrap(),
        model: with_model.then(|| {
            AnomalyModel::from_json(&std::fs::read_to_string(root.join("benchmark/model.json")).unwrap()).unwrap()
        }),
        ..PipelineOptions::default()
    }
}

fn run(with_model: bool) -> (IncidentContext, IncidentScenario) {
    let root = fixtures();
    let chain = ChainAccess::new(FixtureStore::open(root.join("incident/chain")));
    let scope = parse_scope(&std::fs::read_to_string(root.join("incident/scope.json")).unwrap()).unwrap();
    let clock = FixedClock(0);
    let extractor = Extractor::new(&chain, &clock);
    let ctx = run_pipeline(&chain, &scope, &options(with_model), &extractor).unwrap();
    (ctx, incident_scenario().1)
}

#[test]
fn attack_path_is_flagged_with_the_injected_call() {
    let (ctx, s) = run(true);
    assert!(ctx.flagged.len() <= 20);
    let hits: Vec<_> = ctx.flagged.iter().filter(|f| f.tx_hash == s.attack_tx).collect();
    assert!(!hits.is_empty(), "attack transaction not among flagged paths");
    assert!(hits
        .iter()
        .any(|f| f.subgraph.nodes.iter().any(|r| r.method == s.injected_method)));
}

#[test]
fn proxy_implementation_is_in_scope_and_code_list() {
    let (ctx, s) = run(true);
    let p = ctx.proxies.iter().find(|p| p.address == s.vault_proxy).unwrap();
    assert_eq!(p.implementation, Some(s.vault_impl));
    assert_eq!(p.mechanism, ProxyMechanism::MinimalProxyHardcoded);
    assert!(ctx.addresses.contains(&s.vault_impl));
    assert!(ctx.code.iter().any(|a| a.address == s.vault_impl));
    let token = ctx.code.iter().find(|a| a.address == s.token).unwrap();
    assert_eq!(token.kind, ArtifactKind::VerifiedSource);
    assert_eq!(token.text.as_deref(), Some(tracekit::synthetic::TOKEN_SOURCE));
}

#[test]
fn creators_are_resolved() {
    let (ctx, s) = run(true);
    let vault = ctx.creation_relations.iter().find(|c| c.contract == s.vault_proxy).unwrap();
    assert_eq!(vault.creator_eoa, s.deployer);
    assert!(vault.factory_chain.is_empty());
    assert_eq!(vault.deployed_set.len(), 5, "{:?}", vault.deployed_set);
    let atk = ctx.creation_relations.iter().find(|c| c.contract == s.attack_contract).unwrap();
    assert_eq!(atk.creator_eoa, s.attacker);
}

#[test]
fn pipeline_and_report_are_deterministic() {
    let (a, _) = run(true);
    let (b, _) = run(true);
    let ja = serde_json::to_string(&a).unwrap();
    assert_eq!(ja, serde_json::to_string(&b).unwrap());
    let gw = MockGateway::uppercase();
    let ra = render_report(&a, &gw, &GatewayParams::default()).unwrap();
    let rb = render_report(&b, &gw, &GatewayParams::default()).unwrap();
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
}

#[test]
fn semantic_fallback_without_model() {
    let (ctx, _) = run(false);
    assert!(ctx.diagnostics.iter().any(|d| d.contains("no model")));
    assert!(!ctx.flagged.is_empty());
}

#[test]
fn ranking_is_selective_and_factory_chain_resolves() {
    let root = fixtures();
    let chain = ChainAccess::new(FixtureStore::open(root.join("incident/chain")));
    let s = incident_scenario().1;
    let sc = tracekit::detect::build_scope(&chain, &s.scope.seeds(), &s.block_range).unwrap();
    let hashes: Vec<_> = sc.transactions.iter().map(|t| t.tx_hash).collect();
    let (forests, diags) = tracekit::pipeline::reconstruct(&chain, &hashes, &options(false).signatures).unwrap();
    assert!(diags.is_empty());
    let paths: usize = forests.iter().map(|f| f.paths.len()).sum();
    assert!(paths > 40, "only {paths} paths; top-20 would not be selective");

    let c = tracekit::detect::resolve_creator(&chain, &s.strategy, &s.block_range).unwrap();
    assert_eq!(c.creator_eoa, s.deployer);
    assert_eq!(c.factory_chain, vec![s.factory]);
    let p = tracekit::detect::detect_proxy(&chain, &s.strategy).unwrap();
    assert_eq!(p.implementation, Some(s.strategy_impl));
    assert_eq!(p.mechanism, ProxyMechanism::StorageSlotTraced);
}
