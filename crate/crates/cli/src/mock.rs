//! Offline gateways. The report mock derives its answer from the context alone,
//! so output is a pure function of the fixtures.

use std::collections::BTreeSet;

use serde_json::json;
use tracekit::extract::REFINE_TEMPLATE;
use tracekit::gateway::MockGateway;
use tracekit::pipeline::{FlaggedPath, IncidentContext};
use tracekit::Address;

/// Evidence and steps are drawn from at most this many paths.
const MAX_EVIDENCE: usize = 3;

/// Paths the ranking considers anomalous; the single best one if none clears 0.5.
fn salient(ctx: &IncidentContext) -> Vec<&FlaggedPath> {
    let strong: Vec<&FlaggedPath> = ctx.flagged.iter().filter(|f| f.probability >= 0.5).collect();
    let chosen = if strong.is_empty() { ctx.flagged.iter().take(1).collect() } else { strong };
    chosen.into_iter().take(MAX_EVIDENCE).collect()
}

/// Sender of the outermost call in the path's subgraph.
fn origin(f: &FlaggedPath) -> Option<Address> {
    f.subgraph.nodes.iter().min_by_key(|r| r.index).map(|r| r.from)
}

pub fn report_answer(ctx: &IncidentContext) -> String {
    let paths = salient(ctx);
    let attackers: BTreeSet<String> = paths.iter().filter_map(|f| origin(f)).map(|a| a.to_string()).collect();
    let victims: BTreeSet<String> = ctx.scope.contracts.iter().map(ToString::to_string).collect();
    let methods: BTreeSet<&str> = paths.iter().flat_map(|f| f.sig.iter().map(String::as_str)).collect();
    let mechanism = if paths.is_empty() {
        "No anomalous execution path was found in scope.".to_string()
    } else {
        format!(
            "Highest-ranked paths invoke {} (offline summary, no model consulted).",
            methods.into_iter().collect::<Vec<_>>().join(", ")
        )
    };
    let steps: Vec<String> = paths
        .iter()
        .map(|f| format!("tx {}: {}", f.tx_hash, f.sig.join(" -> ")))
        .collect();
    let refs: Vec<_> = paths
        .iter()
        .map(|f| json!({"tx_hash": f.tx_hash, "path_key": f.path_key}))
        .collect();
    serde_json::to_string_pretty(&json!({
        "attacker_addresses": attackers,
        "victim_addresses": victims,
        "exploitation_mechanism": mechanism,
        "attack_execution": steps,
        "evidence_refs": refs,
    }))
    .expect("json serializes")
}

pub fn report_gateway(ctx: &IncidentContext) -> MockGateway {
    let answer = report_answer(ctx);
    MockGateway::new("mock:context-summary", move |_| Ok(answer.clone()))
}

/// Returns the pseudocode unchanged.
pub fn identity_refiner() -> MockGateway {
    let (head, tail) = REFINE_TEMPLATE
        .split_once("{PSEUDOCODE}")
        .expect("refine template has a placeholder");
    let (head, tail) = (head.to_string(), tail.to_string());
    MockGateway::new("mock:identity", move |prompt| {
        Ok(prompt
            .strip_prefix(head.as_str())
            .and_then(|p| p.strip_suffix(tail.as_str()))
            .unwrap_or(prompt)
            .to_string())
    })
}
