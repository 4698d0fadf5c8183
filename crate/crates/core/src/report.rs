//! Report prompt assembly and parsing of the gateway's structured answer.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::gateway::{GatewayError, GatewayParams, LlmGateway};
use crate::pipeline::{IncidentContext, SCHEMA_VERSION};
use crate::primitives::{Address, TxHash};

pub const REPORT_TEMPLATE: &str = include_str!("../assets/report_prompt.txt");

/// Longest code text embedded per artifact, in bytes.
const CODE_EXCERPT: usize = 6000;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub tx_hash: TxHash,
    pub path_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentReport {
    pub schema_version: u32,
    pub attacker_addresses: Vec<Address>,
    pub victim_addresses: Vec<Address>,
    pub exploitation_mechanism: String,
    /// Ordered steps.
    pub attack_execution: Vec<String>,
    pub evidence_refs: Vec<EvidenceRef>,
    pub raw_model_output: String,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
#[error("gateway failed: {source}")]
pub struct ReportError {
    #[source]
    pub source: GatewayError,
    /// The prompt that was to be sent, for offline use.
    pub prompt: String,
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json serializes")
}

fn excerpt(text: &str) -> String {
    if text.len() <= CODE_EXCERPT {
        return text.to_string();
    }
    let mut end = CODE_EXCERPT;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}\n... [{} more bytes]", &text[..end], text.len() - end)
}

/// Fills the report template from the context.
pub fn build_prompt(ctx: &IncidentContext) -> String {
    let relations = json!({
        "creators": ctx.creation_relations,
        "proxies": ctx.proxies,
    });
    let code: Vec<Value> = ctx
        .code
        .iter()
        .map(|a| {
            json!({
                "address": a.address,
                "kind": a.kind,
                "bytecode_len": a.bytecode_len,
                "text": a.text.as_deref().map(excerpt),
            })
        })
        .collect();
    let subgraphs: Vec<Value> = ctx
        .flagged
        .iter()
        .map(|f| {
            json!({
                "path_key": f.path_key,
                "tx_hash": f.tx_hash,
                "probability": f.probability,
                "sig": f.sig,
                "subgraph": f.subgraph,
            })
        })
        .collect();
    REPORT_TEMPLATE
        .replace("{CREATION_RELATIONS}", &pretty(&relations))
        .replace("{CODE_ARTIFACTS}", &pretty(&Value::Array(code)))
        .replace("{SUBGRAPHS}", &pretty(&Value::Array(subgraphs)))
        .replace("{BALANCE_DIFFS}", &pretty(&json!(ctx.balance_diffs)))
}

/// The outermost `{...}` span of `text`, which may be wrapped in prose or a code fence.
fn json_object(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    serde_json::from_str::<Value>(&text[start..=end])
        .ok()
        .filter(Value::is_object)
}

fn addresses(v: Option<&Value>, field: &str, diags: &mut Vec<String>) -> Vec<Address> {
    let mut out = BTreeSet::new();
    for item in v.and_then(Value::as_array).into_iter().flatten() {
        match item.as_str().map(str::parse::<Address>) {
            Some(Ok(a)) => {
                out.insert(a);
            }
            _ => diags.push(format!("{field}: dropped malformed address {item}")),
        }
    }
    out.into_iter().collect()
}

/// Parses a gateway answer against the context. Anything unparseable leaves
/// the structured fields empty and keeps the raw text.
pub fn parse_report(ctx: &IncidentContext, raw: &str) -> IncidentReport {
    let mut report = IncidentReport {
        schema_version: SCHEMA_VERSION,
        attacker_addresses: Vec::new(),
        victim_addresses: Vec::new(),
        exploitation_mechanism: String::new(),
        attack_execution: Vec::new(),
        evidence_refs: Vec::new(),
        raw_model_output: raw.to_string(),
        diagnostics: Vec::new(),
    };
    let Some(v) = json_object(raw) else {
        report.diagnostics.push("model output contains no JSON object".into());
        return report;
    };
    let required = ["attacker_addresses", "victim_addresses", "exploitation_mechanism", "attack_execution"];
    if let Some(missing) = required.iter().find(|k| v.get(**k).is_none()) {
        report.diagnostics.push(format!("model output lacks `{missing}`"));
        return report;
    }
    let mut diags = Vec::new();
    report.attacker_addresses = addresses(v.get("attacker_addresses"), "attacker_addresses", &mut diags);
    report.victim_addresses = addresses(v.get("victim_addresses"), "victim_addresses", &mut diags);
    report.exploitation_mechanism = v["exploitation_mechanism"].as_str().unwrap_or_default().to_string();
    report.attack_execution = match &v["attack_execution"] {
        Value::Array(items) => items
            .iter()
            .map(|s| s.as_str().map(str::to_string).unwrap_or_else(|| s.to_string()))
            .collect(),
        Value::String(s) => s.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect(),
        _ => Vec::new(),
    };
    let flagged: BTreeSet<(TxHash, &str)> = ctx.flagged.iter().map(|f| (f.tx_hash, f.path_key.as_str())).collect();
    let mut refs = BTreeSet::new();
    for r in v.get("evidence_refs").and_then(Value::as_array).into_iter().flatten() {
        match serde_json::from_value::<EvidenceRef>(r.clone()) {
            Ok(e) if flagged.contains(&(e.tx_hash, e.path_key.as_str())) => {
                refs.insert(e);
            }
            _ => diags.push(format!("evidence_refs: dropped {r} (not a flagged path)")),
        }
    }
    report.evidence_refs = refs.into_iter().collect();
    report.diagnostics = diags;
    report
}

/// One gateway call per report.
pub fn render_report(
    ctx: &IncidentContext,
    gateway: &dyn LlmGateway,
    params: &GatewayParams,
) -> Result<IncidentReport, ReportError> {
    let prompt = build_prompt(ctx);
    match gateway.send(&prompt, params) {
        Ok(raw) => Ok(parse_report(ctx, &raw)),
        Err(source) => Err(ReportError { source, prompt }),
    }
}

impl IncidentReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[Address]| {
            if v.is_empty() {
                "(none)".to_string()
            } else {
                v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
            }
        };
        let _ = writeln!(s, "Attacker addresses: {}", list(&self.attacker_addresses));
        let _ = writeln!(s, "Victim addresses:   {}", list(&self.victim_addresses));
        let _ = writeln!(s, "\nExploitation mechanism\n{}", self.exploitation_mechanism);
        let _ = writeln!(s, "\nAttack execution");
        for (i, step) in self.attack_execution.iter().enumerate() {
            let _ = writeln!(s, "{}. {step}", i + 1);
        }
        let _ = writeln!(s, "\nEvidence");
        for e in &self.evidence_refs {
            let _ = writeln!(s, "- {} ({})", e.path_key, e.tx_hash);
        }
        if self.attack_execution.is_empty() && self.exploitation_mechanism.is_empty() {
            let _ = writeln!(s, "\nRaw model output\n{}", self.raw_model_output);
        }
        s
    }
}
