//! Proxy implementation resolution, creator resolution and incident scope assembly.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{BlockRange, ChainAccess, ChainError, FrameType, RawTransaction, Transport};
use crate::disasm::{has_opcode, minimal_proxy_target, push4_selectors, DELEGATECALL};
use crate::primitives::{Address, Bytes, Selector, TxHash};

pub const MAX_FACTORY_DEPTH: usize = 8;
pub const PROBE_REDRAWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMechanism {
    MinimalProxyHardcoded,
    StorageSlotTraced,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyResolution {
    pub address: Address,
    pub is_proxy: bool,
    /// Never the zero address.
    pub implementation: Option<Address>,
    pub mechanism: ProxyMechanism,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl ProxyResolution {
    fn not_proxy(address: Address) -> Self {
        Self {
            address,
            is_proxy: false,
            implementation: None,
            mechanism: ProxyMechanism::None,
            diagnostic: None,
        }
    }

    fn unresolved(address: Address, mechanism: ProxyMechanism, why: String) -> Self {
        Self {
            address,
            is_proxy: true,
            implementation: None,
            mechanism,
            diagnostic: Some(why),
        }
    }
}

/// Selector for the probe call: drawn from an RNG seeded by the address, and
/// redrawn while it matches a PUSH4 immediate of `code`. Deterministic, so a
/// recorded probe replays.
pub fn probe_selector(address: &Address, code: &[u8]) -> Selector {
    let known = push4_selectors(code);
    let seed: [u8; 32] = Sha256::digest(address.as_bytes()).into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut sel = Selector(rng.random());
    for _ in 0..PROBE_REDRAWS {
        if !known.contains(&sel) {
            break;
        }
        sel = Selector(rng.random());
    }
    sel
}

/// Classifies the bytecode at `address` given its runtime `code`.
pub fn classify_code<T: Transport>(
    chain: &ChainAccess<T>,
    address: &Address,
    code: &[u8],
) -> ProxyResolution {
    if !has_opcode(code, DELEGATECALL) {
        return ProxyResolution::not_proxy(*address);
    }
    if let Some(target) = minimal_proxy_target(code) {
        if target.is_zero() {
            return ProxyResolution::unresolved(
                *address,
                ProxyMechanism::MinimalProxyHardcoded,
                "minimal proxy points at the zero address".into(),
            );
        }
        return ProxyResolution {
            address: *address,
            is_proxy: true,
            implementation: Some(target),
            mechanism: ProxyMechanism::MinimalProxyHardcoded,
            diagnostic: None,
        };
    }
    let sel = probe_selector(address, code);
    let trace = match chain.trace_call(address, &Bytes(sel.0.to_vec())) {
        Ok(t) => t,
        Err(e) => {
            return ProxyResolution::unresolved(
                *address,
                ProxyMechanism::StorageSlotTraced,
                format!("probe trace unavailable: {e}"),
            )
        }
    };
    let target = trace
        .iter_preorder()
        .find(|f| f.frame_type == FrameType::DelegateCall)
        .map(|f| f.to);
    match target {
        Some(t) if !t.is_zero() => ProxyResolution {
            address: *address,
            is_proxy: true,
            implementation: Some(t),
            mechanism: ProxyMechanism::StorageSlotTraced,
            diagnostic: None,
        },
        Some(_) => ProxyResolution::unresolved(
            *address,
            ProxyMechanism::StorageSlotTraced,
            "probe delegated to the zero address".into(),
        ),
        None => ProxyResolution::unresolved(
            *address,
            ProxyMechanism::StorageSlotTraced,
            format!("probe with selector {sel} reached no DELEGATECALL"),
        ),
    }
}

pub fn detect_proxy<T: Transport>(chain: &ChainAccess<T>, address: &Address) -> Result<ProxyResolution, ChainError> {
    let code = chain.fetch_code(address)?;
    Ok(classify_code(chain, address, code.as_ref()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatorInfo {
    pub contract: Address,
    pub creator_eoa: Address,
    pub creation_tx: TxHash,
    /// Contracts the EOA created directly in range, plus `contract`.
    pub deployed_set: BTreeSet<Address>,
    /// Contract creators between `contract` and the EOA, nearest first.
    pub factory_chain: Vec<Address>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

fn creation_by_scan<T: Transport>(
    chain: &ChainAccess<T>,
    address: &Address,
    txs: &[RawTransaction],
) -> Result<Option<(Address, TxHash)>, ChainError> {
    if let Some(tx) = txs
        .iter()
        .find(|t| t.is_creation() && t.receipt_contract_address == Some(*address))
    {
        return Ok(Some((tx.from, tx.tx_hash)));
    }
    for tx in txs {
        let trace = match chain.fetch_trace(&tx.tx_hash) {
            Ok(t) => t,
            Err(e) if e.is_transport() && !matches!(e, ChainError::MissingFixture { .. }) => return Err(e),
            Err(e) => {
                log::debug!("skipping trace of {}: {e}", tx.tx_hash);
                continue;
            }
        };
        let creator = trace
            .iter_preorder()
            .find(|f| f.frame_type == FrameType::Create && f.to == *address)
            .map(|f| f.from);
        if let Some(from) = creator {
            return Ok(Some((from, tx.tx_hash)));
        }
    }
    Ok(None)
}

/// Creator and creation transaction of `address`: the explorer first, then
/// a scan of `range`.
fn creation_of<T: Transport>(
    chain: &ChainAccess<T>,
    address: &Address,
    range: &BlockRange,
    scanned: &mut Option<Vec<RawTransaction>>,
) -> Result<(Address, TxHash), ChainError> {
    match chain.fetch_contract_creation(address) {
        Ok(Some(c)) => return Ok((c.creator, c.tx_hash)),
        Ok(None) => {}
        Err(e) if e.is_retryable() => return Err(e),
        Err(e) => log::debug!("explorer creation lookup for {address} failed: {e}"),
    }
    if scanned.is_none() {
        *scanned = Some(chain.scan_transactions(range, |_| true)?);
    }
    let txs = scanned.as_deref().unwrap_or_default();
    creation_by_scan(chain, address, txs)?
        .ok_or_else(|| ChainError::NotFound(format!("creation of {address} in blocks {}..={}", range.start_block, range.end_block)))
}

pub fn resolve_creator<T: Transport>(
    chain: &ChainAccess<T>,
    address: &Address,
    range: &BlockRange,
) -> Result<CreatorInfo, ChainError> {
    let mut scanned = None;
    let (mut creator, creation_tx) = creation_of(chain, address, range, &mut scanned)?;
    let mut factory_chain = Vec::new();
    let mut diagnostic = None;
    while !chain.fetch_code(&creator)?.is_empty() {
        if factory_chain.len() == MAX_FACTORY_DEPTH {
            diagnostic = Some(format!(
                "factory chain deeper than {MAX_FACTORY_DEPTH}; stopped at contract {creator}"
            ));
            break;
        }
        factory_chain.push(creator);
        match creation_of(chain, &creator, range, &mut scanned) {
            Ok((next, _)) => creator = next,
            Err(ChainError::NotFound(m)) => {
                diagnostic = Some(format!("factory {creator} has no visible creator: {m}"));
                factory_chain.pop();
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let txs = match scanned {
        Some(t) => t,
        None => chain.scan_transactions(range, |t| t.is_creation() && t.from == creator)?,
    };
    let mut deployed_set: BTreeSet<Address> = txs
        .iter()
        .filter(|t| t.is_creation() && t.from == creator)
        .filter_map(|t| t.receipt_contract_address)
        .collect();
    deployed_set.insert(*address);
    Ok(CreatorInfo {
        contract: *address,
        creator_eoa: creator,
        creation_tx,
        deployed_set,
        factory_chain,
        diagnostic,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeResult {
    pub addresses: BTreeSet<Address>,
    pub proxies: Vec<ProxyResolution>,
    pub creators: Vec<CreatorInfo>,
    pub transactions: Vec<RawTransaction>,
    pub diagnostics: Vec<String>,
}

struct SeedExpansion {
    proxy: Option<ProxyResolution>,
    creator: Option<CreatorInfo>,
    diagnostics: Vec<String>,
}

fn expand_seed<T: Transport>(
    chain: &ChainAccess<T>,
    seed: &Address,
    range: &BlockRange,
) -> Result<SeedExpansion, ChainError> {
    let code = chain.fetch_code(seed)?;
    let mut out = SeedExpansion {
        proxy: None,
        creator: None,
        diagnostics: Vec::new(),
    };
    if code.is_empty() {
        return Ok(out);
    }
    let proxy = classify_code(chain, seed, code.as_ref());
    if let Some(d) = &proxy.diagnostic {
        out.diagnostics.push(format!("proxy {seed}: {d}"));
    }
    out.proxy = Some(proxy);
    match resolve_creator(chain, seed, range) {
        Ok(c) => {
            if let Some(d) = &c.diagnostic {
                out.diagnostics.push(format!("creator {seed}: {d}"));
            }
            out.creator = Some(c);
        }
        Err(e @ (ChainError::NotFound(_) | ChainError::Decode { .. })) => {
            out.diagnostics.push(format!("creator {seed}: {e}"))
        }
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Seeds plus one round of proxy and creator expansion, and every
/// transaction in range touching the result.
pub fn build_scope<T: Transport>(
    chain: &ChainAccess<T>,
    seeds: &BTreeSet<Address>,
    range: &BlockRange,
) -> Result<ScopeResult, ChainError> {
    if seeds.is_empty() {
        return Err(ChainError::Scope("no seed addresses".into()));
    }
    let seeds: Vec<Address> = seeds.iter().copied().collect();
    let expansions: Vec<SeedExpansion> = seeds
        .par_iter()
        .map(|s| expand_seed(chain, s, range))
        .collect::<Result<_, _>>()?;
    let mut addresses: BTreeSet<Address> = seeds.iter().copied().collect();
    let mut proxies = Vec::new();
    let mut creators = Vec::new();
    let mut diagnostics = Vec::new();
    for e in expansions {
        if let Some(p) = e.proxy {
            addresses.extend(p.implementation);
            proxies.push(p);
        }
        if let Some(c) = e.creator {
            addresses.insert(c.creator_eoa);
            addresses.extend(c.deployed_set.iter().copied());
            addresses.extend(c.factory_chain.iter().copied());
            creators.push(c);
        }
        diagnostics.extend(e.diagnostics);
    }
    let transactions = chain.fetch_transactions(&addresses, range)?;
    Ok(ScopeResult {
        addresses,
        proxies,
        creators,
        transactions,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{rpc, FixtureStore};
    use crate::disasm::{minimal_proxy_code, PUSH32};

    fn chain_with_code(entries: &[(Address, Vec<u8>)]) -> (tempfile::TempDir, ChainAccess<FixtureStore>) {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::open(dir.path());
        for (a, code) in entries {
            store
                .record_request(&rpc::code(a), serde_json::json!(Bytes(code.clone())))
                .unwrap();
        }
        (dir, ChainAccess::new(store))
    }

    #[test]
    fn minimal_proxy_resolves_without_probe() {
        let p = Address::from_label("proxy");
        let i = Address::from_label("impl");
        let (_d, chain) = chain_with_code(&[(p, minimal_proxy_code(&i))]);
        let r = detect_proxy(&chain, &p).unwrap();
        assert!(r.is_proxy);
        assert_eq!(r.implementation, Some(i));
        assert_eq!(r.mechanism, ProxyMechanism::MinimalProxyHardcoded);
    }

    #[test]
    fn delegatecall_inside_push_data_is_not_a_proxy() {
        let a = Address::from_label("c");
        let mut code = vec![PUSH32];
        code.extend([0xf4; 32]);
        let (_d, chain) = chain_with_code(&[(a, code)]);
        let r = detect_proxy(&chain, &a).unwrap();
        assert!(!r.is_proxy);
        assert_eq!(r.implementation, None);
    }

    #[test]
    fn zero_target_never_reported() {
        let a = Address::from_label("z");
        let (_d, chain) = chain_with_code(&[(a, minimal_proxy_code(&Address::ZERO))]);
        let r = detect_proxy(&chain, &a).unwrap();
        assert_eq!(r.implementation, None);
        assert!(r.diagnostic.is_some());
    }

    #[test]
    fn missing_probe_is_unresolved_proxy() {
        let a = Address::from_label("s");
        let (_d, chain) = chain_with_code(&[(a, vec![0x5a, 0xf4, 0x00])]);
        let r = detect_proxy(&chain, &a).unwrap();
        assert!(r.is_proxy);
        assert_eq!(r.implementation, None);
        assert_eq!(r.mechanism, ProxyMechanism::StorageSlotTraced);
    }

    #[test]
    fn probe_avoids_known_selectors() {
        let a = Address::from_label("p");
        let first = probe_selector(&a, &[]);
        let mut code = vec![0x63];
        code.extend(first.0);
        let redrawn = probe_selector(&a, &code);
        assert_ne!(redrawn, first);
        assert_eq!(probe_selector(&a, &code), redrawn);
    }
}
