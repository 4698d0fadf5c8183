//! Access to an Ethereum node and a block explorer, live or replayed from fixtures.

pub mod fixtures;
pub mod rpc;
mod transport;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fixtures::{FixtureStore, Recording};
pub(crate) use transport::Semaphore;
pub use transport::{ExplorerEndpoint, HttpTransport, RetryPolicy, Transport};

use crate::primitives::{Address, Bytes, TxHash, Wei};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("decode error in {context}: {message}")]
    Decode { context: String, message: String },
    #[error("scope error: {0}")]
    Scope(String),
    #[error("no fixture recorded for {method} {params}")]
    MissingFixture { method: String, params: String },
    #[error("fixture store: {0}")]
    Io(String),
}

impl ChainError {
    pub fn transport(message: impl Into<String>, retryable: bool) -> Self {
        ChainError::Transport {
            message: message.into(),
            retryable,
        }
    }

    pub fn decode(context: &str, message: impl Into<String>) -> Self {
        ChainError::Decode {
            context: context.to_string(),
            message: message.into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, ChainError::Transport { retryable: true, .. })
    }

    /// Transport-class failures: the data source could not answer, as opposed to
    /// answering "no such thing" or answering garbage.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            ChainError::Transport { .. } | ChainError::MissingFixture { .. } | ChainError::Io(_)
        )
    }
}

/// Inclusive block interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRange {
    pub start_block: u64,
    pub end_block: u64,
}

impl BlockRange {
    pub fn new(start_block: u64, end_block: u64) -> Result<Self, ChainError> {
        if start_block > end_block {
            return Err(ChainError::Scope(format!(
                "block range start {start_block} is after end {end_block}"
            )));
        }
        Ok(Self {
            start_block,
            end_block,
        })
    }

    pub fn span(&self) -> u64 {
        self.end_block - self.start_block + 1
    }

    pub fn contains(&self, block: u64) -> bool {
        (self.start_block..=self.end_block).contains(&block)
    }

    pub fn blocks(&self) -> std::ops::RangeInclusive<u64> {
        self.start_block..=self.end_block
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTransaction {
    pub tx_hash: TxHash,
    pub from: Address,
    /// Absent for contract creations.
    pub to: Option<Address>,
    pub value: Wei,
    pub input: Bytes,
    pub block_number: u64,
    /// Position within the block.
    pub tx_index: u64,
    /// Created contract; set only when `to` is absent.
    pub receipt_contract_address: Option<Address>,
}

impl RawTransaction {
    pub fn is_creation(&self) -> bool {
        self.to.is_none()
    }

    pub fn touches(&self, scope: &BTreeSet<Address>) -> bool {
        scope.contains(&self.from)
            || self.to.is_some_and(|a| scope.contains(&a))
            || self.receipt_contract_address.is_some_and(|a| scope.contains(&a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FrameType {
    Call,
    #[serde(rename = "DELEGATECALL")]
    DelegateCall,
    #[serde(rename = "STATICCALL")]
    StaticCall,
    Create,
    #[serde(rename = "SELFDESTRUCT")]
    SelfDestruct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Success,
    Revert,
}

/// One call frame of a nested call trace; children are in execution order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTraceFrame {
    pub frame_type: FrameType,
    pub from: Address,
    pub to: Address,
    pub value: Wei,
    pub input: Bytes,
    pub status: FrameStatus,
    #[serde(default)]
    pub children: Vec<RawTraceFrame>,
}

impl RawTraceFrame {
    pub fn frame_count(&self) -> usize {
        1 + self.children.iter().map(RawTraceFrame::frame_count).sum::<usize>()
    }

    /// Pre-order iterator over the frame tree.
    pub fn iter_preorder(&self) -> impl Iterator<Item = &RawTraceFrame> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let f = stack.pop()?;
            stack.extend(f.children.iter().rev());
            Some(f)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceDiff {
    pub address: Address,
    pub before: Wei,
    pub after: Wei,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractMetadata {
    pub verified_source: Option<String>,
    pub abi: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractCreation {
    pub creator: Address,
    pub tx_hash: TxHash,
}

#[derive(Debug, Clone, Copy)]
pub struct ChainConfig {
    /// Largest block span a single scan may cover.
    pub max_block_span: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            max_block_span: 50_000,
        }
    }
}

/// Typed chain operations over any [`Transport`].
pub struct ChainAccess<T> {
    transport: T,
    config: ChainConfig,
}

impl<T: Transport> ChainAccess<T> {
    pub fn new(transport: T) -> Self {
        Self::with_config(transport, ChainConfig::default())
    }

    pub fn with_config(transport: T, config: ChainConfig) -> Self {
        Self { transport, config }
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn call(&self, req: rpc::Request) -> Result<serde_json::Value, ChainError> {
        self.transport.request(req.0, &req.1)
    }

    fn check_range(&self, range: &BlockRange) -> Result<(), ChainError> {
        if range.start_block > range.end_block {
            return Err(ChainError::Scope("inverted block range".into()));
        }
        if range.span() > self.config.max_block_span {
            return Err(ChainError::Scope(format!(
                "range of {} blocks exceeds the configured maximum of {}",
                range.span(),
                self.config.max_block_span
            )));
        }
        Ok(())
    }

    /// All transactions of one block in block order, with created-contract
    /// addresses filled in for creations.
    pub fn block_transactions(&self, block: u64) -> Result<Vec<RawTransaction>, ChainError> {
        let mut txs = rpc::decode_block_transactions(block, self.call(rpc::block_by_number(block))?)?;
        for tx in txs.iter_mut().filter(|t| t.is_creation()) {
            tx.receipt_contract_address =
                rpc::decode_receipt_contract(&tx.tx_hash, self.call(rpc::receipt(&tx.tx_hash))?)?;
        }
        txs.sort_by_key(|t| t.tx_index);
        Ok(txs)
    }

    /// Scans `range` block by block and keeps transactions matching `keep`,
    /// ordered by `(block_number, tx_index)`.
    pub fn scan_transactions(
        &self,
        range: &BlockRange,
        keep: impl Fn(&RawTransaction) -> bool + Sync,
    ) -> Result<Vec<RawTransaction>, ChainError> {
        self.check_range(range)?;
        let blocks: Vec<u64> = range.blocks().collect();
        let per_block: Vec<Vec<RawTransaction>> = blocks
            .par_iter()
            .map(|&n| {
                self.block_transactions(n)
                    .map(|txs| txs.into_iter().filter(|t| keep(t)).collect())
            })
            .collect::<Result<_, _>>()?;
        let mut out: Vec<RawTransaction> = per_block.into_iter().flatten().collect();
        out.sort_by_key(|t| (t.block_number, t.tx_index));
        Ok(out)
    }

    /// Transactions in `range` whose sender, recipient or created contract is in `scope`.
    pub fn fetch_transactions(
        &self,
        scope: &BTreeSet<Address>,
        range: &BlockRange,
    ) -> Result<Vec<RawTransaction>, ChainError> {
        self.check_range(range)?;
        if scope.is_empty() {
            return Ok(Vec::new());
        }
        self.scan_transactions(range, |t| t.touches(scope))
    }

    pub fn fetch_transaction(&self, hash: &TxHash) -> Result<RawTransaction, ChainError> {
        let mut tx = rpc::decode_transaction(hash, self.call(rpc::transaction_by_hash(hash))?)?;
        if tx.is_creation() {
            tx.receipt_contract_address =
                rpc::decode_receipt_contract(hash, self.call(rpc::receipt(hash))?)?;
        }
        Ok(tx)
    }

    pub fn fetch_trace(&self, hash: &TxHash) -> Result<RawTraceFrame, ChainError> {
        let v = self.call(rpc::trace_transaction(hash))?;
        rpc::decode_call_frame(&format!("trace of {hash}"), v)
    }

    /// Runtime bytecode; empty for externally owned accounts.
    pub fn fetch_code(&self, address: &Address) -> Result<Bytes, ChainError> {
        rpc::decode_code(address, self.call(rpc::code(address))?)
    }

    /// One diff per requested address: balance at the parent block and after the transaction.
    pub fn fetch_balance_diffs(
        &self,
        hash: &TxHash,
        addresses: &BTreeSet<Address>,
    ) -> Result<Vec<BalanceDiff>, ChainError> {
        if addresses.is_empty() {
            return Ok(Vec::new());
        }
        let tx = rpc::decode_transaction(hash, self.call(rpc::transaction_by_hash(hash))?)?;
        let diff = self.call(rpc::prestate_diff(hash))?;
        if diff.is_null() {
            return Err(ChainError::NotFound(format!("prestate diff of {hash}")));
        }
        let parent = tx.block_number.saturating_sub(1);
        addresses
            .iter()
            .map(|a| {
                let (before, after) = match rpc::decode_prestate_balance(&diff, a)? {
                    Some(pair) => pair,
                    None => {
                        let b = rpc::decode_balance(self.call(rpc::balance(a, parent))?)?;
                        (b.clone(), b)
                    }
                };
                Ok(BalanceDiff {
                    address: *a,
                    before,
                    after,
                })
            })
            .collect()
    }

    pub fn fetch_contract_metadata(&self, address: &Address) -> Result<ContractMetadata, ChainError> {
        rpc::decode_metadata(self.call(rpc::explorer_source(address))?)
    }

    /// Creator and creation transaction as indexed by the explorer, when it knows them.
    pub fn fetch_contract_creation(&self, address: &Address) -> Result<Option<ContractCreation>, ChainError> {
        rpc::decode_creation(self.call(rpc::explorer_creation(address))?)
    }

    /// Traced `eth_call`-style execution against the latest state.
    pub fn trace_call(&self, to: &Address, data: &Bytes) -> Result<RawTraceFrame, ChainError> {
        let v = self.call(rpc::trace_call(to, data))?;
        rpc::decode_call_frame(&format!("traced call to {to}"), v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn store_with_blocks(txs: &[(u64, RawTransaction)]) -> (tempfile::TempDir, FixtureStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::open(dir.path());
        let mut by_block: std::collections::BTreeMap<u64, Vec<serde_json::Value>> = Default::default();
        for (n, tx) in txs {
            by_block.entry(*n).or_default().push(rpc::transaction_to_json(tx));
            if let Some(c) = tx.receipt_contract_address {
                store
                    .record_request(&rpc::receipt(&tx.tx_hash), json!({"contractAddress": c}))
                    .unwrap();
            }
        }
        for (n, list) in by_block {
            store
                .record_request(&rpc::block_by_number(n), json!({"number": n, "transactions": list}))
                .unwrap();
        }
        (dir, store)
    }

    fn tx(label: &str, block: u64, index: u64, from: &str, to: Option<&str>) -> RawTransaction {
        RawTransaction {
            tx_hash: TxHash::from_label(label),
            from: Address::from_label(from),
            to: to.map(Address::from_label),
            value: Wei::zero(),
            input: Bytes::default(),
            block_number: block,
            tx_index: index,
            receipt_contract_address: None,
        }
    }

    #[test]
    fn empty_scope_short_circuits() {
        let chain = ChainAccess::new(FixtureStore::open("/nonexistent"));
        let out = chain
            .fetch_transactions(&BTreeSet::new(), &BlockRange::new(1, 10).unwrap())
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn span_guard() {
        let chain = ChainAccess::with_config(
            FixtureStore::open("/nonexistent"),
            ChainConfig { max_block_span: 10 },
        );
        let scope: BTreeSet<_> = [Address::from_label("a")].into();
        let err = chain
            .fetch_transactions(&scope, &BlockRange::new(1, 11).unwrap())
            .unwrap_err();
        assert!(matches!(err, ChainError::Scope(_)));
        assert!(BlockRange::new(5, 4).is_err());
    }

    #[test]
    fn singleton_scope_single_block() {
        let t = tx("t1", 7, 0, "A", Some("B"));
        let (_d, store) = store_with_blocks(&[(7, t.clone())]);
        let chain = ChainAccess::new(store);
        let scope: BTreeSet<_> = [Address::from_label("A")].into();
        let out = chain.fetch_transactions(&scope, &BlockRange::new(7, 7).unwrap()).unwrap();
        assert_eq!(out, vec![t]);
    }

    #[test]
    fn creation_matches_through_receipt() {
        let mut c = tx("create", 3, 1, "X", None);
        c.receipt_contract_address = Some(Address::from_label("C"));
        let other = tx("other", 3, 0, "Y", Some("Z"));
        let (_d, store) = store_with_blocks(&[(3, c.clone()), (3, other)]);
        let chain = ChainAccess::new(store);
        let scope: BTreeSet<_> = [Address::from_label("C")].into();
        let out = chain.fetch_transactions(&scope, &BlockRange::new(3, 3).unwrap()).unwrap();
        assert_eq!(out, vec![c]);
    }

    #[test]
    fn missing_block_fixture_is_transport_class() {
        let dir = tempfile::tempdir().unwrap();
        let chain = ChainAccess::new(FixtureStore::open(dir.path()));
        let scope: BTreeSet<_> = [Address::from_label("A")].into();
        let err = chain
            .fetch_transactions(&scope, &BlockRange::new(1, 1).unwrap())
            .unwrap_err();
        assert!(err.is_transport());
    }
}
