//! Deterministic synthetic data: a labeled incident benchmark built from call
//! trees with injected attack motifs, and a builder that materializes a small
//! chain history as a replayable fixture store.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::chain::{
    rpc, BlockRange, ChainError, ContractCreation, ContractMetadata, FixtureStore, FrameStatus, FrameType,
    RawTraceFrame, RawTransaction,
};
use crate::detect::probe_selector;
use crate::disasm::minimal_proxy_code;
use crate::features::{Label, LabeledPath, PathSample};
use crate::keccak::keccak256;
use crate::pipeline::AnalysisScope;
use crate::primitives::{quantity, Address, Bytes, TxHash, Wei};
use crate::trace::{flatten, SignatureDb};
use crate::tree::{build_forest, enumerate_paths, CallForest, ExecPath};

/// Every named method the generators emit. Attack entry points use raw
/// selectors that are deliberately absent.
pub const METHOD_NAMES: &[&str] = &[
    "transfer",
    "transferFrom",
    "approve",
    "balanceOf",
    "swap",
    "swapExactTokensForTokens",
    "addLiquidity",
    "mint",
    "getReserves",
    "deposit",
    "withdraw",
    "borrow",
    "getPrice",
    "getReward",
    "flashLoan",
    "onFlashLoan",
    "multicall",
    "execute",
    "initialize",
    "setOwner",
    "sweepToken",
    "deploy",
    "run",
];

pub fn method_signature(name: &str) -> String {
    format!("{name}()")
}

/// Calldata for `method`: empty for `fallback`, the raw bytes for a `0x`
/// selector, otherwise the selector of `name()`.
pub fn method_input(method: &str) -> Bytes {
    if method == "fallback" {
        return Bytes::default();
    }
    if let Some(hex) = method.strip_prefix("0x") {
        return Bytes(hex::decode(hex).expect("literal selector is hex"));
    }
    Bytes(keccak256(method_signature(method).as_bytes())[..4].to_vec())
}

pub fn signature_db() -> SignatureDb {
    let mut db = SignatureDb::new();
    for name in METHOD_NAMES {
        db.insert_signature(&method_signature(name));
    }
    db
}

pub fn frame(kind: FrameType, from: Address, to: Address, method: &str) -> RawTraceFrame {
    RawTraceFrame {
        frame_type: kind,
        from,
        to,
        value: Wei::zero(),
        input: if kind == FrameType::Create {
            Bytes::default()
        } else {
            method_input(method)
        },
        status: FrameStatus::Success,
        children: Vec::new(),
    }
}

pub fn call(from: Address, to: Address, method: &str) -> RawTraceFrame {
    frame(FrameType::Call, from, to, method)
}

pub fn staticcall(from: Address, to: Address, method: &str) -> RawTraceFrame {
    frame(FrameType::StaticCall, from, to, method)
}

pub fn with(mut f: RawTraceFrame, children: Vec<RawTraceFrame>) -> RawTraceFrame {
    f.children = children;
    f
}

pub fn valued(mut f: RawTraceFrame, wei: u128) -> RawTraceFrame {
    f.value = Wei::from_u128(wei);
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AttackFamily {
    FlashLoanOracle,
    Reentrancy,
    AccessControl,
    ArbitraryCall,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 4] = [
        AttackFamily::FlashLoanOracle,
        AttackFamily::Reentrancy,
        AttackFamily::AccessControl,
        AttackFamily::ArbitraryCall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::FlashLoanOracle => "flash-loan-oracle",
            AttackFamily::Reentrancy => "reentrancy",
            AttackFamily::AccessControl => "access-control",
            AttackFamily::ArbitraryCall => "arbitrary-call",
        }
    }

    /// A path of an attack transaction is ground truth iff its signature
    /// contains one of these.
    pub fn motif(self) -> &'static [&'static str] {
        match self {
            AttackFamily::FlashLoanOracle => &["onFlashLoan"],
            AttackFamily::Reentrancy => &["withdraw"],
            AttackFamily::AccessControl => &["initialize", "setOwner", "sweepToken"],
            AttackFamily::ArbitraryCall => &["execute"],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTx {
    pub tx_hash: TxHash,
    pub root: RawTraceFrame,
    pub attack: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticIncident {
    pub id: String,
    pub family: AttackFamily,
    pub txs: Vec<SyntheticTx>,
}

/// One reconstructed transaction of a synthetic incident.
pub struct SyntheticForest {
    pub tx_hash: TxHash,
    pub attack: bool,
    pub forest: CallForest,
    pub paths: Vec<ExecPath>,
}

impl SyntheticIncident {
    pub fn forests(&self, db: &SignatureDb) -> Vec<SyntheticForest> {
        self.txs
            .iter()
            .map(|t| {
                let forest = build_forest(&flatten(&t.root, db));
                let paths = enumerate_paths(&forest);
                SyntheticForest {
                    tx_hash: t.tx_hash,
                    attack: t.attack,
                    forest,
                    paths,
                }
            })
            .collect()
    }

    pub fn labeled_paths(&self, db: &SignatureDb) -> Vec<LabeledPath> {
        let motif = self.family.motif();
        let mut out = Vec::new();
        for f in self.forests(db) {
            for p in &f.paths {
                let s = PathSample::from_path(&f.forest, p, &f.tx_hash);
                let hit = f.attack && s.sig.iter().any(|m| motif.contains(&m.as_str()));
                out.push(LabeledPath {
                    incident_id: self.id.clone(),
                    tx_hash: f.tx_hash,
                    path_key: s.path_key,
                    sig: s.sig,
                    fanout: s.fanout,
                    label: if hit { Label::Attack } else { Label::Benign },
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchmarkConfig {
    pub incidents: usize,
    pub seed: u64,
    pub benign_txs: (usize, usize),
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            incidents: 12,
            seed: 0x7ace,
            benign_txs: (30, 45),
        }
    }
}

struct Actors {
    id: String,
}

impl Actors {
    fn a(&self, label: &str) -> Address {
        Address::from_label(&format!("{}/{label}", self.id))
    }
}

fn benign_tx(rng: &mut ChaCha8Rng, ac: &Actors) -> RawTraceFrame {
    let user = ac.a(&format!("user{}", rng.random_range(0..12)));
    let (t0, t1, pair, router, victim) = (ac.a("token0"), ac.a("token1"), ac.a("pair"), ac.a("router"), ac.a("victim"));
    match rng.random_range(0..100) {
        0..=14 => call(user, t0, "transfer"),
        15..=21 => call(user, t1, "approve"),
        22..=41 => with(
            call(user, router, "swapExactTokensForTokens"),
            vec![
                call(router, t0, "transferFrom"),
                with(
                    call(router, pair, "swap"),
                    vec![
                        call(pair, t1, "transfer"),
                        staticcall(pair, t0, "balanceOf"),
                        staticcall(pair, t1, "balanceOf"),
                    ],
                ),
            ],
        ),
        42..=49 => with(
            call(user, router, "addLiquidity"),
            vec![
                call(router, t0, "transferFrom"),
                call(router, t1, "transferFrom"),
                with(
                    call(router, pair, "mint"),
                    vec![staticcall(pair, t0, "balanceOf"), staticcall(pair, t1, "balanceOf")],
                ),
            ],
        ),
        50..=61 => with(
            call(user, victim, "deposit"),
            vec![call(victim, t0, "transferFrom"), staticcall(victim, t0, "balanceOf")],
        ),
        62..=69 => with(
            call(user, victim, "withdraw"),
            vec![
                staticcall(victim, t0, "balanceOf"),
                valued(call(victim, user, "fallback"), 1_000_000_000_000_000),
            ],
        ),
        70..=76 => with(
            call(user, victim, "borrow"),
            vec![
                with(
                    staticcall(victim, ac.a("oracle"), "getPrice"),
                    vec![staticcall(ac.a("oracle"), pair, "getReserves")],
                ),
                call(victim, t1, "transfer"),
            ],
        ),
        77..=84 => with(call(user, ac.a("staking"), "getReward"), vec![call(ac.a("staking"), t1, "transfer")]),
        _ => {
            let agg = ac.a("aggregator");
            with(
                call(user, agg, "multicall"),
                vec![
                    with(
                        call(agg, agg, "execute"),
                        vec![with(call(agg, pair, "swap"), vec![call(pair, t1, "transfer")])],
                    ),
                    call(agg, t1, "transfer"),
                ],
            )
        }
    }
}

/// Legitimate uses of the tokens a family's motif relies on.
fn decoy_tx(family: AttackFamily, ac: &Actors) -> RawTraceFrame {
    let (t0, pair) = (ac.a("token0"), ac.a("pair"));
    match family {
        AttackFamily::FlashLoanOracle => {
            let (bot, lender) = (ac.a("arb-bot"), ac.a("lender"));
            with(
                call(ac.a("keeper"), bot, "run"),
                vec![with(
                    call(bot, lender, "flashLoan"),
                    vec![
                        call(lender, t0, "transfer"),
                        with(
                            call(lender, bot, "onFlashLoan"),
                            vec![
                                with(call(bot, pair, "swap"), vec![call(pair, t0, "transfer")]),
                                call(bot, t0, "transfer"),
                            ],
                        ),
                    ],
                )],
            )
        }
        AttackFamily::Reentrancy => with(
            call(ac.a("user0"), ac.a("victim"), "withdraw"),
            vec![call(ac.a("victim"), t0, "transfer")],
        ),
        AttackFamily::AccessControl => {
            let (factory, fresh) = (ac.a("factory"), ac.a("fresh-pool"));
            with(
                call(ac.a("deployer"), factory, "deploy"),
                vec![frame(FrameType::Create, factory, fresh, "create"), call(factory, fresh, "initialize")],
            )
        }
        AttackFamily::ArbitraryCall => {
            let safe = ac.a("safe");
            with(call(ac.a("owner"), safe, "execute"), vec![call(safe, t0, "transfer")])
        }
    }
}

fn attack_tx(family: AttackFamily, rng: &mut ChaCha8Rng, ac: &Actors) -> RawTraceFrame {
    let (eoa, atk, victim) = (ac.a("attacker"), ac.a("attack-contract"), ac.a("victim"));
    let (t0, t1, pair) = (ac.a("token0"), ac.a("token1"), ac.a("pair"));
    let entry = format!("0x{:08x}", rng.random::<u32>());
    let profit = call(atk, t1, "transfer");
    let body = match family {
        AttackFamily::FlashLoanOracle => {
            let lender = ac.a("lender");
            let oracle = ac.a("oracle");
            let mut inner = Vec::new();
            for _ in 0..rng.random_range(1..=3) {
                inner.push(with(
                    call(atk, pair, "swap"),
                    vec![call(pair, t1, "transfer"), staticcall(pair, t0, "balanceOf")],
                ));
            }
            inner.push(with(
                call(atk, victim, "borrow"),
                vec![
                    with(staticcall(victim, oracle, "getPrice"), vec![staticcall(oracle, pair, "getReserves")]),
                    call(victim, t1, "transfer"),
                ],
            ));
            inner.push(call(atk, t0, "transfer"));
            vec![
                with(
                    call(atk, lender, "flashLoan"),
                    vec![call(lender, t0, "transfer"), with(call(lender, atk, "onFlashLoan"), inner)],
                ),
                profit,
            ]
        }
        AttackFamily::Reentrancy => {
            let depth = rng.random_range(2..=5);
            let mut chain = valued(call(victim, atk, "fallback"), 1_000_000_000_000_000_000);
            for level in 0..depth {
                let w = with(
                    call(atk, victim, "withdraw"),
                    vec![staticcall(victim, t0, "balanceOf"), chain],
                );
                chain = if level + 1 == depth {
                    w
                } else {
                    with(valued(call(victim, atk, "fallback"), 1_000_000_000_000_000_000), vec![w])
                };
            }
            vec![
                with(
                    valued(call(atk, victim, "deposit"), 1_000_000_000_000_000_000),
                    vec![staticcall(victim, t0, "balanceOf")],
                ),
                chain,
                profit,
            ]
        }
        AttackFamily::AccessControl => {
            let mut calls = vec![call(atk, victim, "initialize")];
            if rng.random_bool(0.5) {
                calls.push(call(atk, victim, "setOwner"));
            }
            for t in [t0, t1].into_iter().take(rng.random_range(1..=2)) {
                calls.push(with(
                    call(atk, victim, "sweepToken"),
                    vec![staticcall(victim, t, "balanceOf"), call(victim, t, "transfer")],
                ));
            }
            calls.push(profit);
            calls
        }
        AttackFamily::ArbitraryCall => {
            let mut calls: Vec<RawTraceFrame> = (0..rng.random_range(2..=8))
                .map(|_| with(call(atk, victim, "execute"), vec![call(victim, t0, "transferFrom")]))
                .collect();
            calls.push(with(call(atk, pair, "swap"), vec![call(pair, t1, "transfer")]));
            calls.push(profit);
            calls
        }
    };
    with(call(eoa, atk, &entry), body)
}

/// Incident `i` uses family `i mod 4`; everything else is drawn from a
/// ChaCha stream seeded by `(seed, i)`.
pub fn generate_incident(cfg: &BenchmarkConfig, i: usize) -> SyntheticIncident {
    let family = AttackFamily::ALL[i % AttackFamily::ALL.len()];
    let id = format!("synthetic-{i:02}-{}", family.name());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let ac = Actors { id: id.clone() };
    let n = rng.random_range(cfg.benign_txs.0..=cfg.benign_txs.1);
    let mut roots: Vec<(RawTraceFrame, bool)> = (0..n).map(|_| (benign_tx(&mut rng, &ac), false)).collect();
    for _ in 0..rng.random_range(1..=2) {
        let at = rng.random_range(0..=roots.len());
        roots.insert(at, (decoy_tx(family, &ac), false));
    }
    let attacks = if family == AttackFamily::Reentrancy { 1 } else { rng.random_range(1..=2) };
    for _ in 0..attacks {
        let at = rng.random_range(roots.len() / 2..=roots.len());
        roots.insert(at, (attack_tx(family, &mut rng, &ac), true));
    }
    let txs = roots
        .into_iter()
        .enumerate()
        .map(|(k, (root, attack))| SyntheticTx {
            tx_hash: TxHash::from_label(&format!("{id}/tx{k}")),
            root,
            attack,
        })
        .collect();
    SyntheticIncident { id, family, txs }
}

pub fn generate_benchmark(cfg: &BenchmarkConfig) -> Vec<SyntheticIncident> {
    (0..cfg.incidents).map(|i| generate_incident(cfg, i)).collect()
}

/// The labeled path dataset of the default benchmark.
pub fn benchmark_dataset(cfg: &BenchmarkConfig) -> Vec<LabeledPath> {
    let db = signature_db();
    generate_benchmark(cfg)
        .iter()
        .flat_map(|inc| inc.labeled_paths(&db))
        .collect()
}

/// A random forest of call frames with its ground-truth shape. Node `i` is
/// the `i`-th frame in pre-order across all roots.
#[derive(Debug, Clone)]
pub struct RandomForest {
    pub roots: Vec<RawTraceFrame>,
    pub parents: Vec<Option<usize>>,
    pub methods: Vec<String>,
}

/// Draws a forest of exactly `nodes` frames. Every frame calls a fresh
/// address, so the shape is recoverable from the pre-order sequence alone.
/// Methods come from `alphabet` (names resolvable through [`signature_db`],
/// `fallback`, or `0x` selectors).
pub fn random_forest(rng: &mut impl Rng, nodes: usize, alphabet: &[&str]) -> RandomForest {
    let mut parents = Vec::with_capacity(nodes);
    let mut open: Vec<usize> = Vec::new();
    for i in 0..nodes {
        // Attach below some node of the current rightmost path, or start a new root.
        let keep = rng.random_range(0..=open.len());
        open.truncate(keep);
        parents.push(open.last().copied());
        open.push(i);
    }
    let methods: Vec<String> = (0..nodes)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string())
        .collect();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (i, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(i);
        }
    }
    let addr = |i: usize| Address::from_label(&format!("random-forest/node{i}"));
    fn build(i: usize, from: Address, children: &[Vec<usize>], methods: &[String], addr: &dyn Fn(usize) -> Address) -> RawTraceFrame {
        let me = addr(i);
        let kids = children[i].iter().map(|&c| build(c, me, children, methods, addr)).collect();
        with(call(from, me, &methods[i]), kids)
    }
    let roots = (0..nodes)
        .filter(|&i| parents[i].is_none())
        .map(|i| build(i, Address::from_label(&format!("random-forest/eoa{i}")), &children, &methods, &addr))
        .collect();
    RandomForest { roots, parents, methods }
}

/// Gas charged to the sender of every built transaction.
pub const GAS_FEE_WEI: u128 = 21_000 * 1_000_000_000;

struct BuiltTx {
    tx: RawTransaction,
    trace: RawTraceFrame,
}

/// Accumulates blocks, contracts and explorer data, then writes every
/// request the pipeline can issue against them into a [`FixtureStore`].
#[derive(Default)]
pub struct ChainBuilder {
    blocks: BTreeMap<u64, Vec<BuiltTx>>,
    code: BTreeMap<Address, Bytes>,
    metadata: BTreeMap<Address, ContractMetadata>,
    creations: BTreeMap<Address, ContractCreation>,
    hidden_creations: BTreeSet<Address>,
    funding: BTreeMap<Address, u128>,
    probes: BTreeMap<Address, Address>,
    known: BTreeSet<Address>,
    counter: usize,
}

impl ChainBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fund(&mut self, address: Address, wei: u128) {
        *self.funding.entry(address).or_default() += wei;
        self.known.insert(address);
    }

    fn next_hash(&mut self, block: u64) -> TxHash {
        self.counter += 1;
        TxHash::from_label(&format!("fixture-tx/{block}/{}", self.counter))
    }

    fn push(&mut self, block: u64, from: Address, to: Option<Address>, input: Bytes, trace: RawTraceFrame) -> TxHash {
        let hash = self.next_hash(block);
        let txs = self.blocks.entry(block).or_default();
        let created = match trace.frame_type {
            FrameType::Create if to.is_none() => Some(trace.to),
            _ => None,
        };
        self.known.extend(trace.iter_preorder().flat_map(|f| [f.from, f.to]));
        txs.push(BuiltTx {
            tx: RawTransaction {
                tx_hash: hash,
                from,
                to,
                value: trace.value.clone(),
                input,
                block_number: block,
                tx_index: txs.len() as u64,
                receipt_contract_address: created,
            },
            trace,
        });
        hash
    }

    /// Contract creation transaction from `from`; the address derives from `label`.
    pub fn deploy(&mut self, block: u64, from: Address, label: &str, code: Vec<u8>) -> (Address, TxHash) {
        let addr = Address::from_label(label);
        let trace = frame(FrameType::Create, from, addr, "create");
        let hash = self.push(block, from, None, Bytes(code.clone()), trace);
        self.code.insert(addr, Bytes(code));
        self.creations.insert(addr, ContractCreation { creator: from, tx_hash: hash });
        (addr, hash)
    }

    /// `eoa` calls `factory.deploy()`, which creates the contract internally.
    pub fn deploy_via(&mut self, block: u64, eoa: Address, factory: Address, label: &str, code: Vec<u8>) -> (Address, TxHash) {
        let addr = Address::from_label(label);
        let trace = with(call(eoa, factory, "deploy"), vec![frame(FrameType::Create, factory, addr, "create")]);
        let hash = self.push(block, eoa, Some(factory), method_input("deploy"), trace);
        self.code.insert(addr, Bytes(code));
        self.creations.insert(addr, ContractCreation { creator: factory, tx_hash: hash });
        (addr, hash)
    }

    /// Makes the explorer answer "unknown" for `address`, forcing a block scan.
    pub fn hide_creation(&mut self, address: Address) {
        self.hidden_creations.insert(address);
    }

    pub fn transact(&mut self, block: u64, trace: RawTraceFrame) -> TxHash {
        let (from, to, input) = (trace.from, trace.to, trace.input.clone());
        self.push(block, from, Some(to), input, trace)
    }

    pub fn verify(&mut self, address: Address, source: &str, abi: &str) {
        self.metadata.insert(
            address,
            ContractMetadata {
                verified_source: Some(source.to_string()),
                abi: Some(abi.to_string()),
            },
        );
    }

    /// Records the probe trace of a non-minimal proxy delegating to `implementation`.
    pub fn probe_delegates_to(&mut self, proxy: Address, implementation: Address) {
        self.probes.insert(proxy, implementation);
        self.known.insert(implementation);
    }

    pub fn set_code(&mut self, address: Address, code: Vec<u8>) {
        self.code.insert(address, Bytes(code));
        self.known.insert(address);
    }

    pub fn transactions(&self) -> impl Iterator<Item = &RawTransaction> {
        self.blocks.values().flatten().map(|b| &b.tx)
    }

    /// Writes blocks `range` (empty ones included) and all per-address data.
    pub fn write(&self, store: &FixtureStore, range: &BlockRange) -> Result<(), ChainError> {
        let mut balances = self.funding.clone();
        for n in range.blocks() {
            let txs: &[BuiltTx] = self.blocks.get(&n).map(Vec::as_slice).unwrap_or_default();
            let block = json!({
                "number": quantity(n),
                "hash": TxHash::from_label(&format!("fixture-block/{n}")),
                "transactions": txs.iter().map(|b| rpc::transaction_to_json(&b.tx)).collect::<Vec<_>>(),
            });
            store.record_request(&rpc::block_by_number(n), block)?;
            let parent = balances.clone();
            for b in txs {
                self.write_tx(store, b, &mut balances, &parent)?;
            }
        }
        for a in &self.known {
            let code = self.code.get(a).cloned().unwrap_or_default();
            store.record_request(&rpc::code(a), json!(code))?;
            let meta = self.metadata.get(a).cloned().unwrap_or_default();
            store.record_request(&rpc::explorer_source(a), rpc::metadata_to_json(&meta))?;
            let creation = match self.creations.get(a) {
                Some(c) if !self.hidden_creations.contains(a) => json!(c),
                _ => Value::Null,
            };
            store.record_request(&rpc::explorer_creation(a), creation)?;
        }
        for (proxy, imp) in &self.probes {
            let code = self.code.get(proxy).map(|c| c.0.as_slice()).unwrap_or_default();
            let sel = probe_selector(proxy, code);
            let data = Bytes(sel.0.to_vec());
            let mut delegate = frame(FrameType::DelegateCall, *proxy, *imp, "fallback");
            delegate.input = data.clone();
            let mut outer = call(Address::ZERO, *proxy, "fallback");
            outer.input = data.clone();
            store.record_request(&rpc::trace_call(proxy, &data), rpc::call_frame_to_json(&with(outer, vec![delegate])))?;
        }
        Ok(())
    }

    fn write_tx(
        &self,
        store: &FixtureStore,
        b: &BuiltTx,
        balances: &mut BTreeMap<Address, u128>,
        parent: &BTreeMap<Address, u128>,
    ) -> Result<(), ChainError> {
        let tx = &b.tx;
        store.record_request(&rpc::transaction_by_hash(&tx.tx_hash), rpc::transaction_to_json(tx))?;
        store.record_request(
            &rpc::receipt(&tx.tx_hash),
            json!({"transactionHash": tx.tx_hash, "status": "0x1", "contractAddress": tx.receipt_contract_address}),
        )?;
        store.record_request(&rpc::trace_transaction(&tx.tx_hash), rpc::call_frame_to_json(&b.trace))?;

        let before = balances.clone();
        let mut moves = Vec::new();
        collect_value_moves(&b.trace, &mut moves);
        let bal = |m: &BTreeMap<Address, u128>, a: &Address| m.get(a).copied().unwrap_or(0);
        let debit = |m: &mut BTreeMap<Address, u128>, a: Address, v: u128| {
            let cur = m.entry(a).or_default();
            *cur = cur
                .checked_sub(v)
                .unwrap_or_else(|| panic!("fixture account {a} cannot pay {v} wei; fund it first"));
        };
        debit(balances, tx.from, GAS_FEE_WEI);
        for (from, to, v) in moves {
            debit(balances, from, v);
            *balances.entry(to).or_default() += v;
        }
        let touched: BTreeSet<Address> = b.trace.iter_preorder().flat_map(|f| [f.from, f.to]).collect();
        let mut pre = serde_json::Map::new();
        let mut post = serde_json::Map::new();
        for a in &touched {
            let (x, y) = (bal(&before, a), bal(balances, a));
            if x != y {
                pre.insert(a.to_string(), json!({"balance": Wei::from_u128(x).to_quantity()}));
                post.insert(a.to_string(), json!({"balance": Wei::from_u128(y).to_quantity()}));
            } else {
                let parent_block = tx.block_number.saturating_sub(1);
                store.record_request(&rpc::balance(a, parent_block), json!(Wei::from_u128(bal(parent, a)).to_quantity()))?;
            }
        }
        store.record_request(&rpc::prestate_diff(&tx.tx_hash), json!({"pre": pre, "post": post}))
    }
}

/// Value transfers of successful frames; a reverted frame rolls back its subtree.
fn collect_value_moves(f: &RawTraceFrame, out: &mut Vec<(Address, Address, u128)>) {
    if f.status == FrameStatus::Revert {
        return;
    }
    let v: u128 = f.value.as_biguint().try_into().expect("fixture values fit in u128");
    if v > 0 && f.frame_type != FrameType::DelegateCall {
        out.push((f.from, f.to, v));
    }
    for c in &f.children {
        collect_value_moves(c, out);
    }
}

/// Dispatcher-shaped runtime code: a PUSH4/EQ/JUMPI entry per method and,
/// when `delegating`, a storage-slot DELEGATECALL fallback.
pub fn contract_code(methods: &[&str], delegating: bool) -> Vec<u8> {
    let mut code = vec![0x60, 0x80, 0x60, 0x40, 0x52, 0x60, 0x00, 0x35, 0x60, 0xe0, 0x1c];
    for (i, m) in methods.iter().enumerate() {
        code.push(0x80);
        code.push(0x63);
        code.extend_from_slice(&method_input(m).0);
        code.push(0x14);
        code.extend_from_slice(&[0x61, 0x01, i as u8, 0x57]);
    }
    if delegating {
        // calldatacopy; sload(implementation slot); delegatecall; return or revert
        code.extend_from_slice(&[0x36, 0x60, 0x00, 0x80, 0x37, 0x7f]);
        code.extend_from_slice(&keccak256(b"eip1967.proxy.implementation"));
        code.extend_from_slice(&[0x54, 0x60, 0x00, 0x80, 0x36, 0x60, 0x00, 0x84, 0x5a, 0xf4, 0x3d, 0x60, 0x00, 0x80, 0x3e, 0x15, 0x60, 0x00, 0x57, 0x3d, 0x60, 0x00, 0xf3, 0x5b, 0x3d, 0x60, 0x00, 0xfd]);
    } else {
        code.extend_from_slice(&[0x60, 0x00, 0x80, 0xfd]);
    }
    code
}

/// Named actors of the end-to-end incident fixture.
#[derive(Debug, Clone)]
pub struct IncidentScenario {
    pub scope: AnalysisScope,
    pub deployer: Address,
    pub attacker: Address,
    pub attack_contract: Address,
    pub token: Address,
    pub vault_proxy: Address,
    pub vault_impl: Address,
    pub factory: Address,
    pub strategy: Address,
    pub strategy_impl: Address,
    pub attack_tx: TxHash,
    pub transfer_tx: TxHash,
    /// The injected call the attack path runs through.
    pub injected_method: &'static str,
    pub block_range: BlockRange,
}

pub const TOKEN_SOURCE: &str = "contract Token {\n    mapping(address => uint256) public balanceOf;\n    function transfer(address to, uint256 amount) external returns (bool) {\n        balanceOf[msg.sender] -= amount;\n        balanceOf[to] += amount;\n        return true;\n    }\n}\n";
pub const TOKEN_ABI: &str = r#"[{"type":"function","name":"transfer","inputs":[{"name":"to","type":"address"},{"name":"amount","type":"uint256"}]},{"type":"function","name":"balanceOf","inputs":[{"name":"","type":"address"}]}]"#;

/// A vault behind an EIP-1167 proxy is re-initialized and swept by an
/// attack contract, amid seeded benign traffic.
pub fn incident_scenario() -> (ChainBuilder, IncidentScenario) {
    let mut b = ChainBuilder::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1ced);
    let deployer = Address::from_label("scenario/deployer");
    let attacker = Address::from_label("scenario/attacker");
    let users: Vec<Address> = (0..6).map(|i| Address::from_label(&format!("scenario/user{i}"))).collect();
    for a in users.iter().chain([&deployer, &attacker]) {
        b.fund(*a, 100_000_000_000_000_000_000);
    }

    let token_methods = ["transfer", "transferFrom", "approve", "balanceOf"];
    let vault_methods = ["deposit", "withdraw", "initialize", "sweepToken"];
    let (token, _) = b.deploy(100, deployer, "scenario/token", contract_code(&token_methods, false));
    let (vault_impl, _) = b.deploy(100, deployer, "scenario/vault-impl", contract_code(&vault_methods, false));
    let (vault_proxy, _) = b.deploy(100, deployer, "scenario/vault-proxy", minimal_proxy_code(&vault_impl));
    let (strategy_impl, _) = b.deploy(100, deployer, "scenario/strategy-impl", contract_code(&["run"], false));
    let (factory, _) = b.deploy(100, deployer, "scenario/factory", contract_code(&["deploy"], false));
    let (strategy, _) = b.deploy_via(101, deployer, factory, "scenario/strategy", contract_code(&["run"], true));
    b.probe_delegates_to(strategy, strategy_impl);
    b.verify(token, TOKEN_SOURCE, TOKEN_ABI);

    let delegate = |from: Address, method: &str| frame(FrameType::DelegateCall, from, vault_impl, method);
    for block in 102..=105u64 {
        for _ in 0..rng.random_range(5..=8) {
            let user = users[rng.random_range(0..users.len())];
            let trace = match rng.random_range(0..6) {
                0 => call(user, token, "transfer"),
                1 => call(user, token, "approve"),
                2 | 3 => with(
                    call(user, vault_proxy, "deposit"),
                    vec![
                        delegate(vault_proxy, "deposit"),
                        call(vault_proxy, token, "transferFrom"),
                        staticcall(vault_proxy, token, "balanceOf"),
                    ],
                ),
                4 => with(
                    call(user, vault_proxy, "withdraw"),
                    vec![
                        delegate(vault_proxy, "withdraw"),
                        staticcall(vault_proxy, token, "balanceOf"),
                        call(vault_proxy, token, "transfer"),
                    ],
                ),
                _ => with(call(user, strategy, "run"), vec![frame(FrameType::DelegateCall, strategy, strategy_impl, "run")]),
            };
            b.transact(block, trace);
        }
    }
    // Plain ether transfer used by the balance-diff checks.
    let transfer_tx = b.transact(105, valued(call(users[0], users[1], "fallback"), 1_000_000_000_000_000_000));

    let (attack_contract, _) = b.deploy(106, attacker, "scenario/attack-contract", contract_code(&[], false));
    let attack = with(
        call(attacker, attack_contract, "0x5c2a1f37"),
        vec![
            with(call(attack_contract, vault_proxy, "initialize"), vec![delegate(vault_proxy, "initialize")]),
            with(
                call(attack_contract, vault_proxy, "sweepToken"),
                vec![
                    delegate(vault_proxy, "sweepToken"),
                    staticcall(vault_proxy, token, "balanceOf"),
                    call(vault_proxy, token, "transfer"),
                ],
            ),
            call(attack_contract, token, "transfer"),
        ],
    );
    let attack_tx = b.transact(107, attack);
    b.transact(108, valued(call(attacker, Address::from_label("scenario/mixer"), "fallback"), 5_000_000_000_000_000_000));

    let block_range = BlockRange::new(100, 110).expect("static range");
    let scope = AnalysisScope {
        contracts: vec![vault_proxy, attack_contract],
        block_range,
        label: Some("vault-reinitialization".into()),
    };
    (
        b,
        IncidentScenario {
            scope,
            deployer,
            attacker,
            attack_contract,
            token,
            vault_proxy,
            vault_impl,
            factory,
            strategy,
            strategy_impl,
            attack_tx,
            transfer_tx,
            injected_method: "sweepToken",
            block_range,
        },
    )
}

/// Writes the incident scenario into `store` and returns its actors.
pub fn write_incident_fixtures(store: &FixtureStore) -> Result<IncidentScenario, ChainError> {
    let (b, s) = incident_scenario();
    b.write(store, &s.block_range)?;
    Ok(s)
}
