//! Request shapes and response decoders shared by the live client, the fixture
//! store and the fixture builders.
//!
//! Explorer methods return normalized documents rather than raw explorer payloads:
//!
//! * `explorer_getsourcecode` → `{"source": string|null, "abi": string|null}`
//! * `explorer_getcontractcreation` → `{"creator": address, "tx_hash": hash}` or `null`

use serde::Deserialize;
use serde_json::{json, Map, Value};

use super::{
    BalanceDiff, ChainError, ContractCreation, ContractMetadata, FrameStatus, FrameType,
    RawTraceFrame, RawTransaction,
};
use crate::primitives::{parse_quantity_u64, quantity, Address, Bytes, TxHash, Wei};

pub type Request = (&'static str, Value);

pub fn block_by_number(n: u64) -> Request {
    ("eth_getBlockByNumber", json!([quantity(n), true]))
}

pub fn receipt(hash: &TxHash) -> Request {
    ("eth_getTransactionReceipt", json!([hash]))
}

pub fn transaction_by_hash(hash: &TxHash) -> Request {
    ("eth_getTransactionByHash", json!([hash]))
}

pub fn trace_transaction(hash: &TxHash) -> Request {
    ("debug_traceTransaction", json!([hash, {"tracer": "callTracer"}]))
}

pub fn prestate_diff(hash: &TxHash) -> Request {
    (
        "debug_traceTransaction",
        json!([hash, {"tracer": "prestateTracer", "tracerConfig": {"diffMode": true}}]),
    )
}

pub fn code(address: &Address) -> Request {
    ("eth_getCode", json!([address, "latest"]))
}

pub fn balance(address: &Address, block: u64) -> Request {
    ("eth_getBalance", json!([address, quantity(block)]))
}

pub fn trace_call(to: &Address, data: &Bytes) -> Request {
    (
        "debug_traceCall",
        json!([{"to": to, "data": data}, "latest", {"tracer": "callTracer"}]),
    )
}

pub fn explorer_source(address: &Address) -> Request {
    ("explorer_getsourcecode", json!({"address": address}))
}

pub fn explorer_creation(address: &Address) -> Request {
    ("explorer_getcontractcreation", json!({"address": address}))
}

fn decode<T: for<'de> Deserialize<'de>>(context: &str, v: Value) -> Result<T, ChainError> {
    serde_json::from_value(v).map_err(|e| ChainError::decode(context, e.to_string()))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct TxJson {
    hash: TxHash,
    from: Address,
    to: Option<Address>,
    #[serde(default)]
    value: Option<String>,
    #[serde(default)]
    input: Option<Bytes>,
    block_number: String,
    transaction_index: String,
}

impl TxJson {
    fn into_raw(self) -> Result<RawTransaction, ChainError> {
        let value = match self.value.as_deref() {
            Some(v) => Wei::from_quantity(v).map_err(|e| ChainError::decode("transaction.value", e.to_string()))?,
            None => Wei::zero(),
        };
        Ok(RawTransaction {
            tx_hash: self.hash,
            from: self.from,
            to: self.to,
            value,
            input: self.input.unwrap_or_default(),
            block_number: parse_quantity_u64(&self.block_number)
                .map_err(|e| ChainError::decode("transaction.blockNumber", e.to_string()))?,
            tx_index: parse_quantity_u64(&self.transaction_index)
                .map_err(|e| ChainError::decode("transaction.transactionIndex", e.to_string()))?,
            receipt_contract_address: None,
        })
    }
}

pub fn transaction_to_json(tx: &RawTransaction) -> Value {
    json!({
        "hash": tx.tx_hash,
        "from": tx.from,
        "to": tx.to,
        "value": tx.value.to_quantity(),
        "input": tx.input,
        "blockNumber": quantity(tx.block_number),
        "transactionIndex": quantity(tx.tx_index),
    })
}

/// Decodes the transactions of an `eth_getBlockByNumber(n, true)` response.
/// Receipt data is not part of the block and is filled in separately.
pub fn decode_block_transactions(n: u64, v: Value) -> Result<Vec<RawTransaction>, ChainError> {
    if v.is_null() {
        return Err(ChainError::NotFound(format!("block {n}")));
    }
    let txs = v
        .get("transactions")
        .cloned()
        .ok_or_else(|| ChainError::decode("block", "missing transactions"))?;
    let txs: Vec<TxJson> = decode("block.transactions", txs)?;
    txs.into_iter().map(TxJson::into_raw).collect()
}

pub fn decode_transaction(hash: &TxHash, v: Value) -> Result<RawTransaction, ChainError> {
    if v.is_null() {
        return Err(ChainError::NotFound(format!("transaction {hash}")));
    }
    decode::<TxJson>("transaction", v)?.into_raw()
}

/// Returns the `contractAddress` of a receipt.
pub fn decode_receipt_contract(hash: &TxHash, v: Value) -> Result<Option<Address>, ChainError> {
    if v.is_null() {
        return Err(ChainError::NotFound(format!("receipt {hash}")));
    }
    match v.get("contractAddress") {
        None | Some(Value::Null) => Ok(None),
        Some(a) => decode("receipt.contractAddress", a.clone()).map(Some),
    }
}

#[derive(Deserialize)]
struct FrameJson {
    #[serde(rename = "type")]
    kind: String,
    from: Address,
    #[serde(default)]
    to: Option<Address>,
    #[serde(default)]
    value: Option<String>,
    #[serde(default)]
    input: Option<Bytes>,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    calls: Vec<FrameJson>,
}

impl FrameJson {
    fn into_frame(self) -> Result<RawTraceFrame, ChainError> {
        let frame_type = match self.kind.to_ascii_uppercase().as_str() {
            "CALL" | "CALLCODE" => FrameType::Call,
            "DELEGATECALL" => FrameType::DelegateCall,
            "STATICCALL" => FrameType::StaticCall,
            "CREATE" | "CREATE2" => FrameType::Create,
            "SELFDESTRUCT" => FrameType::SelfDestruct,
            other => return Err(ChainError::decode("trace.type", format!("unknown frame type {other}"))),
        };
        let value = match self.value.as_deref() {
            Some(v) => Wei::from_quantity(v).map_err(|e| ChainError::decode("trace.value", e.to_string()))?,
            None => Wei::zero(),
        };
        let children = self
            .calls
            .into_iter()
            .map(FrameJson::into_frame)
            .collect::<Result<_, _>>()?;
        Ok(RawTraceFrame {
            frame_type,
            from: self.from,
            to: self.to.unwrap_or(Address::ZERO),
            value,
            input: self.input.unwrap_or_default(),
            status: if self.error.is_some() {
                FrameStatus::Revert
            } else {
                FrameStatus::Success
            },
            children,
        })
    }
}

/// Decodes a `callTracer` result into a frame tree.
pub fn decode_call_frame(context: &str, v: Value) -> Result<RawTraceFrame, ChainError> {
    if v.is_null() {
        return Err(ChainError::NotFound(context.to_string()));
    }
    decode::<FrameJson>(context, v)?.into_frame()
}

/// Encodes a frame tree in `callTracer` output form.
pub fn call_frame_to_json(frame: &RawTraceFrame) -> Value {
    let kind = match frame.frame_type {
        FrameType::Call => "CALL",
        FrameType::DelegateCall => "DELEGATECALL",
        FrameType::StaticCall => "STATICCALL",
        FrameType::Create => "CREATE",
        FrameType::SelfDestruct => "SELFDESTRUCT",
    };
    let mut m = Map::new();
    m.insert("type".into(), json!(kind));
    m.insert("from".into(), json!(frame.from));
    m.insert("to".into(), json!(frame.to));
    m.insert("value".into(), json!(frame.value.to_quantity()));
    m.insert("input".into(), json!(frame.input));
    if frame.status == FrameStatus::Revert {
        m.insert("error".into(), json!("execution reverted"));
    }
    if !frame.children.is_empty() {
        m.insert(
            "calls".into(),
            Value::Array(frame.children.iter().map(call_frame_to_json).collect()),
        );
    }
    Value::Object(m)
}

fn balance_of(side: &Value, address: &Address) -> Result<Option<Wei>, ChainError> {
    let Some(acct) = side.get(address.to_string()) else {
        return Ok(None);
    };
    match acct.get("balance").and_then(Value::as_str) {
        Some(b) => Wei::from_quantity(b)
            .map(Some)
            .map_err(|e| ChainError::decode("prestate.balance", e.to_string())),
        None => Ok(None),
    }
}

/// Balances `(before, after)` for `address` from a prestate diff; `None` when the
/// account was not touched by the transaction.
pub fn decode_prestate_balance(v: &Value, address: &Address) -> Result<Option<(Wei, Wei)>, ChainError> {
    let pre = v.get("pre").cloned().unwrap_or(Value::Null);
    let post = v.get("post").cloned().unwrap_or(Value::Null);
    let before = balance_of(&pre, address)?;
    let after = balance_of(&post, address)?;
    Ok(match (before, after) {
        (None, None) => None,
        (Some(b), None) => {
            // diffMode omits unchanged fields from `post`; a removed account is absent entirely
            let deleted = pre.get(address.to_string()).is_some() && post.get(address.to_string()).is_none();
            if deleted {
                Some((b, Wei::zero()))
            } else {
                Some((b.clone(), b))
            }
        }
        (None, Some(a)) => Some((Wei::zero(), a)),
        (Some(b), Some(a)) => Some((b, a)),
    })
}

pub fn prestate_diff_to_json(diffs: &[BalanceDiff]) -> Value {
    let mut pre = Map::new();
    let mut post = Map::new();
    for d in diffs {
        pre.insert(d.address.to_string(), json!({"balance": d.before.to_quantity()}));
        post.insert(d.address.to_string(), json!({"balance": d.after.to_quantity()}));
    }
    json!({"pre": pre, "post": post})
}

pub fn decode_code(address: &Address, v: Value) -> Result<Bytes, ChainError> {
    match v {
        Value::Null => Ok(Bytes::default()),
        v => decode(&format!("code of {address}"), v),
    }
}

pub fn decode_balance(v: Value) -> Result<Wei, ChainError> {
    let s = v
        .as_str()
        .ok_or_else(|| ChainError::decode("eth_getBalance", format!("expected quantity, got {v}")))?;
    Wei::from_quantity(s).map_err(|e| ChainError::decode("eth_getBalance", e.to_string()))
}

pub fn decode_metadata(v: Value) -> Result<ContractMetadata, ChainError> {
    if v.is_null() {
        return Ok(ContractMetadata::default());
    }
    let text = |k: &str| {
        v.get(k)
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
    };
    Ok(ContractMetadata {
        verified_source: text("source"),
        abi: text("abi"),
    })
}

pub fn metadata_to_json(m: &ContractMetadata) -> Value {
    json!({"source": m.verified_source, "abi": m.abi})
}

pub fn decode_creation(v: Value) -> Result<Option<ContractCreation>, ChainError> {
    if v.is_null() {
        return Ok(None);
    }
    decode("explorer creation", v).map(Some)
}

/// Turns a raw Etherscan-style response into the normalized explorer shapes.
pub fn normalize_explorer_response(method: &str, body: &Value) -> Result<Value, ChainError> {
    let status = body.get("status").and_then(Value::as_str).unwrap_or("0");
    let result = body.get("result").cloned().unwrap_or(Value::Null);
    if status != "1" {
        let msg = result.as_str().unwrap_or_default().to_ascii_lowercase();
        if msg.contains("rate limit") {
            return Err(ChainError::transport(format!("{method}: rate limited"), true));
        }
        if msg.contains("invalid api key") {
            return Err(ChainError::transport(format!("{method}: invalid API key"), false));
        }
        return Ok(Value::Null);
    }
    let first = result.get(0).cloned().unwrap_or(Value::Null);
    match method {
        "explorer_getsourcecode" => {
            let source = first
                .get("SourceCode")
                .and_then(Value::as_str)
                .filter(|s| !s.is_empty());
            let abi = first
                .get("ABI")
                .and_then(Value::as_str)
                .filter(|s| !s.is_empty() && !s.contains("not verified"));
            Ok(json!({"source": source, "abi": abi}))
        }
        "explorer_getcontractcreation" => {
            if first.is_null() {
                return Ok(Value::Null);
            }
            Ok(json!({
                "creator": first.get("contractCreator"),
                "tx_hash": first.get("txHash"),
            }))
        }
        other => Err(ChainError::decode(other, "unsupported explorer method")),
    }
}
