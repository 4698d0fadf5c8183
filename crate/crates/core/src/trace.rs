//! Flat call sequence and selector resolution.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::{FrameStatus, FrameType, RawTraceFrame};
use crate::primitives::{Address, Selector, Wei};

/// One low-level call event in pre-order position `index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub index: usize,
    pub from: Address,
    pub to: Address,
    pub selector: Option<Selector>,
    /// Never empty.
    pub method: String,
    pub value: Wei,
    pub call_type: FrameType,
    pub status: FrameStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum SignatureDbError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Selector → canonical signature text, e.g. `transfer(address,uint256)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignatureDb {
    entries: HashMap<Selector, String>,
}

impl SignatureDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SignatureDbError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SignatureDbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses `<8 hex>\t<signature>` lines. Blank lines are skipped; on duplicate
    /// selectors the first entry wins.
    pub fn parse(text: &str) -> Result<Self, SignatureDbError> {
        let mut db = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.trim().is_empty() {
                continue;
            }
            let (hex_part, sig) = raw.split_once('\t').ok_or_else(|| SignatureDbError::Parse {
                line,
                message: "expected <selector>TAB<signature>".into(),
            })?;
            let hex_part = hex_part.trim();
            if hex_part.len() != 8 {
                return Err(SignatureDbError::Parse {
                    line,
                    message: format!("selector {hex_part:?} is not 8 hex characters"),
                });
            }
            let mut bytes = [0u8; 4];
            hex::decode_to_slice(hex_part, &mut bytes).map_err(|_| SignatureDbError::Parse {
                line,
                message: format!("selector {hex_part:?} is not hex"),
            })?;
            let sig = sig.trim();
            if sig.is_empty() {
                return Err(SignatureDbError::Parse {
                    line,
                    message: "empty signature".into(),
                });
            }
            db.entries.entry(Selector(bytes)).or_insert_with(|| sig.to_string());
        }
        Ok(db)
    }

    pub fn insert(&mut self, selector: Selector, signature: impl Into<String>) {
        self.entries.entry(selector).or_insert_with(|| signature.into());
    }

    /// Adds `signature` under its keccak-derived selector.
    pub fn insert_signature(&mut self, signature: &str) {
        self.insert(Selector(crate::keccak::selector(signature)), signature);
    }

    pub fn get(&self, selector: &Selector) -> Option<&str> {
        self.entries.get(selector).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lines in the load format, sorted by selector.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<_> = self.entries.iter().collect();
        rows.sort();
        rows.into_iter()
            .map(|(s, sig)| format!("{}\t{sig}\n", hex::encode(s.0)))
            .collect()
    }
}

/// Argument list stripped: `transfer(address,uint256)` → `transfer`.
pub fn bare_name(signature: &str) -> &str {
    signature.split('(').next().unwrap_or(signature).trim()
}

pub fn resolve_selector(input: &[u8], db: &SignatureDb) -> (Option<Selector>, String) {
    let Some(sel) = input.get(..4).and_then(Selector::from_slice) else {
        return (None, "fallback".to_string());
    };
    let method = match db.get(&sel).map(bare_name) {
        Some(name) if !name.is_empty() => name.to_string(),
        _ => sel.to_string(),
    };
    (Some(sel), method)
}

fn record_for(index: usize, frame: &RawTraceFrame, db: &SignatureDb) -> CallRecord {
    let (selector, method) = match frame.frame_type {
        FrameType::Create => (None, "create".to_string()),
        FrameType::SelfDestruct => (None, "selfdestruct".to_string()),
        _ => resolve_selector(frame.input.as_ref(), db),
    };
    CallRecord {
        index,
        from: frame.from,
        to: frame.to,
        selector,
        method,
        value: frame.value.clone(),
        call_type: frame.frame_type,
        status: frame.status,
    }
}

/// Pre-order flattening; record `i` is the `i`-th frame visited.
pub fn flatten(root: &RawTraceFrame, db: &SignatureDb) -> Vec<CallRecord> {
    root.iter_preorder()
        .enumerate()
        .map(|(i, f)| record_for(i, f, db))
        .collect()
}

/// Flattens several top-level frames into one consecutively indexed sequence.
pub fn flatten_forest<'a>(roots: impl IntoIterator<Item = &'a RawTraceFrame>, db: &SignatureDb) -> Vec<CallRecord> {
    roots
        .into_iter()
        .flat_map(RawTraceFrame::iter_preorder)
        .enumerate()
        .map(|(i, f)| record_for(i, f, db))
        .collect()
}
