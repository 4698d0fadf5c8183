//! Content-addressed record/replay store for transport responses.
//!
//! Layout: `<root>/<method>/<sha256(method "\n" canonical-params)>.json`, each file
//! holding `{"method", "params", "result"}`. Params are canonicalized by
//! serializing with sorted object keys.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ChainError, Transport};

#[derive(Debug, Serialize, Deserialize)]
struct FixtureDoc {
    method: String,
    params: Value,
    result: Value,
}

pub fn fixture_key(method: &str, params: &Value) -> String {
    let mut h = Sha256::new();
    h.update(method.as_bytes());
    h.update(b"\n");
    h.update(canonical_json(params).as_bytes());
    hex::encode(h.finalize())
}

/// Serializes with object keys in sorted order.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

#[derive(Debug, Clone)]
pub struct FixtureStore {
    root: PathBuf,
}

impl FixtureStore {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, method: &str, params: &Value) -> PathBuf {
        self.root
            .join(method)
            .join(format!("{}.json", fixture_key(method, params)))
    }

    pub fn lookup(&self, method: &str, params: &Value) -> Result<Option<Value>, ChainError> {
        let path = self.path_for(method, params);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(ChainError::Io(format!("{}: {e}", path.display()))),
        };
        let doc: FixtureDoc = serde_json::from_str(&text)
            .map_err(|e| ChainError::decode(&path.display().to_string(), e.to_string()))?;
        Ok(Some(doc.result))
    }

    pub fn record(&self, method: &str, params: &Value, result: &Value) -> Result<(), ChainError> {
        let path = self.path_for(method, params);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| ChainError::Io(format!("{}: {e}", dir.display())))?;
        }
        let doc = FixtureDoc {
            method: method.to_string(),
            params: params.clone(),
            result: result.clone(),
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| ChainError::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| ChainError::Io(format!("{}: {e}", path.display())))
    }

    pub fn record_request(&self, req: &(&str, Value), result: Value) -> Result<(), ChainError> {
        self.record(req.0, &req.1, &result)
    }
}

impl Transport for FixtureStore {
    fn request(&self, method: &str, params: &Value) -> Result<Value, ChainError> {
        self.lookup(method, params)?
            .ok_or_else(|| ChainError::MissingFixture {
                method: method.to_string(),
                params: canonical_json(params),
            })
    }
}

/// Forwards to a live transport and stores every successful response.
pub struct Recording<T> {
    inner: T,
    store: FixtureStore,
}

impl<T: Transport> Recording<T> {
    pub fn new(inner: T, store: FixtureStore) -> Self {
        Self { inner, store }
    }
}

impl<T: Transport> Transport for Recording<T> {
    fn request(&self, method: &str, params: &Value) -> Result<Value, ChainError> {
        let result = self.inner.request(method, params)?;
        self.store.record(method, params, &result)?;
        Ok(result)
    }
}
