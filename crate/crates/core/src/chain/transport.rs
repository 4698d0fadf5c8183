use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::ChainError;

/// A JSON-RPC-shaped request channel.
///
/// Node methods (`eth_*`, `debug_*`) are forwarded to the node endpoint. Methods
/// prefixed `explorer_` are answered by the block explorer and return the
/// normalized shapes documented in [`super::rpc`].
pub trait Transport: Send + Sync {
    fn request(&self, method: &str, params: &Value) -> Result<Value, ChainError>;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn request(&self, method: &str, params: &Value) -> Result<Value, ChainError> {
        (**self).request(method, params)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn request(&self, method: &str, params: &Value) -> Result<Value, ChainError> {
        (**self).request(method, params)
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn request(&self, method: &str, params: &Value) -> Result<Value, ChainError> {
        (**self).request(method, params)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    /// Runs `op`, retrying transport-class failures with exponential backoff.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ChainError>) -> Result<T, ChainError> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.attempts => {
                    log::debug!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Counting semaphore bounding in-flight requests.
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub(crate) struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub(crate) fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct ExplorerEndpoint {
    /// Etherscan-compatible API base, e.g. `https://api.etherscan.io/api`.
    pub url: String,
    pub api_key: Option<String>,
}

/// Live transport: JSON-RPC over HTTP to a node plus an Etherscan-style explorer.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    rpc_url: Option<String>,
    explorer: Option<ExplorerEndpoint>,
    limiter: Semaphore,
    retry: RetryPolicy,
    next_id: AtomicU64,
}

impl HttpTransport {
    pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

    pub fn new(rpc_url: Option<String>, explorer: Option<ExplorerEndpoint>) -> Result<Self, ChainError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ChainError::transport(format!("building HTTP client: {e}"), false))?;
        Ok(Self {
            client,
            rpc_url,
            explorer,
            limiter: Semaphore::new(Self::DEFAULT_MAX_IN_FLIGHT),
            retry: RetryPolicy::default(),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = Semaphore::new(n);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn node_call(&self, method: &str, params: &Value) -> Result<Value, ChainError> {
        let url = self
            .rpc_url
            .as_deref()
            .ok_or_else(|| ChainError::transport("no node RPC URL configured", false))?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let body = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        let _permit = self.limiter.acquire();
        let resp = self
            .client
            .post(url)
            .json(&body)
            .send()
            .map_err(|e| ChainError::transport(format!("{method}: {e}"), true))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ChainError::transport(format!("{method}: HTTP {status}"), true));
        }
        if !status.is_success() {
            return Err(ChainError::transport(format!("{method}: HTTP {status}"), false));
        }
        let mut v: Value = resp
            .json()
            .map_err(|e| ChainError::decode(method, e.to_string()))?;
        if let Some(err) = v.get("error") {
            let msg = err
                .get("message")
                .and_then(Value::as_str)
                .unwrap_or("unknown error")
                .to_string();
            let lower = msg.to_ascii_lowercase();
            if lower.contains("not found") || lower.contains("unknown transaction") {
                return Err(ChainError::NotFound(format!("{method}: {msg}")));
            }
            return Err(ChainError::transport(format!("{method}: {msg}"), false));
        }
        Ok(v.get_mut("result").map(Value::take).unwrap_or(Value::Null))
    }

    fn explorer_call(&self, method: &str, params: &Value) -> Result<Value, ChainError> {
        let explorer = self
            .explorer
            .as_ref()
            .ok_or_else(|| ChainError::transport("no explorer endpoint configured", false))?;
        let address = params
            .get("address")
            .and_then(Value::as_str)
            .ok_or_else(|| ChainError::decode(method, "missing address parameter"))?;
        let mut query: Vec<(&str, &str)> = vec![("module", "contract")];
        match method {
            "explorer_getsourcecode" => {
                query.push(("action", "getsourcecode"));
                query.push(("address", address));
            }
            "explorer_getcontractcreation" => {
                query.push(("action", "getcontractcreation"));
                query.push(("contractaddresses", address));
            }
            other => return Err(ChainError::decode(other, "unsupported explorer method")),
        }
        if let Some(key) = explorer.api_key.as_deref() {
            query.push(("apikey", key));
        }
        let url = reqwest::Url::parse_with_params(&explorer.url, &query)
            .map_err(|e| ChainError::transport(format!("explorer URL: {e}"), false))?;
        let _permit = self.limiter.acquire();
        let resp = self
            .client
            .get(url)
            .send()
            .map_err(|e| ChainError::transport(format!("{method}: {e}"), true))?;
        let status = resp.status();
        if status.as_u16() == 404 {
            return Ok(Value::Null);
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ChainError::transport(format!("{method}: HTTP {status}"), true));
        }
        let body: Value = resp
            .json()
            .map_err(|e| ChainError::decode(method, e.to_string()))?;
        super::rpc::normalize_explorer_response(method, &body)
    }
}

impl Transport for HttpTransport {
    fn request(&self, method: &str, params: &Value) -> Result<Value, ChainError> {
        self.retry.run(|| {
            if method.starts_with("explorer_") {
                self.explorer_call(method, params)
            } else {
                self.node_call(method, params)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn retries_only_transport_errors() {
        let policy = RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        };
        let calls = Cell::new(0);
        let r: Result<(), _> = policy.run(|| {
            calls.set(calls.get() + 1);
            Err(ChainError::transport("boom", true))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 3);

        calls.set(0);
        let r: Result<(), _> = policy.run(|| {
            calls.set(calls.get() + 1);
            Err(ChainError::NotFound("x".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 1);

        calls.set(0);
        let r = policy.run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 2 {
                Err(ChainError::transport("flaky", true))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r.unwrap(), 7);
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        use std::sync::atomic::AtomicUsize;
        let sem = Semaphore::new(2);
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = sem.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn missing_endpoint_is_not_retried() {
        let t = HttpTransport::new(None, None).unwrap().with_retry(RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        });
        let err = t.request("eth_getCode", &json!([])).unwrap_err();
        assert!(!err.is_retryable());
        let err = t
            .request("explorer_getsourcecode", &json!({"address": "0x00"}))
            .unwrap_err();
        assert!(matches!(err, ChainError::Transport { .. }));
    }
}
