//! Best available code for a contract: verified source, external decompiler
//! output optionally refined through the gateway, or bare bytecode.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wait_timeout::ChildExt;

use crate::chain::{ChainAccess, Semaphore, Transport};
use crate::gateway::{GatewayParams, LlmGateway};
use crate::primitives::Address;

pub const REFINE_TEMPLATE: &str = include_str!("../assets/refine_prompt.txt");
pub const DEFAULT_DECOMPILER_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_DECOMPILER_WORKERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    VerifiedSource,
    Decompiled,
    RefinedDecompiled,
    BytecodeOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceStep {
    /// `explorer`, `decompiler:<program>`, `gateway:<name>` or `cache`.
    pub tool: String,
    /// Seconds since the Unix epoch.
    pub at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeArtifact {
    pub address: Address,
    pub kind: ArtifactKind,
    pub text: Option<String>,
    pub abi: Option<String>,
    /// sha256 of the runtime bytecode.
    pub bytecode_hash: String,
    pub bytecode_len: usize,
    /// Append-only.
    pub provenance: Vec<ProvenanceStep>,
    pub diagnostics: Vec<String>,
}

pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Constant time source for reproducible output.
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecompileError {
    #[error("empty decompiler command")]
    EmptyCommand,
    #[error("unbalanced quote in decompiler command")]
    Quote,
    #[error("spawning {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("decompiler timed out after {0:?}")]
    Timeout(Duration),
    #[error("decompiler exited with {status}: {stderr}")]
    Failed { status: String, stderr: String },
    #[error("decompiler I/O: {0}")]
    Io(String),
}

/// Splits a command line on whitespace, honoring single and double quotes.
pub fn split_command(cmd: &str) -> Result<Vec<String>, DecompileError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_word = false;
    let mut quote: Option<char> = None;
    for ch in cmd.chars() {
        match quote {
            Some(q) if ch == q => quote = None,
            Some(_) => cur.push(ch),
            None if ch == '"' || ch == '\'' => {
                quote = Some(ch);
                in_word = true;
            }
            None if ch.is_whitespace() => {
                if in_word {
                    out.push(std::mem::take(&mut cur));
                    in_word = false;
                }
            }
            None => {
                cur.push(ch);
                in_word = true;
            }
        }
    }
    if quote.is_some() {
        return Err(DecompileError::Quote);
    }
    if in_word {
        out.push(cur);
    }
    if out.is_empty() {
        return Err(DecompileError::EmptyCommand);
    }
    Ok(out)
}

/// External decompiler behind a command template. `{bytecode}` expands to the
/// `0x` hex code, `{bytecode_file}` to a file holding it; with neither, the hex
/// is written to standard input.
pub struct Decompiler {
    template: String,
    timeout: Duration,
    pool: Semaphore,
}

impl Decompiler {
    pub fn new(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
            timeout: DEFAULT_DECOMPILER_TIMEOUT,
            pool: Semaphore::new(DEFAULT_DECOMPILER_WORKERS),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.pool = Semaphore::new(workers);
        self
    }

    pub fn program(&self) -> String {
        split_command(&self.template)
            .ok()
            .and_then(|v| v.into_iter().next())
            .unwrap_or_default()
    }

    pub fn decompile(&self, bytecode: &[u8]) -> Result<String, DecompileError> {
        let hex_code = format!("0x{}", hex::encode(bytecode));
        let argv = split_command(&self.template)?;
        let uses_file = argv.iter().any(|a| a.contains("{bytecode_file}"));
        let uses_arg = argv.iter().any(|a| a.contains("{bytecode}"));
        let file = if uses_file {
            let mut f = tempfile::NamedTempFile::new().map_err(|e| DecompileError::Io(e.to_string()))?;
            f.write_all(hex_code.as_bytes()).map_err(|e| DecompileError::Io(e.to_string()))?;
            Some(f)
        } else {
            None
        };
        let file_path = file.as_ref().map(|f| f.path().display().to_string()).unwrap_or_default();
        let argv: Vec<String> = argv
            .iter()
            .map(|a| a.replace("{bytecode_file}", &file_path).replace("{bytecode}", &hex_code))
            .collect();

        let _slot = self.pool.acquire();
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| DecompileError::Spawn {
                program: argv[0].clone(),
                source,
            })?;
        let mut stdin = child.stdin.take();
        let feed = (!uses_file && !uses_arg).then(|| hex_code.clone());
        let writer = std::thread::spawn(move || {
            if let (Some(s), Some(text)) = (stdin.as_mut(), feed) {
                let _ = s.write_all(text.as_bytes());
            }
        });
        let mut stdout = child.stdout.take().expect("piped");
        let mut stderr = child.stderr.take().expect("piped");
        let out_reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            buf
        });
        let err_reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });
        let status = match child.wait_timeout(self.timeout).map_err(|e| DecompileError::Io(e.to_string()))? {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(DecompileError::Timeout(self.timeout));
            }
        };
        let _ = writer.join();
        let out = out_reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(DecompileError::Failed {
                status: status.to_string(),
                stderr: String::from_utf8_lossy(&err).trim().to_string(),
            });
        }
        Ok(String::from_utf8_lossy(&out).into_owned())
    }
}

/// Artifacts stored at `<dir>/<address>/<bytecode hash>.json`.
#[derive(Debug, Clone)]
pub struct ArtifactCache {
    dir: PathBuf,
}

impl ArtifactCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, address: &Address, hash: &str) -> PathBuf {
        self.dir.join(address.to_string()).join(format!("{hash}.json"))
    }

    pub fn get(&self, address: &Address, hash: &str) -> Option<CodeArtifact> {
        let text = fs::read_to_string(self.path(address, hash)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, artifact: &CodeArtifact) -> std::io::Result<()> {
        let path = self.path(&artifact.address, &artifact.bytecode_hash);
        if let Some(d) = path.parent() {
            fs::create_dir_all(d)?;
        }
        let text = serde_json::to_string_pretty(artifact).map_err(std::io::Error::other)?;
        fs::write(path, text + "\n")
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Sends `pseudocode` through the refinement prompt. On gateway failure the
/// input comes back unchanged together with the error text.
pub fn refine(
    pseudocode: &str,
    gateway: &dyn LlmGateway,
    params: &GatewayParams,
) -> (String, Option<String>) {
    let prompt = REFINE_TEMPLATE.replace("{PSEUDOCODE}", pseudocode);
    match gateway.send(&prompt, params) {
        Ok(text) => (text, None),
        Err(e) => (pseudocode.to_string(), Some(format!("refinement skipped: {e}"))),
    }
}

pub struct Extractor<'a, T> {
    pub chain: &'a ChainAccess<T>,
    pub decompiler: Option<&'a Decompiler>,
    /// Refinement runs only when a gateway is set.
    pub gateway: Option<&'a dyn LlmGateway>,
    pub params: GatewayParams,
    pub cache: Option<ArtifactCache>,
    pub clock: &'a dyn Clock,
}

impl<'a, T: Transport> Extractor<'a, T> {
    pub fn new(chain: &'a ChainAccess<T>, clock: &'a dyn Clock) -> Self {
        Self {
            chain,
            decompiler: None,
            gateway: None,
            params: GatewayParams::default(),
            cache: None,
            clock,
        }
    }

    fn step(&self, tool: impl Into<String>, detail: Option<String>) -> ProvenanceStep {
        ProvenanceStep {
            tool: tool.into(),
            at: self.clock.now(),
            detail,
        }
    }

    /// Never fails: every address yields an artifact, at worst `bytecode_only`.
    pub fn extract(&self, address: &Address) -> CodeArtifact {
        let mut diagnostics = Vec::new();
        let code = self.chain.fetch_code(address).unwrap_or_else(|e| {
            diagnostics.push(format!("code unavailable: {e}"));
            Default::default()
        });
        let bytecode_hash = hex::encode(Sha256::digest(code.as_ref()));
        let mut art = CodeArtifact {
            address: *address,
            kind: ArtifactKind::BytecodeOnly,
            text: None,
            abi: None,
            bytecode_hash,
            bytecode_len: code.len(),
            provenance: Vec::new(),
            diagnostics,
        };

        match self.chain.fetch_contract_metadata(address) {
            Ok(meta) => {
                art.abi = meta.abi;
                if let Some(src) = meta.verified_source {
                    art.kind = ArtifactKind::VerifiedSource;
                    art.text = Some(src);
                    art.provenance.push(self.step("explorer", Some("verified source".into())));
                    return art;
                }
            }
            Err(e) => art.diagnostics.push(format!("metadata unavailable: {e}")),
        }
        if code.is_empty() {
            art.diagnostics.push("no runtime code".into());
            return art;
        }
        if let Some(cached) = self.cache.as_ref().and_then(|c| c.get(address, &art.bytecode_hash)) {
            return cached;
        }
        let Some(decompiler) = self.decompiler else {
            art.diagnostics.push("no decompiler configured".into());
            return art;
        };
        match decompiler.decompile(code.as_ref()) {
            Ok(text) => {
                art.kind = ArtifactKind::Decompiled;
                art.provenance
                    .push(self.step(format!("decompiler:{}", decompiler.program()), None));
                if let Some(gw) = self.gateway {
                    let (refined, diag) = refine(&text, gw, &self.params);
                    match diag {
                        None => {
                            art.kind = ArtifactKind::RefinedDecompiled;
                            art.provenance.push(self.step(format!("gateway:{}", gw.name()), None));
                            art.text = Some(refined);
                        }
                        Some(d) => {
                            art.diagnostics.push(d);
                            art.text = Some(text);
                        }
                    }
                } else {
                    art.text = Some(text);
                }
                if let Some(c) = &self.cache {
                    if let Err(e) = c.put(&art) {
                        log::warn!("caching artifact for {address}: {e}");
                    }
                }
            }
            Err(e) => art.diagnostics.push(format!("decompilation failed: {e}")),
        }
        art
    }
}
