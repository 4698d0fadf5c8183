//! Settings resolution: flags > environment > config file > defaults.
//! Clap folds flags and environment together; the file fills the rest.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tracekit::gateway::GatewayParams;
use tracekit::model::DEFAULT_CUTOFF;
use tracekit::subgraph::DEFAULT_K;

use crate::error::CliError;
use crate::GlobalArgs;

pub const DEFAULT_GATEWAY_URL: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_EXPLORER_URL: &str = "https://api.etherscan.io/api";
pub const DEFAULT_DECOMPILER_TIMEOUT_S: u64 = 120;

/// Keys accepted in the config file. Anything else is an error.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub rpc_url: Option<String>,
    pub explorer_url: Option<String>,
    pub explorer_key: Option<String>,
    pub fixtures: Option<PathBuf>,
    pub gateway_url: Option<String>,
    pub gateway_key: Option<String>,
    pub gateway_model: Option<String>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
    pub model: Option<PathBuf>,
    pub signatures: Option<PathBuf>,
    pub suspicious_set: Option<PathBuf>,
    pub k: Option<usize>,
    pub cutoff: Option<usize>,
    pub jobs: Option<usize>,
    pub max_block_span: Option<u64>,
    pub decompiler_cmd: Option<String>,
    pub decompiler_timeout_s: Option<u64>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))
    }

    /// Relative paths are taken relative to the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.fixtures, &mut cfg.model, &mut cfg.signatures, &mut cfg.suspicious_set]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Fully resolved settings; built before any command runs.
#[derive(Debug, Clone)]
pub struct Settings {
    pub rpc_url: Option<String>,
    pub explorer_url: Option<String>,
    pub explorer_key: Option<String>,
    pub fixtures: Option<PathBuf>,
    pub record: bool,
    pub gateway_url: String,
    pub gateway_key: Option<String>,
    pub gateway_params: GatewayParams,
    pub model: Option<PathBuf>,
    pub signatures: Option<PathBuf>,
    pub suspicious_set: Option<PathBuf>,
    pub k: usize,
    pub cutoff: usize,
    pub jobs: Option<usize>,
    pub max_block_span: u64,
    pub decompiler_cmd: Option<String>,
    pub decompiler_timeout_s: u64,
    pub out: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(g: &GlobalArgs, file: FileConfig) -> Result<Self, CliError> {
        let defaults = GatewayParams::default();
        let s = Settings {
            rpc_url: g.rpc_url.clone().or(file.rpc_url),
            explorer_url: g.explorer_url.clone().or(file.explorer_url),
            explorer_key: g.explorer_key.clone().or(file.explorer_key),
            fixtures: g.fixtures.clone().or(file.fixtures),
            record: g.record,
            gateway_url: g
                .gateway_url
                .clone()
                .or(file.gateway_url)
                .unwrap_or_else(|| DEFAULT_GATEWAY_URL.into()),
            gateway_key: g.gateway_key.clone().or(file.gateway_key).filter(|k| !k.is_empty()),
            gateway_params: GatewayParams {
                model: g.gateway_model.clone().or(file.gateway_model).unwrap_or(defaults.model),
                temperature: g.temperature.or(file.temperature).unwrap_or(defaults.temperature),
                top_p: g.top_p.or(file.top_p).unwrap_or(defaults.top_p),
                max_tokens: g.max_tokens.or(file.max_tokens).unwrap_or(defaults.max_tokens),
            },
            model: g.model.clone().or(file.model),
            signatures: g.signatures.clone().or(file.signatures),
            suspicious_set: g.suspicious_set.clone().or(file.suspicious_set),
            k: g.k.or(file.k).unwrap_or(DEFAULT_K),
            cutoff: g.cutoff.or(file.cutoff).unwrap_or(DEFAULT_CUTOFF),
            jobs: g.jobs.or(file.jobs),
            max_block_span: g.max_block_span.or(file.max_block_span).unwrap_or(50_000),
            decompiler_cmd: g.decompiler_cmd.clone().or(file.decompiler_cmd),
            decompiler_timeout_s: g
                .decompiler_timeout_s
                .or(file.decompiler_timeout_s)
                .unwrap_or(DEFAULT_DECOMPILER_TIMEOUT_S),
            out: g.out.clone(),
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.cutoff == 0 {
            return Err(CliError::usage("cutoff must be at least 1"));
        }
        if self.jobs == Some(0) {
            return Err(CliError::usage("jobs must be at least 1"));
        }
        if self.max_block_span == 0 {
            return Err(CliError::usage("max_block_span must be at least 1"));
        }
        if self.decompiler_timeout_s == 0 {
            return Err(CliError::usage("decompiler_timeout_s must be at least 1"));
        }
        if !(0.0..=2.0).contains(&self.gateway_params.temperature) {
            return Err(CliError::usage("temperature must lie in [0, 2]"));
        }
        if !(self.gateway_params.top_p > 0.0 && self.gateway_params.top_p <= 1.0) {
            return Err(CliError::usage("top_p must lie in (0, 1]"));
        }
        if self.record && (self.fixtures.is_none() || self.rpc_url.is_none()) {
            return Err(CliError::usage("--record needs both --fixtures and --rpc-url"));
        }
        Ok(())
    }

    /// Replaying fixtures, as opposed to talking to live endpoints.
    pub fn offline(&self) -> bool {
        self.fixtures.is_some() && !self.record
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("k = 2\nbogus = 1\n").is_err());
        let c = FileConfig::parse("# comment\nk = 2\ndecompiler_cmd = \"panoramix {bytecode}\"\n").unwrap();
        assert_eq!(c.k, Some(2));
        assert_eq!(c.decompiler_cmd.as_deref(), Some("panoramix {bytecode}"));
    }

    #[test]
    fn wrong_types_are_rejected() {
        assert!(FileConfig::parse("k = \"two\"\n").is_err());
        assert!(FileConfig::parse("decompiler_timeout_s = -1\n").is_err());
    }
}
