//! Operator configuration file and provider selection.

use std::path::Path;
use std::sync::Arc;

use normlens::provider::{
    ChatProvider, EchoProvider, EmbeddingProvider, HashingEmbedder, HttpChatProvider, HttpConfig, HttpEmbedder,
    ReplayEmbedder, ReplayProvider, RetryPolicy, ScriptedProvider,
};
use normlens::verification::BatchConfig;
use normlens::{DiscoveryConfig, Error, Result};
use serde::{Deserialize, Serialize};

/// Name of the config file looked up inside a project directory.
pub const PROJECT_CONFIG: &str = "normlens.toml";

/// Keys of the config file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub k: Option<usize>,
    pub tau: f64,
    pub lambda: f64,
    pub threshold: f64,
    pub parallelism: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Chat provider: `echo`, `http`, `replay:<cassette>` or `scripted:<json array>`.
    pub provider: Option<String>,
    /// Embedder: `hashing`, `hashing:<dims>`, `http` or `replay:<jsonl>`.
    pub embedder: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        let d = DiscoveryConfig::default();
        let b = BatchConfig::default();
        Self {
            k: d.k,
            tau: d.tau,
            lambda: d.lambda,
            threshold: b.threshold,
            parallelism: b.parallelism,
            seed: d.seed,
            max_iters: d.max_iters,
            max_retries: b.retry.max_retries,
            backoff_ms: b.retry.backoff_ms,
            provider: None,
            embedder: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    /// Reads `path`, or `<project>/normlens.toml` when no path is given and
    /// that file exists, or falls back to defaults.
    pub fn load(path: Option<&Path>, project: &Path) -> Result<Self> {
        let candidate = match path {
            Some(p) => p.to_path_buf(),
            None => {
                let p = project.join(PROJECT_CONFIG);
                if !p.exists() {
                    return Ok(Self::default());
                }
                p
            }
        };
        let text = std::fs::read_to_string(&candidate).map_err(|e| Error::io(&candidate, e))?;
        Self::parse(&text)
    }

    pub fn discovery(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            k: self.k,
            tau: self.tau,
            lambda: self.lambda,
            seed: self.seed,
            max_iters: self.max_iters,
        }
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_ms: self.backoff_ms,
        }
    }

    pub fn batch(&self) -> BatchConfig {
        BatchConfig {
            threshold: self.threshold,
            parallelism: self.parallelism.max(1),
            retry: self.retry(),
        }
    }
}

/// Builds a chat provider from its spec string.
pub fn chat_provider(spec: &str) -> Result<Arc<dyn ChatProvider>> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind.trim() {
        "echo" => Ok(Arc::new(EchoProvider)),
        "replay" => Ok(Arc::new(ReplayProvider::from_file(arg)?)),
        "scripted" => {
            let text = std::fs::read_to_string(arg).map_err(|e| Error::io(arg, e))?;
            let responses: Vec<String> = serde_json::from_str(&text)?;
            Ok(Arc::new(ScriptedProvider::responses(responses)))
        }
        "http" => {
            let config = HttpConfig::from_env(HttpConfig::DEFAULT_KEY_VAR).ok_or_else(|| {
                Error::InvalidArgument(format!("http provider needs {} to be set", HttpConfig::BASE_URL_VAR))
            })?;
            Ok(Arc::new(HttpChatProvider::new(config)?))
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown provider '{other}' (expected echo, http, replay:<file> or scripted:<file>)"
        ))),
    }
}

/// Builds an embedder from its spec string.
pub fn embedder(spec: &str) -> Result<Arc<dyn EmbeddingProvider>> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind.trim() {
        "hashing" if arg.is_empty() => Ok(Arc::new(HashingEmbedder::default())),
        "hashing" => {
            let dims: usize = arg
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad hashing dimension '{arg}'")))?;
            Ok(Arc::new(HashingEmbedder { dims }))
        }
        "replay" => Ok(Arc::new(ReplayEmbedder::from_file(arg, "replay")?)),
        "http" => {
            let mut config = HttpConfig::from_env(HttpConfig::DEFAULT_KEY_VAR).ok_or_else(|| {
                Error::InvalidArgument(format!("http embedder needs {} to be set", HttpConfig::BASE_URL_VAR))
            })?;
            if let Ok(model) = std::env::var("NORMLENS_EMBED_MODEL") {
                config.model = model;
            }
            Ok(Arc::new(HttpEmbedder::new(config)?))
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown embedder '{other}' (expected hashing, http or replay:<file>)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let c = Config::parse("k = 8\nseed = 7\n").unwrap();
        assert_eq!(c.k, Some(8));
        assert_eq!(c.seed, 7);
        assert_eq!(c.tau, 0.7);
        assert_eq!(c.parallelism, 4);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(Config::parse("kk = 1").is_err());
    }

    #[test]
    fn provider_specs() {
        assert!(chat_provider("echo").is_ok());
        assert!(chat_provider("gpt").is_err());
        assert!(embedder("hashing:64").is_ok());
        assert!(embedder("hashing:x").is_err());
    }
}
