use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::http::{HttpChatProvider, HttpConfig};
use super::ProviderError;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub vectors: Vec<Vec<f64>>,
    pub model_tag: String,
}

/// Texts in, equal-length vectors out.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingBatch, ProviderError>;
}

/// Offline embedder: signed feature hashing of lowercase word unigrams and
/// bigrams. Deterministic, dependency-free, good enough to group
/// near-duplicate descriptions.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dims: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dims: 256 }
    }
}

impl HashingEmbedder {
    fn bucket(&self, token: &str) -> (usize, f64) {
        let digest = Sha256::digest(token.as_bytes());
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let h = u64::from_le_bytes(word);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.dims as u64) as usize, sign)
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let mut v = vec![0.0; self.dims];
        for w in &words {
            let (i, s) = self.bucket(w);
            v[i] += s;
        }
        for pair in words.windows(2) {
            let (i, s) = self.bucket(&format!("{} {}", pair[0], pair[1]));
            v[i] += 0.5 * s;
        }
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingBatch, ProviderError> {
        Ok(EmbeddingBatch {
            vectors: texts.iter().map(|t| self.embed_one(t)).collect(),
            model_tag: format!("hashing-{}", self.dims),
        })
    }
}

#[derive(Deserialize)]
struct ReplayLine {
    #[serde(alias = "id")]
    text: String,
    vector: Vec<f64>,
}

/// Looks vectors up by exact text from a JSONL file of
/// `{"text": ..., "vector": [...]}` lines.
#[derive(Debug, Clone)]
pub struct ReplayEmbedder {
    table: HashMap<String, Vec<f64>>,
    model_tag: String,
}

impl ReplayEmbedder {
    pub fn new(table: HashMap<String, Vec<f64>>, model_tag: impl Into<String>) -> Self {
        Self {
            table,
            model_tag: model_tag.into(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>, model_tag: impl Into<String>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = HashMap::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayLine = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
            table.insert(rec.text, rec.vector);
        }
        Ok(Self::new(table, model_tag))
    }
}

impl EmbeddingProvider for ReplayEmbedder {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingBatch, ProviderError> {
        let vectors = texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| ProviderError::fatal(format!("no recorded vector for '{t}'")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EmbeddingBatch {
            vectors,
            model_tag: self.model_tag.clone(),
        })
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(config: HttpConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::fatal(e.to_string()))?;
        Ok(Self { config, client })
    }
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingBatch, ProviderError> {
        let body = json!({ "model": self.config.model, "input": texts });
        let resp = HttpChatProvider::post(&self.client, &self.config, "embeddings", &body)?;
        let parsed: EmbeddingsResponse = resp
            .json()
            .map_err(|e| ProviderError::fatal(format!("malformed embeddings: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(ProviderError::fatal("embedding count mismatch"));
        }
        Ok(EmbeddingBatch {
            vectors: parsed.data.into_iter().map(|d| d.embedding).collect(),
            model_tag: self.config.model.clone(),
        })
    }
}
