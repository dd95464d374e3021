//! Chat-completion and embedding provider contracts.
//!
//! A provider turns an ordered list of role-tagged messages into response
//! text. Pipelines only ever see the [`ChatProvider`] trait; concrete
//! providers are an OpenAI-compatible HTTP client, a replay provider backed
//! by a recorded cassette, and a few test doubles.

mod embed;
mod http;
mod replay;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use embed::{EmbeddingBatch, EmbeddingProvider, HashingEmbedder, HttpEmbedder, ReplayEmbedder};
pub use http::{HttpChatProvider, HttpConfig};
pub use replay::{
    Cassette, CassetteEntry, EchoProvider, FnProvider, RecordingProvider, ReplayProvider,
    ScriptedProvider,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    /// Sampling temperature; 0 unless configured otherwise.
    #[serde(default)]
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 0.0,
        }
    }

    /// Stable content key used by the replay cassette.
    pub fn key(&self) -> String {
        let canonical = serde_json::to_vec(&self.messages).expect("messages serialize");
        hex::encode(Sha256::digest(&canonical))
    }

    /// All message texts joined, for transcripts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            out.push_str(&format!("[{role}]\n{}\n", m.content));
        }
        out
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("provider error{}: {message}", if *retryable { " (retryable)" } else { "" })]
pub struct ProviderError {
    pub retryable: bool,
    pub message: String,
}

impl ProviderError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            retryable: true,
            message: message.into(),
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            retryable: false,
            message: message.into(),
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            backoff_ms: 0,
        }
    }
}

/// Calls the provider, retrying retryable errors up to the policy bound.
/// Returns the response and the number of retries spent.
pub fn complete_with_retry<P: ChatProvider + ?Sized>(
    provider: &P,
    request: &ChatRequest,
    policy: RetryPolicy,
) -> Result<(String, u32), ProviderError> {
    let mut retries = 0;
    loop {
        match provider.complete(request) {
            Ok(text) => return Ok((text, retries)),
            Err(e) if e.retryable && retries < policy.max_retries => {
                retries += 1;
                log::warn!("provider call failed, retry {retries}: {}", e.message);
                if policy.backoff_ms > 0 {
                    std::thread::sleep(Duration::from_millis(policy.backoff_ms << (retries - 1)));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Spaces calls to the wrapped provider by at least `min_interval`, shared
/// by every worker holding a reference.
pub struct RateLimited<P> {
    inner: P,
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl<P> RateLimited<P> {
    pub fn new(inner: P, min_interval: Duration) -> Self {
        Self {
            inner,
            min_interval,
            last: Mutex::new(None),
        }
    }
}

impl<P: ChatProvider> ChatProvider for RateLimited<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        {
            let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(prev) = *last {
                let elapsed = prev.elapsed();
                if elapsed < self.min_interval {
                    std::thread::sleep(self.min_interval - elapsed);
                }
            }
            *last = Some(Instant::now());
        }
        self.inner.complete(request)
    }
}

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Always reports the same instant. Keeps transcripts reproducible.
#[derive(Debug, Default, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

/// Maps `f` over `items` on at most `parallelism` threads, preserving order.
/// A panic-free failure in one item never affects the others.
pub fn fan_out<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every slot filled")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retry_stops_at_bound() {
        let p = ScriptedProvider::new(vec![
            Err(ProviderError::retryable("timeout")),
            Err(ProviderError::retryable("timeout")),
            Err(ProviderError::retryable("timeout")),
            Ok("late".into()),
        ]);
        let req = ChatRequest::new(vec![ChatMessage::user("hi")]);
        let policy = RetryPolicy {
            max_retries: 2,
            backoff_ms: 0,
        };
        let err = complete_with_retry(&p, &req, policy).unwrap_err();
        assert!(err.retryable);
        assert_eq!(p.requests().len(), 3);
    }

    #[test]
    fn retry_does_not_repeat_fatal_errors() {
        let p = ScriptedProvider::new(vec![Err(ProviderError::fatal("bad key")), Ok("x".into())]);
        let req = ChatRequest::new(vec![ChatMessage::user("hi")]);
        assert!(complete_with_retry(&p, &req, RetryPolicy::default()).is_err());
        assert_eq!(p.requests().len(), 1);
    }

    #[test]
    fn fan_out_keeps_order() {
        let items: Vec<u32> = (0..100).collect();
        let out = fan_out(&items, 8, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn request_key_ignores_temperature() {
        let mut a = ChatRequest::new(vec![ChatMessage::user("q")]);
        let b = a.clone();
        a.temperature = 0.7;
        assert_eq!(a.key(), b.key());
    }
}
