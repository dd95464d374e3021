use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ProviderError, Role};
use crate::error::{Error, Result};

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ProviderError>,
}

/// A recorded request/response log, one JSON entry per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn push(&mut self, request: &ChatRequest, outcome: &Result<String, ProviderError>) {
        let (response, error) = match outcome {
            Ok(r) => (Some(r.clone()), None),
            Err(e) => (None, Some(e.clone())),
        };
        self.entries.push(CassetteEntry {
            key: request.key(),
            request: request.clone(),
            response,
            error,
        });
    }
}

/// Answers each request from a cassette, matched by content key.
///
/// Several entries under one key are served in order; the last one repeats
/// once the queue is drained. Unknown requests fail non-retryably.
pub struct ReplayProvider {
    queues: Mutex<HashMap<String, VecDeque<Result<String, ProviderError>>>>,
}

impl ReplayProvider {
    pub fn new(cassette: Cassette) -> Self {
        let mut queues: HashMap<String, VecDeque<_>> = HashMap::new();
        for e in cassette.entries {
            let outcome = match (e.response, e.error) {
                (Some(r), _) => Ok(r),
                (None, Some(err)) => Err(err),
                (None, None) => Err(ProviderError::fatal("empty cassette entry")),
            };
            queues.entry(e.key).or_default().push_back(outcome);
        }
        Self {
            queues: Mutex::new(queues),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(Cassette::load(path)?))
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let key = request.key();
        let mut queues = self.queues.lock().unwrap_or_else(|e| e.into_inner());
        let queue = queues.get_mut(&key).ok_or_else(|| {
            ProviderError::fatal(format!("no recorded response for request {}", &key[..12]))
        })?;
        if queue.len() > 1 {
            queue.pop_front().expect("non-empty")
        } else {
            queue.front().cloned().expect("non-empty")
        }
    }
}

/// Wraps a provider and records every exchange into a cassette.
pub struct RecordingProvider<P> {
    inner: P,
    cassette: Mutex<Cassette>,
}

impl<P> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cassette: Mutex::new(Cassette::default()),
        }
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.cassette().save(path)
    }

    pub fn append_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        for e in &self.cassette().entries {
            let line = serde_json::to_string(e)?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let outcome = self.inner.complete(request);
        self.cassette
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request, &outcome);
        outcome
    }
}

/// Serves responses in FIFO order regardless of the request, and keeps
/// every request it saw. Errors once the script runs out.
pub struct ScriptedProvider {
    script: Mutex<VecDeque<Result<String, ProviderError>>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedProvider {
    pub fn new(script: Vec<Result<String, ProviderError>>) -> Self {
        Self {
            script: Mutex::new(script.into()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(responses.into_iter().map(|s| Ok(s.into())).collect())
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.seen
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request.clone());
        self.script
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::fatal("script exhausted")))
    }
}

/// Identity provider: repeats the most recent assistant turn, i.e. it stands
/// by whatever judgment it is asked to reconsider. With no assistant turn it
/// echoes the last user message.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoProvider;

impl ChatProvider for EchoProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::Assistant)
            .map(|m| m.content.clone())
            .or_else(|| request.last_user().map(str::to_owned))
            .ok_or_else(|| ProviderError::fatal("empty request"))
    }
}

/// Adapts a closure into a provider.
pub struct FnProvider<F>(pub F);

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (self.0)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::ChatMessage;

    #[test]
    fn replay_matches_by_content_and_repeats_last() {
        let a = ChatRequest::new(vec![ChatMessage::user("a")]);
        let b = ChatRequest::new(vec![ChatMessage::user("b")]);
        let mut cassette = Cassette::default();
        cassette.push(&a, &Ok("first".into()));
        cassette.push(&a, &Ok("second".into()));
        cassette.push(&b, &Ok("bee".into()));
        let replay = ReplayProvider::new(cassette);
        assert_eq!(replay.complete(&b).unwrap(), "bee");
        assert_eq!(replay.complete(&a).unwrap(), "first");
        assert_eq!(replay.complete(&a).unwrap(), "second");
        assert_eq!(replay.complete(&a).unwrap(), "second");
        let c = ChatRequest::new(vec![ChatMessage::user("c")]);
        assert!(!replay.complete(&c).unwrap_err().retryable);
    }

    #[test]
    fn recording_then_replay_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.jsonl");
        let rec = RecordingProvider::new(FnProvider(|r: &ChatRequest| {
            Ok(format!("len={}", r.last_user().unwrap_or("").len()))
        }));
        let req = ChatRequest::new(vec![ChatMessage::user("hello")]);
        assert_eq!(rec.complete(&req).unwrap(), "len=5");
        rec.save(&path).unwrap();
        let replay = ReplayProvider::from_file(&path).unwrap();
        assert_eq!(replay.complete(&req).unwrap(), "len=5");
    }

    #[test]
    fn echo_stands_by_previous_answer() {
        let req = ChatRequest::new(vec![
            ChatMessage::user("relevant?"),
            ChatMessage::assistant("yes"),
            ChatMessage::user("reconsider"),
        ]);
        assert_eq!(EchoProvider.complete(&req).unwrap(), "yes");
    }
}
