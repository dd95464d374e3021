use serde::{Deserialize, Serialize};

/// One provider exchange inside a transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub step: String,
    pub request: String,
    pub response: String,
    pub started_ms: u64,
    pub finished_ms: u64,
    pub retries: u32,
}

/// Verbatim audit record of one run against one conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderTranscript {
    pub conversation_id: String,
    pub run: String,
    pub steps: Vec<TranscriptStep>,
}

impl ProviderTranscript {
    pub fn key(&self) -> String {
        format!("{}#{}", self.conversation_id, self.run)
    }

    pub fn response(&self, step: &str) -> Option<&str> {
        self.steps
            .iter()
            .rev()
            .find(|s| s.step == step)
            .map(|s| s.response.as_str())
    }
}
