use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::elicitation::{parse_relationships, parse_summary, ProviderTranscript, TranscriptStep};
use crate::error::{Error, Result};
use crate::provider::{complete_with_retry, ChatMessage, ChatProvider, ChatRequest, Clock, RetryPolicy};
use crate::schema::{Attribute, Conversation, Provenance, SettingsRecord, Summary};
use crate::store::FailureRecord;

pub const FILL_STAGE: &str = "fill";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillField {
    Relationships,
    Settings,
    Summary,
}

impl FillField {
    pub const ALL: [FillField; 3] = [FillField::Relationships, FillField::Settings, FillField::Summary];

    pub fn as_str(self) -> &'static str {
        match self {
            FillField::Relationships => "relationships",
            FillField::Settings => "settings",
            FillField::Summary => "summary",
        }
    }

    fn present(self, c: &Conversation) -> bool {
        match self {
            FillField::Relationships => !c.relationships.is_empty(),
            FillField::Settings => !c.settings.is_empty(),
            FillField::Summary => c.summary.is_some(),
        }
    }

    fn prompt(self) -> &'static str {
        match self {
            FillField::Relationships => {
                "List the people mentioned in the conversation and the social relationships between them."
            }
            FillField::Settings => {
                "In which field of social life does this conversation take place (for example family, workplace, school, commerce, neighborhood)? Answer as `Field: <field>`, optionally followed by lines like `Location: <place>`."
            }
            FillField::Summary => "Summarize the conversation in 3-4 sentences.",
        }
    }

    fn repair(self) -> &'static str {
        match self {
            FillField::Relationships => {
                "Answer again with one line per pair of speakers, in the form `A: B - relationship`, using the speaker names exactly as they appear."
            }
            FillField::Settings => "Answer again with a single line of the form `Field: <field>`.",
            FillField::Summary => "Answer again with the summary only, as plain sentences.",
        }
    }
}

impl fmt::Display for FillField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FillField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FillField::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown fill field '{s}' (expected relationships, settings or summary)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillOutcome {
    pub conversation: Conversation,
    pub transcript: ProviderTranscript,
    pub failures: Vec<FailureRecord>,
}

impl FillOutcome {
    pub fn changed(&self, original: &Conversation) -> bool {
        self.conversation != *original
    }
}

enum Filled {
    Relationships(Vec<crate::schema::Relationship>),
    Settings(SettingsRecord),
    Summary(Summary),
}

fn interpret(field: FillField, text: &str, c: &Conversation) -> Option<Filled> {
    match field {
        FillField::Relationships => {
            let (rels, _) = parse_relationships(text, &c.speakers());
            (!rels.is_empty()).then_some(Filled::Relationships(rels))
        }
        FillField::Settings => parse_settings(text).map(Filled::Settings),
        FillField::Summary => parse_summary(text).map(|text| {
            Filled::Summary(Summary {
                text,
                provenance: Provenance::ProviderFilled,
            })
        }),
    }
}

/// `Field: x` (or `Domain:` / `Scene:`) sets the field; other `Key: value`
/// lines become attributes.
fn parse_settings(text: &str) -> Option<SettingsRecord> {
    let mut s = SettingsRecord::default();
    for line in text.lines() {
        let (line, _) = crate::elicitation::clean_line(line);
        let Some((k, v)) = line.split_once(':') else {
            continue;
        };
        let key = k.trim().to_ascii_lowercase();
        let value = v.trim().trim_matches('`').trim().trim_end_matches('.').to_owned();
        if value.is_empty() || key.is_empty() || key.split_whitespace().count() > 3 {
            continue;
        }
        if matches!(key.as_str(), "field" | "domain" | "scene") && s.field.is_none() {
            s.field = Some(value);
            s.field_provenance = Some(Provenance::ProviderFilled);
        } else {
            s.attributes.insert(
                key.replace(' ', "_"),
                Attribute {
                    value,
                    provenance: Provenance::ProviderFilled,
                },
            );
        }
    }
    s.field.is_some().then_some(s)
}

/// Asks the provider for each requested field that the conversation lacks.
///
/// Requesting a field that is already present is a precondition error. A
/// provider failure leaves the conversation unchanged; an answer that cannot
/// be parsed after one repair prompt leaves just that field empty.
pub fn fill_missing_fields<P: ChatProvider + ?Sized>(
    conversation: &Conversation,
    fields: &[FillField],
    provider: &P,
    retry: RetryPolicy,
    clock: &dyn Clock,
) -> Result<FillOutcome> {
    let present: Vec<String> = fields
        .iter()
        .filter(|f| f.present(conversation))
        .map(|f| f.as_str().to_owned())
        .collect();
    if !present.is_empty() {
        return Err(Error::precondition(format!(
            "conversation '{}' already has {}",
            conversation.id,
            present.join(", ")
        )));
    }
    let mut fields = fields.to_vec();
    fields.sort();
    fields.dedup();
    let run = format!(
        "{FILL_STAGE}:{}",
        fields.iter().map(|f| f.as_str()).collect::<Vec<_>>().join("+")
    );
    let mut transcript = ProviderTranscript {
        conversation_id: conversation.id.clone(),
        run,
        steps: Vec::new(),
    };
    let failure = |message: String| FailureRecord {
        stage: FILL_STAGE.into(),
        target_id: conversation.id.clone(),
        message,
    };
    let mut out = conversation.clone();
    let mut failures = Vec::new();
    let context = format!("Conversation:\n{}", conversation.transcript());
    for field in fields {
        let mut messages = vec![ChatMessage::user(format!("{context}\n{}", field.prompt()))];
        let mut value = None;
        for (attempt, step) in [field.as_str().to_owned(), format!("{}:repair", field.as_str())]
            .into_iter()
            .enumerate()
        {
            if attempt == 1 {
                messages.push(ChatMessage::user(field.repair()));
            }
            let request = ChatRequest::new(messages.clone());
            let started_ms = clock.now_ms();
            let (response, retries) = match complete_with_retry(provider, &request, retry) {
                Ok(r) => r,
                Err(e) => {
                    return Ok(FillOutcome {
                        conversation: conversation.clone(),
                        transcript,
                        failures: vec![failure(format!("{field}: provider error: {}", e.message))],
                    });
                }
            };
            transcript.steps.push(TranscriptStep {
                step,
                request: request.render(),
                response: response.clone(),
                started_ms,
                finished_ms: clock.now_ms(),
                retries,
            });
            value = interpret(field, &response, conversation);
            if value.is_some() {
                break;
            }
            messages.push(ChatMessage::assistant(response));
        }
        match value {
            Some(Filled::Relationships(r)) => out.relationships = r,
            Some(Filled::Settings(s)) => out.settings = s,
            Some(Filled::Summary(s)) => out.summary = Some(s),
            None => failures.push(failure(format!("{field}: unparseable provider output"))),
        }
    }
    Ok(FillOutcome {
        conversation: out,
        transcript,
        failures,
    })
}
