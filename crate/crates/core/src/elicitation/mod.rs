//! Knowledge elicitation: a fixed four-step prompt sequence per
//! conversation, parsed into raw norm, violation and effect descriptions.

mod parse;
mod transcript;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use parse::{parse_relationships, parse_sections, parse_summary, EffectItem, Item, Sections};
pub(crate) use parse::clean_line;
pub use transcript::{ProviderTranscript, TranscriptStep};

use crate::error::{Error, Result};
use crate::provider::{complete_with_retry, ChatMessage, ChatProvider, ChatRequest, Clock, RetryPolicy};
use crate::schema::{Conversation, DescriptionKind, DescriptionStatus, NormDescription, Relationship};
use crate::store::FailureRecord;

pub const STEP_TRANSLATE: &str = "translate";
pub const STEP_PARTICIPANTS: &str = "participants";
pub const STEP_NORMS: &str = "norms_violations_effects";
pub const STEP_SUMMARY: &str = "summary";

const STEP_ORDER: [&str; 4] = [STEP_TRANSLATE, STEP_PARTICIPANTS, STEP_NORMS, STEP_SUMMARY];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStep {
    pub name: String,
    /// Template text. `{conversation}` and `{<earlier step>}` are filled in.
    pub template: String,
}

/// The ordered elicitation prompts. Steps run as one chat session, so every
/// step also sees all earlier answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptScript {
    steps: Vec<PromptStep>,
}

impl Default for PromptScript {
    fn default() -> Self {
        let step = |name: &str, template: &str| PromptStep {
            name: name.to_owned(),
            template: template.to_owned(),
        };
        Self {
            steps: vec![
                step(
                    STEP_TRANSLATE,
                    "Conversation:\n{conversation}\nTranslate this conversation into English.",
                ),
                step(
                    STEP_PARTICIPANTS,
                    "List the people mentioned in the conversation and the social relationships between them.",
                ),
                step(
                    STEP_NORMS,
                    "List the Chinese cultural norms applicable to this situation. Are there any cultural norm violations observed in this situation? If yes, list them. List the observed and potential effects by index for each violation.",
                ),
                step(STEP_SUMMARY, "Summarize the conversation in 3-4 sentences."),
            ],
        }
    }
}

impl PromptScript {
    /// Builds a script with custom templates. The four step names must appear
    /// in the fixed order and every slot must name the conversation or an
    /// earlier step.
    pub fn new(steps: Vec<PromptStep>) -> Result<Self> {
        let names: Vec<&str> = steps.iter().map(|s| s.name.as_str()).collect();
        if names != STEP_ORDER {
            return Err(Error::InvalidArgument(format!(
                "prompt steps must be {STEP_ORDER:?}, got {names:?}"
            )));
        }
        for (i, step) in steps.iter().enumerate() {
            for slot in slots(&step.template) {
                if slot != "conversation" && !STEP_ORDER[..i].contains(&slot.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "step '{}' uses unfillable slot {{{slot}}}",
                        step.name
                    )));
                }
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[PromptStep] {
        &self.steps
    }
}

fn slots(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) => {
                let name = &after[..end];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    out.push(name.to_owned());
                }
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

fn fill(template: &str, conversation: &str, answers: &[(String, String)]) -> String {
    let mut text = template.replace("{conversation}", conversation);
    for (name, answer) in answers {
        text = text.replace(&format!("{{{name}}}"), answer);
    }
    text
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Elicited {
    pub descriptions: Vec<NormDescription>,
    pub summary: Option<String>,
    pub relationships: Vec<Relationship>,
    pub transcript: Option<ProviderTranscript>,
    pub failures: Vec<FailureRecord>,
}

pub struct ElicitOptions<'a> {
    pub run: String,
    pub retry: RetryPolicy,
    pub clock: &'a dyn Clock,
}

/// Content-derived description id. Re-parsing the same transcript yields
/// the same ids, which is what makes elicitation idempotent in the store.
pub fn description_id(conversation_id: &str, kind: DescriptionKind, ordinal: usize, title: &str, body: &str) -> String {
    let mut h = Sha256::new();
    for part in [conversation_id, kind.as_str(), &ordinal.to_string(), title, body] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    format!("d-{}", &hex::encode(h.finalize())[..16])
}

fn failure(conversation_id: &str, message: impl Into<String>) -> FailureRecord {
    FailureRecord {
        stage: "elicit".into(),
        target_id: conversation_id.to_owned(),
        message: message.into(),
    }
}

/// Runs the prompt script against one conversation.
///
/// Provider failures (after retries) end the run with a failure record and
/// whatever was already parsed. A section that fails to parse does not
/// affect the others.
pub fn elicit<P: ChatProvider + ?Sized>(
    conversation: &Conversation,
    provider: &P,
    script: &PromptScript,
    options: &ElicitOptions<'_>,
) -> Result<Elicited> {
    if conversation.turns.is_empty() {
        return Err(Error::precondition_ids(
            "conversation has no turns",
            vec![conversation.id.clone()],
        ));
    }
    let text = conversation.transcript();
    let mut messages = Vec::new();
    let mut answers: Vec<(String, String)> = Vec::new();
    let mut transcript = ProviderTranscript {
        conversation_id: conversation.id.clone(),
        run: options.run.clone(),
        steps: Vec::new(),
    };
    let mut out = Elicited::default();
    for step in script.steps() {
        messages.push(ChatMessage::user(fill(&step.template, &text, &answers)));
        let request = ChatRequest::new(messages.clone());
        let started_ms = options.clock.now_ms();
        match complete_with_retry(provider, &request, options.retry) {
            Ok((response, retries)) => {
                transcript.steps.push(TranscriptStep {
                    step: step.name.clone(),
                    request: request.render(),
                    response: response.clone(),
                    started_ms,
                    finished_ms: options.clock.now_ms(),
                    retries,
                });
                messages.push(ChatMessage::assistant(response.clone()));
                answers.push((step.name.clone(), response));
            }
            Err(e) => {
                out.failures.push(failure(
                    &conversation.id,
                    format!("step '{}': {}", step.name, e.message),
                ));
                break;
            }
        }
    }
    let parsed = interpret(conversation, &transcript);
    out.descriptions = parsed.descriptions;
    out.summary = parsed.summary;
    out.relationships = parsed.relationships;
    out.failures.extend(parsed.failures);
    out.transcript = Some(transcript);
    Ok(out)
}

/// Parses a stored transcript into descriptions, summary and relationships.
pub fn interpret(conversation: &Conversation, transcript: &ProviderTranscript) -> Elicited {
    let mut out = Elicited::default();
    let cid = &conversation.id;
    if let Some(text) = transcript.response(STEP_PARTICIPANTS) {
        let (rels, diags) = parse_relationships(text, &conversation.speakers());
        out.relationships = rels;
        for d in diags {
            log::debug!("{cid}: {d}");
        }
    }
    if let Some(text) = transcript.response(STEP_NORMS) {
        let sections = parse_sections(text);
        if sections.is_empty() {
            out.failures.push(failure(
                cid,
                format!("norms section unparsed: {}", sections.diagnostics.join("; ")),
            ));
        } else {
            out.descriptions = descriptions_from(cid, &sections);
            for d in &sections.diagnostics {
                out.failures.push(failure(cid, d.clone()));
            }
        }
    }
    if let Some(text) = transcript.response(STEP_SUMMARY) {
        out.summary = parse_summary(text);
        if out.summary.is_none() {
            out.failures.push(failure(cid, "empty summary"));
        }
    }
    out
}

/// Turns parsed sections into raw descriptions. Effects whose violation
/// could not be identified are dropped; the parser reports them.
pub fn descriptions_from(conversation_id: &str, sections: &Sections) -> Vec<NormDescription> {
    let make = |kind, ordinal, title: &str, body: &str, parent_id| NormDescription {
        id: description_id(conversation_id, kind, ordinal, title, body),
        conversation_id: conversation_id.to_owned(),
        kind,
        title: title.to_owned(),
        body: body.to_owned(),
        parent_id,
        status: DescriptionStatus::Raw,
    };
    let mut out = Vec::new();
    for (i, item) in sections.norms.iter().enumerate() {
        out.push(make(DescriptionKind::Norm, i, &item.title, &item.body, None));
    }
    let mut violation_ids = Vec::new();
    for (i, item) in sections.violations.iter().enumerate() {
        let d = make(DescriptionKind::Violation, i, &item.title, &item.body, None);
        violation_ids.push(d.id.clone());
        out.push(d);
    }
    for (i, e) in sections.effects.iter().enumerate() {
        if let Some(v) = e.violation_index {
            out.push(make(
                DescriptionKind::Effect,
                i,
                &e.title(),
                &e.body,
                Some(violation_ids[v].clone()),
            ));
        }
    }
    out
}
