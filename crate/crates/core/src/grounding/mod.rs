//! Symbolic grounding of a description against its assigned concept.
//!
//! The provider answers in a fixed `Label: value` format; the parser is
//! anchored on those labels and rejects anything that breaks the
//! short-circuit rules (nothing after a non-match, a violation block only
//! for a violation).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::elicitation::{clean_line, ProviderTranscript, TranscriptStep};
use crate::error::{Error, Result};
use crate::provider::{complete_with_retry, ChatMessage, ChatProvider, ChatRequest, Clock, RetryPolicy};
use crate::schema::{
    Compatibility, Conversation, Emotion, NormConcept, NormDescription, Relevance,
    SymbolicGrounding, ViolationDetail, ViolationStatus,
};
use crate::store::FailureRecord;

const TEMPLATE: &str = include_str!("../../templates/grounding.txt");

/// The grounding prompt, split into its system and user parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundingTemplate {
    pub system: String,
    pub user: String,
}

impl Default for GroundingTemplate {
    fn default() -> Self {
        Self::parse(TEMPLATE).expect("bundled template is well formed")
    }
}

impl GroundingTemplate {
    /// Reads a template file: `#` header lines, then `=== system ===` and
    /// `=== user ===` sections.
    pub fn parse(text: &str) -> Result<Self> {
        let (_, rest) = text
            .split_once("=== system ===\n")
            .ok_or_else(|| Error::Parse("template lacks '=== system ===' section".into()))?;
        let (system, user) = rest
            .split_once("=== user ===\n")
            .ok_or_else(|| Error::Parse("template lacks '=== user ===' section".into()))?;
        Ok(Self {
            system: system.trim_end().to_owned(),
            user: user.trim_end().to_owned(),
        })
    }

    pub fn render_user(&self, conversation: &Conversation, description: &NormDescription, concept: &NormConcept) -> String {
        [
            ("{conversation}", conversation.transcript()),
            ("{social_norm}", description.text()),
            ("{concept_name}", concept.name.clone()),
            ("{concept_description}", concept.description.clone()),
            ("{violation_sketch}", concept.violation_sketch.clone()),
            ("{scenario}", concept.settings.join(", ")),
            ("{enactor_role}", concept.actor_roles.clone()),
            ("{acceptor_role}", concept.recipient_roles.clone()),
        ]
        .iter()
        .fold(self.user.clone(), |acc, (k, v)| acc.replace(k, v))
    }

    /// The response-format block, quoted back in repair prompts.
    pub fn skeleton(&self) -> &str {
        self.system
            .find("Social Norm - Norm Concept Compatibility:")
            .map_or(self.system.as_str(), |i| &self.system[i..])
    }
}

/// Parsed grounding fields, before they are tied to a description/concept pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingFields {
    pub compatibility: Compatibility,
    pub relevance: Option<Relevance>,
    pub enactor_role: Option<String>,
    pub acceptor_role: Option<String>,
    pub violation_status: Option<ViolationStatus>,
    pub violation: Option<ViolationDetail>,
    pub justifications: BTreeMap<String, String>,
}

impl GroundingFields {
    pub fn into_grounding(self, description_id: &str, concept_id: &str) -> SymbolicGrounding {
        SymbolicGrounding {
            description_id: description_id.to_owned(),
            concept_id: concept_id.to_owned(),
            compatibility: self.compatibility,
            relevance: self.relevance,
            enactor_role: self.enactor_role,
            acceptor_role: self.acceptor_role,
            violation_status: self.violation_status,
            violation: self.violation,
            justifications: self.justifications,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroundingParseError {
    /// A required label is absent. Worth one repair prompt.
    Missing(&'static str),
    Invalid(String),
}

impl fmt::Display for GroundingParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundingParseError::Missing(label) => write!(f, "missing required field '{label}'"),
            GroundingParseError::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for GroundingParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Compatibility,
    CompatibilityWhy,
    Relevance,
    RelevanceWhy,
    Enactor,
    Acceptor,
    Status,
    StatusWhy,
    Action,
    Violator,
    Victim,
    ViolatorEmotion,
    VictimEmotion,
}

const LABELS: [(Field, &str); 13] = [
    (Field::Compatibility, "Social Norm - Norm Concept Compatibility"),
    (Field::CompatibilityWhy, "Compatibility Justification"),
    (Field::Relevance, "Relevance"),
    (Field::RelevanceWhy, "Relevance Justification"),
    (Field::Enactor, "Enactor Role"),
    (Field::Acceptor, "Acceptor Role"),
    (Field::Status, "Violation Status"),
    (Field::StatusWhy, "Violation Status Justification"),
    (Field::Action, "Violating Action"),
    (Field::Violator, "Violator Role"),
    (Field::Victim, "Victim Role"),
    (Field::ViolatorEmotion, "Violator Emotion"),
    (Field::VictimEmotion, "Victim Emotion"),
];

/// Justification keys for the three judged fields.
pub const JUSTIFY_COMPATIBILITY: &str = "compatibility";
pub const JUSTIFY_RELEVANCE: &str = "relevance";
pub const JUSTIFY_VIOLATION_STATUS: &str = "violation_status";

fn canonical_label(label: &str) -> String {
    label
        .replace(['–', '—'], "-")
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn field_of(label: &str) -> Option<Field> {
    let l = canonical_label(label);
    match l.as_str() {
        "norm-concept compatibility" | "norm concept compatibility" | "compatibility"
        | "social norm-norm concept compatibility" => return Some(Field::Compatibility),
        _ => {}
    }
    LABELS
        .iter()
        .find(|(_, name)| canonical_label(name) == l)
        .map(|(f, _)| *f)
}

fn value_token(v: &str) -> String {
    v.trim()
        .trim_matches(|c: char| c == '<' || c == '>' || c == '"')
        .trim_end_matches('.')
        .trim()
        .to_lowercase()
}

fn parse_compatibility(v: &str) -> Option<Compatibility> {
    let t = value_token(v);
    let negative = ["doesn't match", "does not match", "doesn’t match", "no match", "not match", "mismatch", "no_match"];
    if negative.iter().any(|n| t.starts_with(n)) {
        Some(Compatibility::NoMatch)
    } else if t.starts_with("match") {
        Some(Compatibility::Match)
    } else {
        None
    }
}

fn parse_relevance(v: &str) -> Option<Relevance> {
    let t = value_token(v);
    if t.starts_with("irrelevant") || t.starts_with("not relevant") {
        Some(Relevance::Irrelevant)
    } else if t.starts_with("relevant") {
        Some(Relevance::Relevant)
    } else {
        None
    }
}

fn parse_status(v: &str) -> Option<ViolationStatus> {
    let t = value_token(v);
    if t.starts_with("adhere") {
        Some(ViolationStatus::Adhere)
    } else if t.starts_with("violat") {
        Some(ViolationStatus::Violate)
    } else {
        None
    }
}

/// Parses a grounding response. `speakers` are the conversation's speaker
/// names; roles equal to one of them are rejected.
pub fn parse_grounding(text: &str, speakers: &BTreeSet<&str>) -> Result<GroundingFields, GroundingParseError> {
    use GroundingParseError::{Invalid, Missing};

    let mut known: BTreeMap<u8, String> = BTreeMap::new();
    let mut extra: BTreeMap<String, String> = BTreeMap::new();
    let mut last: Option<(Option<Field>, String)> = None;
    for raw in text.lines() {
        let (line, _) = clean_line(raw);
        if line.is_empty() || (line.starts_with('{') && line.ends_with('}')) {
            continue;
        }
        let Some((label, value)) = line.split_once(':') else {
            // continuation of a free-text value
            if let Some((field, key)) = &last {
                let target = match field {
                    Some(f) => known.get_mut(&(*f as u8)),
                    None => extra.get_mut(key),
                };
                if let Some(v) = target {
                    v.push(' ');
                    v.push_str(&line);
                }
            }
            continue;
        };
        let (label, value) = (label.trim(), value.trim().to_owned());
        match field_of(label) {
            Some(f) => {
                if known.insert(f as u8, value).is_some() {
                    return Err(Invalid(format!("duplicate field '{label}'")));
                }
                last = Some((Some(f), String::new()));
            }
            None => {
                if extra.insert(label.to_owned(), value).is_some() {
                    return Err(Invalid(format!("duplicate field '{label}'")));
                }
                last = Some((None, label.to_owned()));
            }
        }
    }
    let get = |f: Field| known.get(&(f as u8)).map(|s| s.trim().to_owned());

    let compatibility = {
        let v = get(Field::Compatibility).ok_or(Missing("Social Norm - Norm Concept Compatibility"))?;
        parse_compatibility(&v).ok_or_else(|| Invalid(format!("unknown compatibility '{v}'")))?
    };
    let mut justifications = extra;
    if let Some(j) = get(Field::CompatibilityWhy) {
        justifications.insert(JUSTIFY_COMPATIBILITY.into(), j);
    }
    let mut out = GroundingFields {
        compatibility,
        relevance: None,
        enactor_role: None,
        acceptor_role: None,
        violation_status: None,
        violation: None,
        justifications,
    };
    if compatibility == Compatibility::NoMatch {
        return Ok(out);
    }

    let relevance = get(Field::Relevance).ok_or(Missing("Relevance"))?;
    out.relevance =
        Some(parse_relevance(&relevance).ok_or_else(|| Invalid(format!("unknown relevance '{relevance}'")))?);
    if let Some(j) = get(Field::RelevanceWhy) {
        out.justifications.insert(JUSTIFY_RELEVANCE.into(), j);
    }

    let role = |f: Field, label: &'static str| -> Result<String, GroundingParseError> {
        let v = get(f).filter(|v| !v.is_empty()).ok_or(Missing(label))?;
        if speakers.iter().any(|s| s.trim().eq_ignore_ascii_case(&v)) {
            return Err(Invalid(format!("{label}: role must not be a name ('{v}')")));
        }
        Ok(v)
    };
    out.enactor_role = Some(role(Field::Enactor, "Enactor Role")?);
    out.acceptor_role = Some(role(Field::Acceptor, "Acceptor Role")?);

    if let Some(s) = get(Field::Status) {
        out.violation_status =
            Some(parse_status(&s).ok_or_else(|| Invalid(format!("unknown violation status '{s}'")))?);
    }
    if let Some(j) = get(Field::StatusWhy) {
        out.justifications.insert(JUSTIFY_VIOLATION_STATUS.into(), j);
    }
    let block = [
        Field::Action,
        Field::Violator,
        Field::Victim,
        Field::ViolatorEmotion,
        Field::VictimEmotion,
    ];
    let present = block.iter().filter(|f| get(**f).is_some()).count();
    match out.violation_status {
        Some(ViolationStatus::Violate) => {
            if present != block.len() {
                return Err(Invalid("contradictory violation block: violate status with incomplete details".into()));
            }
            let emotion = |f: Field| -> Result<Emotion, GroundingParseError> {
                let v = get(f).expect("checked present");
                v.parse::<Emotion>()
                    .map_err(|_| Invalid(format!("emotion '{v}' is not one of the 9 basic emotions")))
            };
            out.violation = Some(ViolationDetail {
                action: get(Field::Action).expect("checked present"),
                violator_role: role(Field::Violator, "Violator Role")?,
                victim_role: role(Field::Victim, "Victim Role")?,
                violator_emotion: emotion(Field::ViolatorEmotion)?,
                victim_emotion: emotion(Field::VictimEmotion)?,
            });
        }
        _ if present > 0 => {
            return Err(Invalid("contradictory violation block".into()));
        }
        _ => {}
    }
    Ok(out)
}

/// Canonical response text for a grounding; `parse_grounding` inverts it.
pub fn render_grounding(g: &SymbolicGrounding) -> String {
    let mut out = String::new();
    let mut line = |label: &str, value: &str| {
        out.push_str(label);
        out.push_str(": ");
        out.push_str(value);
        out.push('\n');
    };
    let label = |f: Field| LABELS.iter().find(|(x, _)| *x == f).expect("label").1;
    line(
        label(Field::Compatibility),
        match g.compatibility {
            Compatibility::Match => "match",
            Compatibility::NoMatch => "doesn't match",
        },
    );
    let j = &g.justifications;
    if let Some(v) = j.get(JUSTIFY_COMPATIBILITY) {
        line(label(Field::CompatibilityWhy), v);
    }
    if let Some(r) = g.relevance {
        line(
            label(Field::Relevance),
            match r {
                Relevance::Relevant => "relevant",
                Relevance::Irrelevant => "irrelevant",
            },
        );
    }
    if let Some(v) = j.get(JUSTIFY_RELEVANCE) {
        line(label(Field::RelevanceWhy), v);
    }
    if let Some(v) = &g.enactor_role {
        line(label(Field::Enactor), v);
    }
    if let Some(v) = &g.acceptor_role {
        line(label(Field::Acceptor), v);
    }
    if let Some(s) = g.violation_status {
        line(
            label(Field::Status),
            match s {
                ViolationStatus::Adhere => "adhere",
                ViolationStatus::Violate => "violate",
            },
        );
    }
    if let Some(v) = j.get(JUSTIFY_VIOLATION_STATUS) {
        line(label(Field::StatusWhy), v);
    }
    if let Some(v) = &g.violation {
        line(label(Field::Action), &v.action);
        line(label(Field::Violator), &v.violator_role);
        line(label(Field::Victim), &v.victim_role);
        line(label(Field::ViolatorEmotion), v.violator_emotion.as_str());
        line(label(Field::VictimEmotion), v.victim_emotion.as_str());
    }
    for (k, v) in j {
        if ![JUSTIFY_COMPATIBILITY, JUSTIFY_RELEVANCE, JUSTIFY_VIOLATION_STATUS].contains(&k.as_str()) {
            line(k, v);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundOutcome {
    pub grounding: Option<SymbolicGrounding>,
    pub transcript: ProviderTranscript,
    pub failure: Option<FailureRecord>,
}

pub struct GroundOptions<'a> {
    pub template: &'a GroundingTemplate,
    pub retry: RetryPolicy,
    pub clock: &'a dyn Clock,
}

/// Transcript run name for grounding one description.
pub fn run_name(description_id: &str) -> String {
    format!("ground:{description_id}")
}

/// Asks the provider to ground one description against its concept.
/// A response missing a required label gets one repair prompt.
pub fn ground<P: ChatProvider + ?Sized>(
    conversation: &Conversation,
    description: &NormDescription,
    concept: &NormConcept,
    provider: &P,
    options: &GroundOptions<'_>,
) -> GroundOutcome {
    let speakers = conversation.speakers();
    let mut transcript = ProviderTranscript {
        conversation_id: conversation.id.clone(),
        run: run_name(&description.id),
        steps: Vec::new(),
    };
    let fail = |message: String| FailureRecord {
        stage: "ground".into(),
        target_id: description.id.clone(),
        message,
    };
    let mut messages = vec![
        ChatMessage::system(options.template.system.clone()),
        ChatMessage::user(options.template.render_user(conversation, description, concept)),
    ];
    for attempt in 0..2 {
        let request = ChatRequest::new(messages.clone());
        let started_ms = options.clock.now_ms();
        let (response, retries) = match complete_with_retry(provider, &request, options.retry) {
            Ok(r) => r,
            Err(e) => {
                return GroundOutcome {
                    grounding: None,
                    transcript,
                    failure: Some(fail(e.to_string())),
                }
            }
        };
        transcript.steps.push(TranscriptStep {
            step: if attempt == 0 { "ground".into() } else { "repair".into() },
            request: request.render(),
            response: response.clone(),
            started_ms,
            finished_ms: options.clock.now_ms(),
            retries,
        });
        match parse_grounding(&response, &speakers) {
            Ok(fields) => {
                return GroundOutcome {
                    grounding: Some(fields.into_grounding(&description.id, &concept.id)),
                    transcript,
                    failure: None,
                }
            }
            Err(GroundingParseError::Missing(label)) if attempt == 0 => {
                messages.push(ChatMessage::assistant(response));
                messages.push(ChatMessage::user(format!(
                    "Your response is missing the '{label}' line. Answer again using exactly this format:\n\n{}",
                    options.template.skeleton()
                )));
            }
            Err(e) => {
                return GroundOutcome {
                    grounding: None,
                    transcript,
                    failure: Some(fail(e.to_string())),
                }
            }
        }
    }
    unreachable!("the second attempt always returns")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn speakers() -> BTreeSet<&'static str> {
        ["Xu Lihua", "Zuo Zhengpeng"].into()
    }

    #[test]
    fn template_sections_load() {
        let t = GroundingTemplate::default();
        assert!(t.system.starts_with("As a two-step cultural"));
        assert!(t.user.contains("{social_norm}"));
        assert!(t.skeleton().starts_with("Social Norm - Norm Concept Compatibility:"));
    }

    #[test]
    fn no_match_short_circuits() {
        let g = parse_grounding("Social Norm - Norm Concept Compatibility: doesn't match\nRelevance: relevant", &speakers()).unwrap();
        assert_eq!(g.compatibility, Compatibility::NoMatch);
        assert!(g.relevance.is_none() && g.enactor_role.is_none());
    }

    #[test]
    fn name_as_role_is_rejected() {
        let text = "Compatibility: match\nRelevance: relevant\nEnactor Role: Xu Lihua\nAcceptor Role: husband";
        let err = parse_grounding(text, &speakers()).unwrap_err();
        assert!(err.to_string().contains("role must not be a name"));
    }

    #[test]
    fn unknown_emotion_names_token() {
        let text = "Compatibility: match\nRelevance: relevant\nEnactor Role: son\nAcceptor Role: mother\n\
                    Violation Status: violate\nViolating Action: shouting\nViolator Role: son\nVictim Role: mother\n\
                    Violator Emotion: annoyance\nVictim Emotion: sadness";
        let err = parse_grounding(text, &speakers()).unwrap_err();
        assert!(err.to_string().contains("annoyance"));
    }

    #[test]
    fn missing_header_is_distinguished() {
        assert_eq!(
            parse_grounding("Relevance: relevant", &speakers()),
            Err(GroundingParseError::Missing("Social Norm - Norm Concept Compatibility"))
        );
    }
}
