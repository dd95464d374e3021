//! Domain types for the cultural context schema.
//!
//! The factual segment (conversations, turns, relationships, settings,
//! summaries) and the cultural segment (norm descriptions, concepts,
//! assignments, groundings, judgments) live here as plain value types.
//! All mutation goes through [`crate::store`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParseEnumError;

mod validate;

pub(crate) use validate::{
    check_concept, check_conversation, check_description, check_embedding, check_grounding,
};
pub use validate::{validate_project, ViolationReport};

/// Whether a factual field came from the corpus or was filled by a provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gold,
    ProviderFilled,
}

/// Turn-level label tasks. The set is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTask {
    Emotion,
    Sentiment,
    DialogueAct,
    NormViolation,
}

impl LabelTask {
    pub const ALL: [LabelTask; 4] = [
        LabelTask::Emotion,
        LabelTask::Sentiment,
        LabelTask::DialogueAct,
        LabelTask::NormViolation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelTask::Emotion => "emotion",
            LabelTask::Sentiment => "sentiment",
            LabelTask::DialogueAct => "dialogue_act",
            LabelTask::NormViolation => "norm_violation",
        }
    }
}

impl FromStr for LabelTask {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LabelTask::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ParseEnumError::new("label task", s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub speaker: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<LabelTask, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relationship {
    pub speaker_a: String,
    pub speaker_b: String,
    pub relation: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub value: String,
    pub provenance: Provenance,
}

/// Scene/setting metadata. Every attribute carries its own provenance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingsRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, Attribute>,
}

impl SettingsRecord {
    pub fn is_empty(&self) -> bool {
        self.field.is_none() && self.attributes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub source: String,
    #[serde(default = "default_language")]
    pub language: String,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relationships: Vec<Relationship>,
    #[serde(default, skip_serializing_if = "SettingsRecord::is_empty")]
    pub settings: SettingsRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<Summary>,
}

fn default_language() -> String {
    "zh".to_owned()
}

impl Conversation {
    pub fn speakers(&self) -> BTreeSet<&str> {
        self.turns.iter().map(|t| t.speaker.as_str()).collect()
    }

    /// `Speaker: text` lines, one per turn.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for turn in &self.turns {
            out.push_str(&turn.speaker);
            out.push_str(": ");
            out.push_str(&turn.text);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionKind {
    Norm,
    Violation,
    Effect,
}

impl DescriptionKind {
    pub const ALL: [DescriptionKind; 3] = [
        DescriptionKind::Norm,
        DescriptionKind::Violation,
        DescriptionKind::Effect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DescriptionKind::Norm => "norm",
            DescriptionKind::Violation => "violation",
            DescriptionKind::Effect => "effect",
        }
    }
}

/// Refinement status of a description. Transitions only move forward in
/// `raw -> self_verified -> agent_verified`, or to `discarded`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionStatus {
    Raw,
    SelfVerified,
    AgentVerified,
    Discarded,
}

impl DescriptionStatus {
    pub const ALL: [DescriptionStatus; 4] = [
        DescriptionStatus::Raw,
        DescriptionStatus::SelfVerified,
        DescriptionStatus::AgentVerified,
        DescriptionStatus::Discarded,
    ];

    pub fn can_transition_to(self, next: DescriptionStatus) -> bool {
        use DescriptionStatus::*;
        match (self, next) {
            (Discarded, _) => false,
            (_, Discarded) => true,
            (from, to) => to > from,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DescriptionStatus::Raw => "raw",
            DescriptionStatus::SelfVerified => "self_verified",
            DescriptionStatus::AgentVerified => "agent_verified",
            DescriptionStatus::Discarded => "discarded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormDescription {
    pub id: String,
    pub conversation_id: String,
    pub kind: DescriptionKind,
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    pub status: DescriptionStatus,
}

impl NormDescription {
    /// Text used for embedding and display: `Title: body`, or just the body.
    pub fn text(&self) -> String {
        if self.title.is_empty() {
            self.body.clone()
        } else {
            format!("{}: {}", self.title, self.body)
        }
    }

    /// Splits `Title: body` on the first colon; falls back to the whole text as body.
    pub fn split_title_body(text: &str) -> (String, String) {
        match text.split_once(':') {
            Some((title, body)) if !title.trim().is_empty() && !body.trim().is_empty() => {
                (title.trim().to_owned(), body.trim().to_owned())
            }
            _ => (String::new(), text.trim().to_owned()),
        }
    }
}

/// The symbolic structure an annotator supplies when creating a concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicStructure {
    pub name: String,
    pub description: String,
    pub settings: Vec<String>,
    pub violation_sketch: String,
    pub actor_roles: String,
    pub recipient_roles: String,
}

impl SymbolicStructure {
    /// Names of the fields left blank.
    pub fn missing_fields(&self) -> Vec<&'static str> {
        let mut missing = Vec::new();
        let blank = |s: &str| s.trim().is_empty();
        if blank(&self.name) {
            missing.push("name");
        }
        if blank(&self.description) {
            missing.push("description");
        }
        if self.settings.iter().all(|s| blank(s)) {
            missing.push("settings");
        }
        if blank(&self.violation_sketch) {
            missing.push("violation_sketch");
        }
        if blank(&self.actor_roles) {
            missing.push("actor_roles");
        }
        if blank(&self.recipient_roles) {
            missing.push("recipient_roles");
        }
        missing
    }
}

pub const MIN_SEEDS: usize = 5;
pub const MAX_SEEDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormConcept {
    pub id: String,
    pub name: String,
    pub description: String,
    pub settings: Vec<String>,
    pub violation_sketch: String,
    pub actor_roles: String,
    pub recipient_roles: String,
    pub seed_ids: Vec<String>,
    #[serde(default)]
    pub good_ids: Vec<String>,
    #[serde(default)]
    pub bad_ids: Vec<String>,
    pub created_by: String,
    pub iteration: u32,
    /// Store version at creation; orders concepts for tie-breaking.
    pub created_at_version: u64,
}

impl NormConcept {
    pub fn structure(&self) -> SymbolicStructure {
        SymbolicStructure {
            name: self.name.clone(),
            description: self.description.clone(),
            settings: self.settings.clone(),
            violation_sketch: self.violation_sketch.clone(),
            actor_roles: self.actor_roles.clone(),
            recipient_roles: self.recipient_roles.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentProvenance {
    HumanSeed,
    Knn,
    Reassigned,
}

impl AssignmentProvenance {
    pub fn as_str(self) -> &'static str {
        match self {
            AssignmentProvenance::HumanSeed => "human_seed",
            AssignmentProvenance::Knn => "knn",
            AssignmentProvenance::Reassigned => "reassigned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptAssignment {
    pub description_id: String,
    pub concept_id: String,
    pub provenance: AssignmentProvenance,
    pub score: f64,
    pub iteration: u32,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub target_id: String,
    pub vector: Vec<f64>,
    pub model_tag: String,
    pub normalized: bool,
}

/// The nine basic emotions accepted in grounding responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emotion {
    Anger,
    Disgust,
    Fear,
    Happiness,
    Sadness,
    Surprise,
    Contempt,
    Anticipation,
    Neutral,
}

impl Emotion {
    pub const ALL: [Emotion; 9] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Happiness,
        Emotion::Sadness,
        Emotion::Surprise,
        Emotion::Contempt,
        Emotion::Anticipation,
        Emotion::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Happiness => "happiness",
            Emotion::Sadness => "sadness",
            Emotion::Surprise => "surprise",
            Emotion::Contempt => "contempt",
            Emotion::Anticipation => "anticipation",
            Emotion::Neutral => "neutral",
        }
    }
}

impl FromStr for Emotion {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let token = s.trim().trim_end_matches('.').to_ascii_lowercase();
        Emotion::ALL
            .into_iter()
            .find(|e| e.as_str() == token)
            .ok_or_else(|| ParseEnumError::new("emotion", s))
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compatibility {
    Match,
    NoMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationStatus {
    Adhere,
    Violate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationDetail {
    pub action: String,
    pub violator_role: String,
    pub victim_role: String,
    pub violator_emotion: Emotion,
    pub victim_emotion: Emotion,
}

/// A description/concept pair aligned onto the concept's symbolic slots.
///
/// Everything after `compatibility` is present only for a `match`, and
/// `violation` only when `violation_status` is `violate`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicGrounding {
    pub description_id: String,
    pub concept_id: String,
    pub compatibility: Compatibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<Relevance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enactor_role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptor_role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation_status: Option<ViolationStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<ViolationDetail>,
    #[serde(default)]
    pub justifications: BTreeMap<String, String>,
}

impl SymbolicGrounding {
    /// A grounding that should be looked at by verification.
    pub fn flagged(&self) -> bool {
        self.compatibility == Compatibility::NoMatch
            || self.relevance == Some(Relevance::Irrelevant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Relevance,
    Mapping,
    Violation,
}

impl Aspect {
    pub const ALL: [Aspect; 3] = [Aspect::Relevance, Aspect::Mapping, Aspect::Violation];

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Relevance => "relevance",
            Aspect::Mapping => "mapping",
            Aspect::Violation => "violation",
        }
    }
}

impl FromStr for Aspect {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Aspect::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ParseEnumError::new("aspect", s))
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
}

/// One annotator's judgment of one target. `likert` is only used for
/// rating k-NN augmentations against their concept (aspect `mapping`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanJudgment {
    pub target_id: String,
    pub annotator_id: String,
    pub aspect: Aspect,
    pub verdict: YesNo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likert: Option<u8>,
}

impl HumanJudgment {
    pub fn check(&self) -> Result<(), &'static str> {
        if let Some(l) = self.likert {
            if !(1..=5).contains(&l) {
                return Err("likert must be in 1..=5");
            }
            if self.aspect != Aspect::Mapping {
                return Err("likert only allowed for augmentation (mapping) ratings");
            }
        }
        if self.target_id.is_empty() || self.annotator_id.is_empty() {
            return Err("judgment requires target and annotator ids");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_transitions_only_move_forward() {
        use DescriptionStatus::*;
        assert!(Raw.can_transition_to(SelfVerified));
        assert!(Raw.can_transition_to(AgentVerified));
        assert!(SelfVerified.can_transition_to(AgentVerified));
        assert!(AgentVerified.can_transition_to(Discarded));
        assert!(!SelfVerified.can_transition_to(Raw));
        assert!(!Discarded.can_transition_to(Raw));
        assert!(!Discarded.can_transition_to(SelfVerified));
        assert!(!Raw.can_transition_to(Raw));
    }

    #[test]
    fn title_body_split_on_first_colon() {
        let (t, b) = NormDescription::split_title_body("Respect for parents: Filial piety: valued");
        assert_eq!(t, "Respect for parents");
        assert_eq!(b, "Filial piety: valued");
        let (t, b) = NormDescription::split_title_body("no colon here");
        assert_eq!(t, "");
        assert_eq!(b, "no colon here");
    }

    #[test]
    fn emotion_parse_is_closed() {
        assert_eq!("Anger".parse::<Emotion>().unwrap(), Emotion::Anger);
        assert_eq!(" neutral. ".parse::<Emotion>().unwrap(), Emotion::Neutral);
        let err = "embarrassment".parse::<Emotion>().unwrap_err();
        assert!(err.to_string().contains("embarrassment"));
    }

    #[test]
    fn likert_rules() {
        let mut j = HumanJudgment {
            target_id: "d".into(),
            annotator_id: "a".into(),
            aspect: Aspect::Mapping,
            verdict: YesNo::Yes,
            likert: Some(5),
        };
        assert!(j.check().is_ok());
        j.likert = Some(0);
        assert!(j.check().is_err());
        j.likert = Some(6);
        assert!(j.check().is_err());
        j.likert = Some(3);
        j.aspect = Aspect::Relevance;
        assert!(j.check().is_err());
    }
}
