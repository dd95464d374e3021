use serde::{Deserialize, Serialize};

use crate::discovery::ClusterView;
use crate::elicitation::ProviderTranscript;
use crate::schema::{
    ConceptAssignment, Conversation, EmbeddingRecord, HumanJudgment, NormConcept,
    NormDescription, SymbolicGrounding,
};
use crate::verification::{Rubric, VerificationVerdict};

/// A per-item failure kept for audit (provider errors, parse failures).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: String,
    pub target_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentReason {
    Augment,
    Reassign,
}

/// Everything that can happen to a project. The log of these is the
/// source of truth; [`super::Project`] is a fold over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    ConversationAdded {
        conversation: Conversation,
    },
    /// Replaces a conversation after provider filling. Gold fields must be
    /// carried over untouched.
    ConversationFilled {
        conversation: Conversation,
    },
    DescriptionAdded {
        description: NormDescription,
    },
    EmbeddingAdded {
        record: EmbeddingRecord,
    },
    ClustersComputed {
        round: u32,
        clusters: Vec<ClusterView>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warning: Option<String>,
    },
    ConceptCreated {
        concept: NormConcept,
        assignments: Vec<ConceptAssignment>,
    },
    MarksRecorded {
        concept_id: String,
        annotator: String,
        good: Vec<String>,
        bad: Vec<String>,
    },
    AssignmentsUpdated {
        reason: AssignmentReason,
        assign: Vec<ConceptAssignment>,
        unassign: Vec<String>,
    },
    GroundingRecorded {
        grounding: SymbolicGrounding,
    },
    JudgmentRecorded {
        judgment: HumanJudgment,
    },
    RubricStored {
        rubric: Rubric,
    },
    VerdictRecorded {
        verdict: VerificationVerdict,
    },
    TranscriptStored {
        transcript: ProviderTranscript,
    },
    FailureRecorded {
        failure: FailureRecord,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::ConversationAdded { .. } => "conversation_added",
            Event::ConversationFilled { .. } => "conversation_filled",
            Event::DescriptionAdded { .. } => "description_added",
            Event::EmbeddingAdded { .. } => "embedding_added",
            Event::ClustersComputed { .. } => "clusters_computed",
            Event::ConceptCreated { .. } => "concept_created",
            Event::MarksRecorded { .. } => "marks_recorded",
            Event::AssignmentsUpdated { .. } => "assignments_updated",
            Event::GroundingRecorded { .. } => "grounding_recorded",
            Event::JudgmentRecorded { .. } => "judgment_recorded",
            Event::RubricStored { .. } => "rubric_stored",
            Event::VerdictRecorded { .. } => "verdict_recorded",
            Event::TranscriptStored { .. } => "transcript_stored",
            Event::FailureRecorded { .. } => "failure_recorded",
        }
    }
}
