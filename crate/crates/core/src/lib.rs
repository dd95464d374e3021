//! Cultural-norm grounding for conversation corpora.
//!
//! The pipeline loads conversations ([`ingestion`]), asks a chat provider
//! for norm, violation and effect descriptions ([`elicitation`]), groups
//! those descriptions into human-authored norm concepts through an
//! interactive clustering loop ([`discovery`]), maps each description onto
//! its concept's symbolic slots ([`grounding`]), filters the results
//! ([`verification`]) and scores them against human judgments
//! ([`metrics`]). State lives in an append-only event log ([`store`]);
//! [`commands`] turns each step into the events it would append.

pub mod commands;
pub mod discovery;
pub mod elicitation;
pub mod error;
pub mod grounding;
pub mod ingestion;
pub mod metrics;
pub mod provider;
pub mod schema;
pub mod store;
pub mod verification;

pub use discovery::{ClusterView, Coverage, DiscoveryConfig};
pub use error::{Error, Result};
pub use schema::{
    Aspect, Conversation, DescriptionKind, DescriptionStatus, HumanJudgment, NormConcept, NormDescription,
    SymbolicGrounding, SymbolicStructure,
};
pub use store::{Event, Project, Store};
pub use verification::{Decision, Rubric, VerificationVerdict, Workflow};
