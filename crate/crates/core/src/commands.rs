//! Pipeline operations expressed as event lists against a project.
//!
//! Every function here reads a [`Project`] and returns the events that
//! would carry it forward. The CLI and the HTTP server both go through these
//! functions and differ only in how they append, so the same inputs give
//! the same log. Long provider-bound batches hand events to a sink chunk by
//! chunk, which keeps an interrupted run resumable.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::discovery::{self, vector, DiscoveryConfig};
use crate::elicitation::{self, ElicitOptions, PromptScript};
use crate::error::{Error, Result};
use crate::grounding::{self, render_grounding, GroundOptions, GroundingTemplate};
use crate::ingestion::{fill_missing_fields, FillField};
use crate::provider::{fan_out, ChatProvider, Clock, EmbeddingProvider, RetryPolicy};
use crate::schema::{
    Aspect, Conversation, DescriptionKind, DescriptionStatus, EmbeddingRecord, HumanJudgment, NormDescription,
    Provenance, Summary, SymbolicStructure,
};
use crate::store::{AssignmentReason, Event, Project};
use crate::verification::{
    generate_criteria, run_batch, task_description, verify_criteria, BatchConfig, BatchItem, BatchSummary, Rubric,
    Target, Workflow,
};

/// Transcript run name for elicitation.
pub const ELICIT_RUN: &str = "elicit";

/// Events plus advisory messages for the operator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub events: Vec<Event>,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn of(events: Vec<Event>) -> Self {
        Self {
            events,
            warnings: Vec::new(),
        }
    }
}

/// Receives events as a batch command produces them.
pub type Sink<'a> = dyn FnMut(Vec<Event>) -> Result<()> + 'a;

/// Makes a transcript run name unique within the project by suffixing
/// `@2`, `@3`, ... on repeats.
fn unique_run(project: &Project, conversation_id: &str, run: &str, taken: &BTreeSet<String>) -> String {
    let key = |r: &str| format!("{conversation_id}#{r}");
    if !project.transcripts.contains_key(&key(run)) && !taken.contains(&key(run)) {
        return run.to_owned();
    }
    (2..)
        .map(|n| format!("{run}@{n}"))
        .find(|r| !project.transcripts.contains_key(&key(r)) && !taken.contains(&key(r)))
        .expect("unbounded")
}

/// Adds conversations not yet in the project.
pub fn ingest(project: &Project, conversations: Vec<Conversation>) -> Outcome {
    let mut out = Outcome::default();
    let mut seen = BTreeSet::new();
    for c in conversations {
        if project.conversations.contains_key(&c.id) || !seen.insert(c.id.clone()) {
            out.warnings.push(format!("conversation '{}' already present, skipped", c.id));
            continue;
        }
        out.events.push(Event::ConversationAdded { conversation: c });
    }
    out
}

#[derive(Clone, Copy)]
pub struct BatchOptions<'a> {
    pub retry: RetryPolicy,
    pub parallelism: usize,
    pub clock: &'a dyn Clock,
}

/// Fills the requested fields on every conversation lacking at least one
/// of them. Fields a conversation already has are left alone.
pub fn fill<P: ChatProvider + ?Sized>(
    project: &Project,
    fields: &[FillField],
    provider: &P,
    options: BatchOptions<'_>,
    sink: &mut Sink<'_>,
) -> Result<Outcome> {
    let jobs: Vec<(&Conversation, Vec<FillField>)> = project
        .conversations
        .values()
        .filter_map(|c| {
            let missing: Vec<FillField> = fields
                .iter()
                .copied()
                .filter(|f| match f {
                    FillField::Relationships => c.relationships.is_empty(),
                    FillField::Settings => c.settings.is_empty(),
                    FillField::Summary => c.summary.is_none(),
                })
                .collect();
            (!missing.is_empty()).then_some((c, missing))
        })
        .collect();
    let mut summary = Outcome::default();
    for chunk in jobs.chunks(options.parallelism.max(1)) {
        let results = fan_out(chunk, options.parallelism, |(c, missing)| {
            fill_missing_fields(c, missing, provider, options.retry, options.clock)
        });
        let mut events = Vec::new();
        let mut taken = BTreeSet::new();
        for ((original, _), result) in chunk.iter().zip(results) {
            let mut outcome = result?;
            if !outcome.transcript.steps.is_empty() {
                outcome.transcript.run =
                    unique_run(project, &original.id, &outcome.transcript.run, &taken);
                taken.insert(outcome.transcript.key());
                events.push(Event::TranscriptStored {
                    transcript: outcome.transcript.clone(),
                });
            }
            if outcome.changed(original) {
                events.push(Event::ConversationFilled {
                    conversation: outcome.conversation,
                });
            }
            for f in outcome.failures {
                summary.warnings.push(format!("{}: {}", f.target_id, f.message));
                events.push(Event::FailureRecorded { failure: f });
            }
        }
        summary.events.extend(events.iter().cloned());
        sink(events)?;
    }
    Ok(summary)
}

/// Copies a provider-produced summary and relationships onto a conversation
/// that lacks them. `None` when there is nothing to add.
fn adopt_elicited(c: &Conversation, e: &elicitation::Elicited) -> Option<Conversation> {
    let mut next = c.clone();
    if next.summary.is_none() {
        if let Some(text) = &e.summary {
            next.summary = Some(Summary {
                text: text.clone(),
                provenance: Provenance::ProviderFilled,
            });
        }
    }
    if next.relationships.is_empty() {
        next.relationships = e.relationships.clone();
    }
    (next != *c).then_some(next)
}

fn elicited_events(
    project: &Project,
    conversation: &Conversation,
    elicited: elicitation::Elicited,
) -> Vec<Event> {
    let mut events = Vec::new();
    if let Some(t) = &elicited.transcript {
        events.push(Event::TranscriptStored { transcript: t.clone() });
    }
    for d in &elicited.descriptions {
        if !project.descriptions.contains_key(&d.id) {
            events.push(Event::DescriptionAdded { description: d.clone() });
        }
    }
    if let Some(c) = adopt_elicited(conversation, &elicited) {
        events.push(Event::ConversationFilled { conversation: c });
    }
    for f in elicited.failures {
        events.push(Event::FailureRecorded { failure: f });
    }
    events
}

/// Runs the elicitation script on every conversation without an
/// elicitation transcript.
pub fn elicit<P: ChatProvider + ?Sized>(
    project: &Project,
    provider: &P,
    script: &PromptScript,
    options: BatchOptions<'_>,
    sink: &mut Sink<'_>,
) -> Result<Outcome> {
    let todo: Vec<&Conversation> = project
        .conversations
        .values()
        .filter(|c| !project.transcripts.contains_key(&format!("{}#{ELICIT_RUN}", c.id)))
        .collect();
    let opts = ElicitOptions {
        run: ELICIT_RUN.into(),
        retry: options.retry,
        clock: options.clock,
    };
    let mut summary = Outcome::default();
    for chunk in todo.chunks(options.parallelism.max(1)) {
        let results = fan_out(chunk, options.parallelism, |c| elicitation::elicit(c, provider, script, &opts));
        let mut events = Vec::new();
        for (c, r) in chunk.iter().zip(results) {
            events.extend(elicited_events(project, c, r?));
        }
        for e in &events {
            if let Event::FailureRecorded { failure } = e {
                summary.warnings.push(format!("{}: {}", failure.target_id, failure.message));
            }
        }
        summary.events.extend(events.iter().cloned());
        sink(events)?;
    }
    Ok(summary)
}

/// Re-parses every stored elicitation transcript and adds any description
/// the store lacks. Running it twice adds nothing the second time.
pub fn reinterpret(project: &Project) -> Outcome {
    let mut out = Outcome::default();
    for t in project.transcripts.values().filter(|t| t.run == ELICIT_RUN) {
        let Some(c) = project.conversations.get(&t.conversation_id) else {
            continue;
        };
        let parsed = elicitation::interpret(c, t);
        for d in parsed.descriptions {
            if !project.descriptions.contains_key(&d.id) {
                out.events.push(Event::DescriptionAdded { description: d });
            }
        }
    }
    out
}

/// Embeds every live norm description that has no embedding yet.
pub fn embed<E: EmbeddingProvider + ?Sized>(project: &Project, embedder: &E, batch_size: usize) -> Result<Outcome> {
    let todo: Vec<&NormDescription> = project
        .live_norms()
        .filter(|d| !project.embeddings.contains_key(&d.id))
        .collect();
    let mut out = Outcome::default();
    for chunk in todo.chunks(batch_size.max(1)) {
        let texts: Vec<String> = chunk.iter().map(|d| d.text()).collect();
        let batch = embedder.embed(&texts)?;
        if batch.vectors.len() != chunk.len() {
            return Err(Error::Parse(format!(
                "embedder returned {} vectors for {} texts",
                batch.vectors.len(),
                chunk.len()
            )));
        }
        for (d, v) in chunk.iter().zip(batch.vectors) {
            let normalized = vector::norm(&v) > 0.0;
            out.events.push(Event::EmbeddingAdded {
                record: EmbeddingRecord {
                    target_id: d.id.clone(),
                    vector: if normalized { vector::normalized(&v) } else { v },
                    model_tag: batch.model_tag.clone(),
                    normalized,
                },
            });
        }
    }
    Ok(out)
}

/// Clusters the unmapped descriptions for the next round.
pub fn cluster(project: &Project, config: &DiscoveryConfig) -> Result<Outcome> {
    match discovery::next_round(project, config)? {
        None => Ok(Outcome {
            events: Vec::new(),
            warnings: vec!["nothing left to cluster".into()],
        }),
        Some(plan) => Ok(Outcome {
            warnings: plan.warning.clone().into_iter().collect(),
            events: vec![Event::ClustersComputed {
                round: plan.round,
                clusters: plan.clusters,
                warning: plan.warning,
            }],
        }),
    }
}

/// A concept to create: its structure, seeds and author.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpec {
    #[serde(flatten)]
    pub structure: SymbolicStructure,
    pub seed_ids: Vec<String>,
    pub annotator: String,
}

pub fn create_concept(project: &Project, spec: &ConceptSpec) -> Result<Outcome> {
    let (concept, assignments) =
        discovery::create_concept(project, &spec.seed_ids, &spec.structure, &spec.annotator)?;
    Ok(Outcome::of(vec![Event::ConceptCreated { concept, assignments }]))
}

/// Creates several concepts in order, each checked against the state left
/// by the ones before it.
pub fn import_concepts(project: &Project, specs: &[ConceptSpec]) -> Result<Outcome> {
    let mut scratch = project.clone();
    let mut out = Outcome::default();
    for spec in specs {
        let step = create_concept(&scratch, spec)?;
        for e in &step.events {
            scratch.apply(e)?;
        }
        out.events.extend(step.events);
    }
    Ok(out)
}

/// Concepts in creation order, in the form [`import_concepts`] reads.
pub fn export_concepts(project: &Project) -> Vec<ConceptSpec> {
    project
        .concepts_in_order()
        .into_iter()
        .map(|c| ConceptSpec {
            structure: c.structure(),
            seed_ids: c.seed_ids.clone(),
            annotator: c.created_by.clone(),
        })
        .collect()
}

pub fn mark(project: &Project, concept_id: &str, good: &[String], bad: &[String], annotator: &str) -> Result<Outcome> {
    let warnings = discovery::check_marks(project, concept_id, good, bad)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Outcome {
        events: vec![Event::MarksRecorded {
            concept_id: concept_id.to_owned(),
            annotator: annotator.to_owned(),
            good: good.to_vec(),
            bad: bad.to_vec(),
        }],
        warnings,
    })
}

pub fn augment(project: &Project, tau: f64) -> Result<Outcome> {
    let assign = discovery::knn_augment(project, tau)?;
    if assign.is_empty() {
        return Ok(Outcome {
            events: Vec::new(),
            warnings: vec![format!("no unmapped description within tau {tau} of a concept")],
        });
    }
    Ok(Outcome::of(vec![Event::AssignmentsUpdated {
        reason: AssignmentReason::Augment,
        assign,
        unassign: Vec::new(),
    }]))
}

/// Reassignment always records an event, since it also closes the pending
/// marks for the round.
pub fn reassign(project: &Project, tau: f64, lambda: f64) -> Result<Outcome> {
    let plan = discovery::reassign_with_good_bad(project, tau, lambda)?;
    Ok(Outcome::of(vec![Event::AssignmentsUpdated {
        reason: AssignmentReason::Reassign,
        assign: plan.assign,
        unassign: plan.unassign,
    }]))
}

/// Grounds every actively assigned, non-discarded description that has no
/// grounding yet.
pub fn ground<P: ChatProvider + ?Sized>(
    project: &Project,
    provider: &P,
    template: &GroundingTemplate,
    options: BatchOptions<'_>,
    sink: &mut Sink<'_>,
) -> Result<Outcome> {
    let active = project.active_assignments();
    let mut todo = Vec::new();
    for d in project.descriptions.values() {
        if d.status == DescriptionStatus::Discarded || project.groundings.contains_key(&d.id) {
            continue;
        }
        let Some(a) = active.get(d.id.as_str()) else {
            continue;
        };
        let conversation = project
            .conversations
            .get(&d.conversation_id)
            .ok_or_else(|| Error::not_found("conversation", &d.conversation_id))?;
        let concept = project
            .concepts
            .get(&a.concept_id)
            .ok_or_else(|| Error::not_found("concept", &a.concept_id))?;
        todo.push((conversation, d, concept));
    }
    let opts = GroundOptions {
        template,
        retry: options.retry,
        clock: options.clock,
    };
    let mut summary = Outcome::default();
    for chunk in todo.chunks(options.parallelism.max(1)) {
        let results = fan_out(chunk, options.parallelism, |(c, d, k)| grounding::ground(c, d, k, provider, &opts));
        let mut events = Vec::new();
        let mut taken = BTreeSet::new();
        for ((c, _, _), mut r) in chunk.iter().zip(results) {
            r.transcript.run = unique_run(project, &c.id, &r.transcript.run, &taken);
            taken.insert(r.transcript.key());
            events.push(Event::TranscriptStored { transcript: r.transcript });
            if let Some(g) = r.grounding {
                events.push(Event::GroundingRecorded { grounding: g });
            }
            if let Some(f) = r.failure {
                summary.warnings.push(format!("{}: {}", f.target_id, f.message));
                events.push(Event::FailureRecorded { failure: f });
            }
        }
        summary.events.extend(events.iter().cloned());
        sink(events)?;
    }
    Ok(summary)
}

/// The text a verifier sees for one target.
pub fn target_context(project: &Project, description_id: &str, aspect: Aspect) -> Result<String> {
    let d = project
        .descriptions
        .get(description_id)
        .ok_or_else(|| Error::not_found("description", description_id))?;
    let c = project
        .conversations
        .get(&d.conversation_id)
        .ok_or_else(|| Error::not_found("conversation", &d.conversation_id))?;
    let mut text = format!("Conversation:\n{}\nSocial Norm: {}\n", c.transcript(), d.text());
    if aspect == Aspect::Relevance {
        return Ok(text);
    }
    let g = project
        .groundings
        .get(description_id)
        .ok_or_else(|| Error::not_found("grounding", description_id))?;
    let k = project
        .concepts
        .get(&g.concept_id)
        .ok_or_else(|| Error::not_found("concept", &g.concept_id))?;
    text.push_str(&format!(
        "\nNorm Concept Name: {}\nNorm Concept Description: {}\nNorm Concept Potential Violation Sketch: {}\n\nAnnotation:\n{}",
        k.name,
        k.description,
        k.violation_sketch,
        render_grounding(g)
    ));
    Ok(text)
}

/// Targets still lacking a verdict from `workflow` for `aspect`.
///
/// Relevance targets are descriptions (self checks only look at raw ones);
/// mapping targets are groundings; violation targets are groundings that
/// carry a violation status. Discarded descriptions are never targets.
pub fn verification_targets(project: &Project, aspect: Aspect, workflow: Workflow) -> Result<Vec<Target>> {
    let mut ids = Vec::new();
    for d in project.descriptions.values() {
        if d.status == DescriptionStatus::Discarded || project.verdict(&d.id, aspect, workflow).is_some() {
            continue;
        }
        let eligible = match aspect {
            Aspect::Relevance => workflow == Workflow::MultiAgent || d.status == DescriptionStatus::Raw,
            Aspect::Mapping => project.groundings.contains_key(&d.id),
            Aspect::Violation => project
                .groundings
                .get(&d.id)
                .is_some_and(|g| g.violation_status.is_some()),
        };
        if eligible {
            ids.push(d.id.clone());
        }
    }
    ids.into_iter()
        .map(|id| {
            Ok(Target {
                context: target_context(project, &id, aspect)?,
                id,
                aspect,
            })
        })
        .collect()
}

/// Verifies the pending targets for one aspect. Multi-agent runs use the
/// latest stored rubric for the aspect.
pub fn verify<P: ChatProvider + ?Sized>(
    project: &Project,
    aspect: Aspect,
    workflow: Workflow,
    provider: &P,
    config: &BatchConfig,
    sink: &mut Sink<'_>,
) -> Result<(Outcome, BatchSummary)> {
    let rubric = match workflow {
        Workflow::SelfCheck => None,
        Workflow::MultiAgent => Some(project.latest_rubric(aspect).ok_or_else(|| {
            Error::precondition(format!("no rubric stored for {aspect}; run the rubric step first"))
        })?),
    };
    let targets = verification_targets(project, aspect, workflow)?;
    let mut out = Outcome::default();
    let per_chunk = config.parallelism.max(1);
    let mut pending = Vec::new();
    let summary = run_batch(&targets, workflow, rubric, provider, config, |item| {
        pending.push(match item {
            BatchItem::Verdict(verdict) => Event::VerdictRecorded { verdict },
            BatchItem::Failure(failure) => Event::FailureRecorded { failure },
        });
        if pending.len() == per_chunk {
            let events = std::mem::take(&mut pending);
            out.events.extend(events.iter().cloned());
            sink(events)?;
        }
        Ok(())
    })?;
    if !pending.is_empty() {
        out.events.extend(pending.iter().cloned());
        sink(pending)?;
    }
    out.warnings = summary.warnings.clone();
    Ok((out, summary))
}

/// Inputs for building a rubric with the critic and verifier roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricRequest {
    pub aspect: Aspect,
    pub success_example: String,
    pub failure_example: String,
    pub probes: Vec<String>,
    /// Overrides the built-in task description for the aspect.
    #[serde(default)]
    pub task: Option<String>,
}

pub fn generate_rubric<P: ChatProvider + ?Sized>(
    project: &Project,
    request: &RubricRequest,
    provider: &P,
    retry: RetryPolicy,
) -> Result<Outcome> {
    let task = request
        .task
        .clone()
        .unwrap_or_else(|| task_description(request.aspect).to_owned());
    let (criteria, mut warnings) =
        generate_criteria(&task, &request.success_example, &request.failure_example, provider, retry)?;
    let draft = Rubric {
        aspect: request.aspect,
        version: next_rubric_version(project, request.aspect),
        task,
        criteria,
    };
    let rubric = verify_criteria(&draft, &request.probes, provider, retry)?;
    let rejected: Vec<&str> = rubric
        .criteria
        .iter()
        .filter(|c| !c.robust)
        .map(|c| c.name.as_str())
        .collect();
    if !rejected.is_empty() {
        warnings.push(format!("verifier rejected: {}", rejected.join(", ")));
    }
    if rubric.scored().next().is_none() {
        warnings.push("no robust criterion is scored; declare a mapping before multi-agent runs".into());
    }
    Ok(Outcome {
        events: vec![Event::RubricStored { rubric }],
        warnings,
    })
}

fn next_rubric_version(project: &Project, aspect: Aspect) -> u32 {
    project.latest_rubric(aspect).map_or(1, |r| r.version + 1)
}

/// Stores a hand-written or edited rubric as the next version for its aspect.
pub fn import_rubric(project: &Project, mut rubric: Rubric) -> Result<Outcome> {
    if rubric.criteria.is_empty() {
        return Err(Error::precondition("no criteria"));
    }
    if let Some(c) = rubric.criteria.iter().find(|c| c.accepted_values.is_empty()) {
        return Err(Error::precondition(format!("criterion '{}' has no accepted values", c.name)));
    }
    rubric.version = next_rubric_version(project, rubric.aspect);
    Ok(Outcome::of(vec![Event::RubricStored { rubric }]))
}

/// Records human judgments. Targets must exist; Likert ratings are only
/// accepted on the mapping aspect.
pub fn record_judgments(project: &Project, judgments: Vec<HumanJudgment>) -> Result<Outcome> {
    let unknown: Vec<String> = judgments
        .iter()
        .filter(|j| !project.descriptions.contains_key(&j.target_id))
        .map(|j| j.target_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::precondition_ids("judgments name unknown targets", unknown));
    }
    for j in &judgments {
        j.check()
            .map_err(|m| Error::precondition_ids(m, vec![j.target_id.clone()]))?;
    }
    Ok(Outcome::of(
        judgments
            .into_iter()
            .map(|judgment| Event::JudgmentRecorded { judgment })
            .collect(),
    ))
}

/// Per-kind description counts, for progress messages.
pub fn description_counts(project: &Project) -> BTreeMap<DescriptionKind, usize> {
    let mut out = BTreeMap::new();
    for d in project.descriptions.values() {
        *out.entry(d.kind).or_default() += 1;
    }
    out
}
