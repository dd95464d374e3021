use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::event::{AssignmentReason, Event, FailureRecord};
use crate::discovery::ClusterView;
use crate::elicitation::ProviderTranscript;
use crate::error::{Error, Result};
use crate::schema::{
    check_concept, check_conversation, check_description, check_embedding, check_grounding,
    Aspect, AssignmentProvenance, ConceptAssignment, Conversation, DescriptionKind,
    DescriptionStatus, EmbeddingRecord, HumanJudgment, NormConcept, NormDescription,
    Provenance, SymbolicGrounding, ViolationReport,
};
use crate::verification::{Decision, Rubric, VerificationVerdict, Workflow};

/// Project state: the fold of the event log.
///
/// Maps are ordered so the serialized form is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub version: u64,
    pub round: u32,
    pub conversations: BTreeMap<String, Conversation>,
    pub descriptions: BTreeMap<String, NormDescription>,
    pub embeddings: BTreeMap<String, EmbeddingRecord>,
    pub concepts: BTreeMap<String, NormConcept>,
    pub assignments: Vec<ConceptAssignment>,
    pub clusters: Vec<ClusterView>,
    pub archived_clusters: Vec<ClusterView>,
    /// Concepts with good/bad marks not yet consumed by a reassignment.
    pub marks_pending: BTreeSet<String>,
    pub groundings: BTreeMap<String, SymbolicGrounding>,
    pub judgments: Vec<HumanJudgment>,
    pub rubrics: BTreeMap<Aspect, Vec<Rubric>>,
    pub verdicts: Vec<VerificationVerdict>,
    pub transcripts: BTreeMap<String, ProviderTranscript>,
    pub failures: Vec<FailureRecord>,
}

fn reject(reports: Vec<ViolationReport>) -> Result<()> {
    match reports.into_iter().next() {
        None => Ok(()),
        Some(r) => Err(Error::invariant(r.rule, format!("{}: {}", r.target_id, r.message))),
    }
}

impl Project {
    pub fn active_assignment(&self, description_id: &str) -> Option<&ConceptAssignment> {
        self.assignments
            .iter()
            .find(|a| a.active && a.description_id == description_id)
    }

    /// Active assignment per description id.
    pub fn active_assignments(&self) -> HashMap<&str, &ConceptAssignment> {
        self.assignments
            .iter()
            .filter(|a| a.active)
            .map(|a| (a.description_id.as_str(), a))
            .collect()
    }

    /// Concepts ordered by creation.
    pub fn concepts_in_order(&self) -> Vec<&NormConcept> {
        let mut v: Vec<_> = self.concepts.values().collect();
        v.sort_by(|a, b| a.created_at_version.cmp(&b.created_at_version).then(a.id.cmp(&b.id)));
        v
    }

    pub fn concept_by_name(&self, name: &str) -> Option<&NormConcept> {
        self.concepts.values().find(|c| c.name == name)
    }

    /// Norm descriptions eligible for concept discovery (not discarded).
    pub fn live_norms(&self) -> impl Iterator<Item = &NormDescription> {
        self.descriptions
            .values()
            .filter(|d| d.kind == DescriptionKind::Norm && d.status != DescriptionStatus::Discarded)
    }

    /// Live norm descriptions with no active assignment, in id order.
    pub fn unmapped_ids(&self) -> Vec<String> {
        let active = self.active_assignments();
        self.live_norms()
            .filter(|d| !active.contains_key(d.id.as_str()))
            .map(|d| d.id.clone())
            .collect()
    }

    pub fn verdict(&self, target_id: &str, aspect: Aspect, workflow: Workflow) -> Option<&VerificationVerdict> {
        self.verdicts
            .iter()
            .find(|v| v.target_id == target_id && v.aspect == aspect && v.workflow == workflow)
    }

    pub fn latest_rubric(&self, aspect: Aspect) -> Option<&Rubric> {
        self.rubrics.get(&aspect).and_then(|v| v.last())
    }

    /// Deterministic serialized form.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("project serializes")
    }

    /// Applies one event, or rejects it naming the invariant it would break.
    /// A rejected event leaves the state untouched.
    pub fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::ConversationAdded { conversation } => {
                if self.conversations.contains_key(&conversation.id) {
                    return Err(Error::invariant(
                        "conversation_id_unique",
                        format!("conversation '{}' already exists", conversation.id),
                    ));
                }
                reject(check_conversation(conversation))?;
                self.conversations
                    .insert(conversation.id.clone(), conversation.clone());
            }
            Event::ConversationFilled { conversation } => {
                let old = self
                    .conversations
                    .get(&conversation.id)
                    .ok_or_else(|| Error::not_found("conversation", &conversation.id))?;
                reject(check_conversation(conversation))?;
                if !gold_preserved(old, conversation) {
                    return Err(Error::invariant(
                        "gold_fields_immutable",
                        format!("filling '{}' would change gold data", conversation.id),
                    ));
                }
                self.conversations
                    .insert(conversation.id.clone(), conversation.clone());
            }
            Event::DescriptionAdded { description } => {
                if self.descriptions.contains_key(&description.id) {
                    return Err(Error::invariant(
                        "description_id_unique",
                        format!("description '{}' already exists", description.id),
                    ));
                }
                if description.status != DescriptionStatus::Raw {
                    return Err(Error::invariant(
                        "description_initial_status",
                        "new descriptions start raw",
                    ));
                }
                reject(check_description(description, &self.descriptions, &self.conversations))?;
                self.descriptions
                    .insert(description.id.clone(), description.clone());
            }
            Event::EmbeddingAdded { record } => {
                let reference = self
                    .embeddings
                    .values()
                    .find(|e| e.target_id != record.target_id);
                reject(check_embedding(record, reference))?;
                self.embeddings
                    .insert(record.target_id.clone(), record.clone());
            }
            Event::ClustersComputed { round, clusters, .. } => {
                if *round != self.round + 1 {
                    return Err(Error::invariant(
                        "round_sequence",
                        format!("round {round} does not follow {}", self.round),
                    ));
                }
                let active = self.active_assignments();
                for c in clusters {
                    if let Some(m) = c.members.iter().find(|m| active.contains_key(m.as_str())) {
                        return Err(Error::invariant(
                            "clusters_cover_unmapped",
                            format!("cluster {} contains mapped description '{m}'", c.cluster_id),
                        ));
                    }
                }
                let previous = std::mem::replace(&mut self.clusters, clusters.clone());
                self.archived_clusters.extend(previous);
                self.round = *round;
            }
            Event::ConceptCreated {
                concept,
                assignments,
            } => self.apply_concept(concept, assignments)?,
            Event::MarksRecorded {
                concept_id,
                good,
                bad,
                ..
            } => self.apply_marks(concept_id, good, bad)?,
            Event::AssignmentsUpdated {
                reason,
                assign,
                unassign,
            } => self.apply_assignments(*reason, assign, unassign)?,
            Event::GroundingRecorded { grounding } => {
                match self.active_assignment(&grounding.description_id) {
                    Some(a) if a.concept_id == grounding.concept_id => {}
                    _ => {
                        return Err(Error::invariant(
                            "grounding_requires_assignment",
                            format!(
                                "'{}' is not actively assigned to '{}'",
                                grounding.description_id, grounding.concept_id
                            ),
                        ))
                    }
                }
                reject(check_grounding(grounding))?;
                self.groundings
                    .insert(grounding.description_id.clone(), grounding.clone());
            }
            Event::JudgmentRecorded { judgment } => {
                judgment
                    .check()
                    .map_err(|m| Error::invariant("judgment_valid", m))?;
                let same = |j: &HumanJudgment| {
                    j.target_id == judgment.target_id
                        && j.annotator_id == judgment.annotator_id
                        && j.aspect == judgment.aspect
                };
                match self.judgments.iter_mut().find(|j| same(j)) {
                    Some(existing) => *existing = judgment.clone(),
                    None => self.judgments.push(judgment.clone()),
                }
            }
            Event::RubricStored { rubric } => {
                let versions = self.rubrics.entry(rubric.aspect).or_default();
                let expected = versions.last().map_or(1, |r| r.version + 1);
                if rubric.version != expected {
                    return Err(Error::invariant(
                        "rubric_version_sequence",
                        format!("rubric version {}, expected {expected}", rubric.version),
                    ));
                }
                versions.push(rubric.clone());
            }
            Event::VerdictRecorded { verdict } => self.apply_verdict(verdict)?,
            Event::TranscriptStored { transcript } => {
                let key = transcript.key();
                if self.transcripts.contains_key(&key) {
                    return Err(Error::invariant(
                        "transcript_unique",
                        format!("transcript '{key}' already stored"),
                    ));
                }
                self.transcripts.insert(key, transcript.clone());
            }
            Event::FailureRecorded { failure } => self.failures.push(failure.clone()),
        }
        self.version += 1;
        Ok(())
    }

    fn apply_concept(&mut self, concept: &NormConcept, assignments: &[ConceptAssignment]) -> Result<()> {
        if self.concepts.contains_key(&concept.id) {
            return Err(Error::invariant("concept_id_unique", format!("concept '{}' exists", concept.id)));
        }
        if let Some(other) = self.concept_by_name(&concept.name) {
            return Err(Error::invariant(
                "concept_name_unique",
                format!("name '{}' already used by '{}'", concept.name, other.id),
            ));
        }
        reject(check_concept(concept))?;
        if !concept.good_ids.is_empty() || !concept.bad_ids.is_empty() {
            return Err(Error::invariant("example_sets_disjoint", "new concepts carry seeds only"));
        }
        let active = self.active_assignments();
        for seed in &concept.seed_ids {
            let d = self
                .descriptions
                .get(seed)
                .ok_or_else(|| Error::not_found("description", seed))?;
            if d.kind != DescriptionKind::Norm || d.status == DescriptionStatus::Discarded {
                return Err(Error::invariant("seed_is_live_norm", format!("seed '{seed}' is not a live norm")));
            }
            if let Some(a) = active.get(seed.as_str()) {
                return Err(Error::invariant(
                    "many_to_one",
                    format!("seed '{seed}' already assigned to '{}'", a.concept_id),
                ));
            }
        }
        let seeds: HashSet<&str> = concept.seed_ids.iter().map(String::as_str).collect();
        let covered: HashSet<&str> = assignments.iter().map(|a| a.description_id.as_str()).collect();
        let well_formed = assignments.len() == seeds.len()
            && covered == seeds
            && assignments.iter().all(|a| {
                a.active
                    && a.concept_id == concept.id
                    && a.provenance == AssignmentProvenance::HumanSeed
            });
        if !well_formed {
            return Err(Error::invariant(
                "seed_assignments",
                "every seed needs exactly one active human_seed assignment",
            ));
        }
        self.concepts.insert(concept.id.clone(), concept.clone());
        self.assignments.extend(assignments.iter().cloned());
        Ok(())
    }

    fn apply_marks(&mut self, concept_id: &str, good: &[String], bad: &[String]) -> Result<()> {
        let concept = self
            .concepts
            .get(concept_id)
            .ok_or_else(|| Error::not_found("concept", concept_id))?;
        for id in good.iter().chain(bad) {
            if !self.descriptions.contains_key(id) {
                return Err(Error::not_found("description", id));
            }
            if concept.seed_ids.contains(id) {
                return Err(Error::invariant(
                    "example_sets_disjoint",
                    format!("'{id}' is already a seed of '{concept_id}'"),
                ));
            }
        }
        if let Some(id) = good.iter().find(|g| bad.contains(g)) {
            return Err(Error::invariant(
                "example_sets_disjoint",
                format!("'{id}' marked both good and bad"),
            ));
        }
        let concept = self.concepts.get_mut(concept_id).expect("checked above");
        for id in good {
            concept.bad_ids.retain(|b| b != id);
            if !concept.good_ids.contains(id) {
                concept.good_ids.push(id.clone());
            }
        }
        for id in bad {
            concept.good_ids.retain(|g| g != id);
            if !concept.bad_ids.contains(id) {
                concept.bad_ids.push(id.clone());
            }
        }
        self.marks_pending.insert(concept_id.to_owned());
        Ok(())
    }

    fn apply_assignments(
        &mut self,
        reason: AssignmentReason,
        assign: &[ConceptAssignment],
        unassign: &[String],
    ) -> Result<()> {
        let mut touched = HashSet::new();
        for id in unassign.iter().chain(assign.iter().map(|a| &a.description_id)) {
            if !touched.insert(id.as_str()) {
                return Err(Error::invariant("many_to_one", format!("'{id}' updated twice in one event")));
            }
        }
        let active = self.active_assignments();
        for id in unassign {
            match active.get(id.as_str()) {
                None => {
                    return Err(Error::invariant("unassign_requires_assignment", format!("'{id}' is not assigned")))
                }
                Some(a) if a.provenance == AssignmentProvenance::HumanSeed => {
                    return Err(Error::invariant("human_seed_fixed", format!("'{id}' is a human seed")))
                }
                _ => {}
            }
        }
        for a in assign {
            if a.provenance == AssignmentProvenance::HumanSeed || !a.active {
                return Err(Error::invariant(
                    "automated_provenance",
                    "automated steps add active knn/reassigned assignments only",
                ));
            }
            if !(-1.0..=1.0).contains(&a.score) || a.score.is_nan() {
                return Err(Error::invariant("score_range", format!("score {} outside [-1, 1]", a.score)));
            }
            if !self.concepts.contains_key(&a.concept_id) {
                return Err(Error::not_found("concept", &a.concept_id));
            }
            match self.descriptions.get(&a.description_id) {
                Some(d) if d.kind == DescriptionKind::Norm && d.status != DescriptionStatus::Discarded => {}
                Some(_) => {
                    return Err(Error::invariant(
                        "seed_is_live_norm",
                        format!("'{}' is not a live norm", a.description_id),
                    ))
                }
                None => return Err(Error::not_found("description", &a.description_id)),
            }
            if let Some(cur) = active.get(a.description_id.as_str()) {
                if cur.provenance == AssignmentProvenance::HumanSeed {
                    return Err(Error::invariant(
                        "human_seed_fixed",
                        format!("'{}' is a human seed", a.description_id),
                    ));
                }
            }
        }
        let replaced: HashSet<&str> = touched;
        for existing in self.assignments.iter_mut() {
            if existing.active && replaced.contains(existing.description_id.as_str()) {
                existing.active = false;
            }
        }
        self.assignments.extend(assign.iter().cloned());
        if reason == AssignmentReason::Reassign {
            self.marks_pending.clear();
        }
        Ok(())
    }

    fn apply_verdict(&mut self, verdict: &VerificationVerdict) -> Result<()> {
        if self
            .verdict(&verdict.target_id, verdict.aspect, verdict.workflow)
            .is_some()
        {
            return Err(Error::invariant(
                "verdict_once",
                format!(
                    "'{}' already has a {} {} verdict",
                    verdict.target_id, verdict.workflow, verdict.aspect
                ),
            ));
        }
        let description = self
            .descriptions
            .get(&verdict.target_id)
            .ok_or_else(|| Error::not_found("description", &verdict.target_id))?;
        if verdict.workflow == Workflow::MultiAgent && !verdict.scores.iter().any(|s| s.score.is_some()) {
            return Err(Error::invariant(
                "multiagent_scores",
                "multi-agent verdict without a robust criterion score",
            ));
        }
        if verdict.aspect == Aspect::Relevance {
            let next = match (verdict.decision, verdict.workflow) {
                (Decision::Discard, _) => DescriptionStatus::Discarded,
                (Decision::Retain, Workflow::SelfCheck) => DescriptionStatus::SelfVerified,
                (Decision::Retain, Workflow::MultiAgent) => DescriptionStatus::AgentVerified,
            };
            if description.status == DescriptionStatus::Discarded {
                return Err(Error::invariant(
                    "status_forward_only",
                    format!("'{}' is already discarded", verdict.target_id),
                ));
            }
            if description.status.can_transition_to(next) {
                self.descriptions
                    .get_mut(&verdict.target_id)
                    .expect("checked above")
                    .status = next;
            }
        }
        self.verdicts.push(verdict.clone());
        Ok(())
    }
}

/// True when every gold field of `old` appears unchanged in `new`.
fn gold_preserved(old: &Conversation, new: &Conversation) -> bool {
    if old.turns != new.turns || old.source != new.source || old.language != new.language {
        return false;
    }
    let gold_rels: Vec<_> = old
        .relationships
        .iter()
        .filter(|r| r.provenance == Provenance::Gold)
        .collect();
    if !gold_rels.iter().all(|r| new.relationships.contains(r)) {
        return false;
    }
    if old.settings.field_provenance == Some(Provenance::Gold)
        && (new.settings.field != old.settings.field
            || new.settings.field_provenance != old.settings.field_provenance)
    {
        return false;
    }
    for (k, a) in &old.settings.attributes {
        if a.provenance == Provenance::Gold && new.settings.attributes.get(k) != Some(a) {
            return false;
        }
    }
    match &old.summary {
        Some(s) if s.provenance == Provenance::Gold => new.summary.as_ref() == Some(s),
        _ => true,
    }
}
