//! Invariant checks shared by the store (which rejects bad events) and by
//! [`validate_project`] (which audits a loaded snapshot).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::*;
use crate::store::Project;
use crate::verification::Workflow;

/// One broken invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub target_id: String,
    pub rule: String,
    pub message: String,
}

impl ViolationReport {
    fn new(target_id: &str, rule: &str, message: impl Into<String>) -> Self {
        Self {
            target_id: target_id.to_owned(),
            rule: rule.to_owned(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_conversation(c: &Conversation) -> Vec<ViolationReport> {
    let mut out = Vec::new();
    let id = c.id.as_str();
    if c.id.trim().is_empty() {
        out.push(ViolationReport::new(id, "conversation_id_non_empty", "conversation id is empty"));
    }
    if c.turns.is_empty() {
        out.push(ViolationReport::new(id, "turns_non_empty", "conversation has no turns"));
    }
    for (i, t) in c.turns.iter().enumerate() {
        if t.index != i {
            out.push(ViolationReport::new(
                id,
                "turn_indices_contiguous",
                format!("turn at position {i} has index {}", t.index),
            ));
        }
        if t.text.trim().is_empty() {
            out.push(ViolationReport::new(id, "turn_text_non_empty", format!("turn {i} has empty text")));
        }
    }
    let speakers = c.speakers();
    for r in &c.relationships {
        if r.speaker_a == r.speaker_b {
            out.push(ViolationReport::new(
                id,
                "relationship_distinct",
                format!("relationship links {} to itself", r.speaker_a),
            ));
        }
        for end in [&r.speaker_a, &r.speaker_b] {
            if !speakers.contains(end.as_str()) {
                out.push(ViolationReport::new(
                    id,
                    "relationship_endpoints",
                    format!("relationship endpoint '{end}' is not a speaker"),
                ));
            }
        }
    }
    if let Some(field) = &c.settings.field {
        if field.trim().is_empty() {
            out.push(ViolationReport::new(id, "settings_field_non_empty", "settings field is empty"));
        }
        if c.settings.field_provenance.is_none() {
            out.push(ViolationReport::new(id, "settings_provenance", "settings field lacks provenance"));
        }
    }
    out
}

pub(crate) fn check_description(
    d: &NormDescription,
    descriptions: &BTreeMap<String, NormDescription>,
    conversations: &BTreeMap<String, Conversation>,
) -> Vec<ViolationReport> {
    let mut out = Vec::new();
    let id = d.id.as_str();
    if !conversations.contains_key(&d.conversation_id) {
        out.push(ViolationReport::new(
            id,
            "description_conversation_exists",
            format!("unknown conversation '{}'", d.conversation_id),
        ));
    }
    match (d.kind, &d.parent_id) {
        (DescriptionKind::Effect, None) => {
            out.push(ViolationReport::new(id, "effect_parent_required", "effect has no parent violation"))
        }
        (DescriptionKind::Effect, Some(parent)) => match descriptions.get(parent) {
            Some(p) if p.kind == DescriptionKind::Violation => {}
            Some(_) => out.push(ViolationReport::new(
                id,
                "effect_parent_violation",
                "effect parent must be violation",
            )),
            None => out.push(ViolationReport::new(
                id,
                "effect_parent_violation",
                format!("effect parent '{parent}' does not exist"),
            )),
        },
        (_, Some(_)) => out.push(ViolationReport::new(
            id,
            "parent_only_for_effects",
            "only effects may have a parent",
        )),
        (_, None) => {}
    }
    out
}

pub(crate) fn check_concept(c: &NormConcept) -> Vec<ViolationReport> {
    let mut out = Vec::new();
    let id = c.id.as_str();
    if !(MIN_SEEDS..=MAX_SEEDS).contains(&c.seed_ids.len()) {
        out.push(ViolationReport::new(
            id,
            "seed_count",
            format!("concept has {} seeds, expected {MIN_SEEDS}..={MAX_SEEDS}", c.seed_ids.len()),
        ));
    }
    let seeds: BTreeSet<&String> = c.seed_ids.iter().collect();
    let good: BTreeSet<&String> = c.good_ids.iter().collect();
    let bad: BTreeSet<&String> = c.bad_ids.iter().collect();
    if seeds.len() != c.seed_ids.len() || good.len() != c.good_ids.len() || bad.len() != c.bad_ids.len() {
        out.push(ViolationReport::new(id, "example_sets_unique", "duplicate id inside an example set"));
    }
    if !seeds.is_disjoint(&good) || !seeds.is_disjoint(&bad) || !good.is_disjoint(&bad) {
        out.push(ViolationReport::new(
            id,
            "example_sets_disjoint",
            "seed, good and bad sets must be pairwise disjoint",
        ));
    }
    let missing = c.structure().missing_fields();
    if !missing.is_empty() {
        out.push(ViolationReport::new(
            id,
            "symbolic_structure_complete",
            format!("missing fields: {}", missing.join(", ")),
        ));
    }
    out
}

pub(crate) fn check_embedding(
    e: &EmbeddingRecord,
    reference: Option<&EmbeddingRecord>,
) -> Vec<ViolationReport> {
    let mut out = Vec::new();
    let id = e.target_id.as_str();
    if e.vector.is_empty() {
        out.push(ViolationReport::new(id, "embedding_non_empty", "embedding vector is empty"));
    }
    if let Some(r) = reference {
        if r.vector.len() != e.vector.len() {
            out.push(ViolationReport::new(
                id,
                "embedding_dims_consistent",
                format!("length {} differs from project length {}", e.vector.len(), r.vector.len()),
            ));
        }
        if r.model_tag != e.model_tag {
            out.push(ViolationReport::new(
                id,
                "embedding_model_consistent",
                format!("model '{}' differs from project model '{}'", e.model_tag, r.model_tag),
            ));
        }
    }
    if e.normalized {
        let n = crate::discovery::vector::norm(&e.vector);
        if (n - 1.0).abs() > 1e-6 {
            out.push(ViolationReport::new(
                id,
                "embedding_normalized",
                format!("normalized vector has norm {n}"),
            ));
        }
    }
    out
}

pub(crate) fn check_grounding(g: &SymbolicGrounding) -> Vec<ViolationReport> {
    let mut out = Vec::new();
    let id = g.description_id.as_str();
    let downstream = g.relevance.is_some()
        || g.enactor_role.is_some()
        || g.acceptor_role.is_some()
        || g.violation_status.is_some()
        || g.violation.is_some();
    if g.compatibility == Compatibility::NoMatch && downstream {
        out.push(ViolationReport::new(
            id,
            "grounding_short_circuit",
            "fields after compatibility require a match",
        ));
    }
    let violating = g.violation_status == Some(ViolationStatus::Violate);
    if violating != g.violation.is_some() {
        out.push(ViolationReport::new(
            id,
            "violation_block_iff_violate",
            "violation details present iff status is violate",
        ));
    }
    out
}

pub(crate) fn check_assignments(project: &Project) -> Vec<ViolationReport> {
    let mut out = Vec::new();
    let mut active: HashMap<&str, usize> = HashMap::new();
    for a in &project.assignments {
        if !project.descriptions.contains_key(&a.description_id) || !project.concepts.contains_key(&a.concept_id) {
            out.push(ViolationReport::new(
                &a.description_id,
                "assignment_refs",
                format!("assignment to '{}' references a missing record", a.concept_id),
            ));
        }
        if !(-1.0..=1.0).contains(&a.score) {
            out.push(ViolationReport::new(&a.description_id, "score_range", format!("score {} outside [-1, 1]", a.score)));
        }
        if a.active {
            *active.entry(a.description_id.as_str()).or_default() += 1;
        } else if a.provenance == AssignmentProvenance::HumanSeed {
            out.push(ViolationReport::new(
                &a.description_id,
                "human_seed_fixed",
                "human seed assignment was deactivated",
            ));
        }
    }
    let mut multi: Vec<_> = active.into_iter().filter(|(_, n)| *n > 1).collect();
    multi.sort();
    for (id, _) in multi {
        out.push(ViolationReport::new(id, "many_to_one", "many-to-one violated"));
    }
    out
}

/// Audits a snapshot against every schema invariant. Empty iff consistent.
pub fn validate_project(project: &Project) -> Vec<ViolationReport> {
    let mut out = Vec::new();
    for c in project.conversations.values() {
        out.extend(check_conversation(c));
    }
    for d in project.descriptions.values() {
        out.extend(check_description(d, &project.descriptions, &project.conversations));
    }
    let mut names: HashMap<&str, &str> = HashMap::new();
    for c in project.concepts.values() {
        out.extend(check_concept(c));
        if let Some(other) = names.insert(c.name.as_str(), c.id.as_str()) {
            out.push(ViolationReport::new(
                &c.id,
                "concept_name_unique",
                format!("name '{}' also used by '{other}'", c.name),
            ));
        }
    }
    out.extend(check_assignments(project));
    let reference = project.embeddings.values().next();
    for e in project.embeddings.values() {
        out.extend(check_embedding(e, reference));
    }
    for g in project.groundings.values() {
        out.extend(check_grounding(g));
    }
    for j in &project.judgments {
        if let Err(msg) = j.check() {
            out.push(ViolationReport::new(&j.target_id, "judgment_valid", msg));
        }
    }
    for v in &project.verdicts {
        if v.workflow == Workflow::MultiAgent && !v.scores.iter().any(|s| s.score.is_some()) {
            out.push(ViolationReport::new(
                &v.target_id,
                "multiagent_scores",
                "multi-agent verdict without a robust criterion score",
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(id: &str) -> Conversation {
        Conversation {
            id: id.into(),
            source: "fixture".into(),
            language: "en".into(),
            turns: vec![
                Turn { index: 0, speaker: "A".into(), text: "hello".into(), labels: Default::default() },
                Turn { index: 1, speaker: "B".into(), text: "hi".into(), labels: Default::default() },
            ],
            relationships: vec![],
            settings: SettingsRecord::default(),
            summary: None,
        }
    }

    fn desc(id: &str, kind: DescriptionKind, parent: Option<&str>) -> NormDescription {
        NormDescription {
            id: id.into(),
            conversation_id: "c1".into(),
            kind,
            title: String::new(),
            body: id.into(),
            parent_id: parent.map(str::to_owned),
            status: DescriptionStatus::Raw,
        }
    }

    fn consistent() -> Project {
        let mut p = Project::default();
        p.conversations.insert("c1".into(), conv("c1"));
        for d in [
            desc("n1", DescriptionKind::Norm, None),
            desc("v1", DescriptionKind::Violation, None),
            desc("e1", DescriptionKind::Effect, Some("v1")),
        ] {
            p.descriptions.insert(d.id.clone(), d);
        }
        p
    }

    #[test]
    fn consistent_fixture_has_no_reports() {
        assert!(validate_project(&consistent()).is_empty());
    }

    #[test]
    fn effect_under_norm_is_reported() {
        let mut p = consistent();
        p.descriptions.get_mut("e1").unwrap().parent_id = Some("n1".into());
        let reports = validate_project(&p);
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].message, "effect parent must be violation");
        assert_eq!(reports[0].target_id, "e1");
    }

    #[test]
    fn two_active_assignments_are_reported() {
        let mut p = consistent();
        for (i, cid) in ["k1", "k2"].iter().enumerate() {
            p.concepts.insert(
                cid.to_string(),
                NormConcept {
                    id: cid.to_string(),
                    name: format!("concept {i}"),
                    description: "d".into(),
                    settings: vec!["family".into()],
                    violation_sketch: "v".into(),
                    actor_roles: "a".into(),
                    recipient_roles: "r".into(),
                    seed_ids: (0..5).map(|s| format!("s{i}{s}")).collect(),
                    good_ids: vec![],
                    bad_ids: vec![],
                    created_by: "ann".into(),
                    iteration: 1,
                    created_at_version: i as u64,
                },
            );
            p.assignments.push(ConceptAssignment {
                description_id: "n1".into(),
                concept_id: cid.to_string(),
                provenance: AssignmentProvenance::Knn,
                score: 0.9,
                iteration: 1,
                active: true,
            });
        }
        let reports = validate_project(&p);
        assert_eq!(reports.len(), 1, "{reports:?}");
        assert_eq!(reports[0].message, "many-to-one violated");
    }

    #[test]
    fn relationship_to_unknown_speaker_is_reported() {
        let mut c = conv("c1");
        c.relationships.push(Relationship {
            speaker_a: "A".into(),
            speaker_b: "Z".into(),
            relation: "friend".into(),
            provenance: Provenance::Gold,
        });
        let r = check_conversation(&c);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].rule, "relationship_endpoints");
    }
}
