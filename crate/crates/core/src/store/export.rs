//! Schema-graph export: one JSON record per line, nodes first, then edges.
//!
//! Every undirected schema link is written as two directed edge records.
//! Concept nodes are shared by every conversation that maps to them.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Project;
use crate::error::{Error, Result};
use crate::schema::{Aspect, DescriptionKind, DescriptionStatus};
use crate::verification::{Decision, Workflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Conversation,
    Turn,
    Relationship,
    Settings,
    Summary,
    SocialNorm,
    Violation,
    Effect,
    NormConcept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub node_type: NodeType,
    pub label: String,
    pub attrs: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub target: String,
    pub relation: String,
    pub reverse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum GraphRecord {
    Node(GraphNode),
    Edge(GraphEdge),
}

#[derive(Default)]
struct Builder {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
}

impl Builder {
    fn node(&mut self, id: String, node_type: NodeType, label: &str, attrs: BTreeMap<String, Value>) {
        self.nodes.push(GraphNode {
            id,
            node_type,
            label: label.to_owned(),
            attrs,
        });
    }

    fn link(&mut self, a: &str, b: &str, relation: &str) {
        for (source, target, reverse) in [(a, b, false), (b, a, true)] {
            self.edges.push(GraphEdge {
                source: source.to_owned(),
                target: target.to_owned(),
                relation: relation.to_owned(),
                reverse,
            });
        }
    }
}

fn attrs<const N: usize>(pairs: [(&str, Value); N]) -> BTreeMap<String, Value> {
    pairs
        .into_iter()
        .filter(|(_, v)| !v.is_null())
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
}

pub fn conversation_node_id(id: &str) -> String {
    format!("conversation:{id}")
}

pub fn description_node_id(id: &str) -> String {
    format!("description:{id}")
}

pub fn concept_node_id(id: &str) -> String {
    format!("concept:{id}")
}

/// Builds the graph for every non-discarded item in the project.
///
/// Fails on the first edge whose endpoint is not a node.
pub fn export_graph(project: &Project) -> Result<Vec<GraphRecord>> {
    let mut g = Builder::default();

    let live = |id: &str| {
        project
            .descriptions
            .get(id)
            .is_some_and(|d| d.status != DescriptionStatus::Discarded)
    };

    for conv in project.conversations.values() {
        let cid = conversation_node_id(&conv.id);
        g.node(
            cid.clone(),
            NodeType::Conversation,
            &conv.id,
            attrs([
                ("source", Value::from(conv.source.clone())),
                ("language", Value::from(conv.language.clone())),
            ]),
        );
        if !conv.settings.is_empty() {
            let sid = format!("settings:{}", conv.id);
            let mut a: BTreeMap<String, Value> = conv
                .settings
                .attributes
                .iter()
                .map(|(k, v)| (k.clone(), Value::from(v.value.clone())))
                .collect();
            if let Some(field) = &conv.settings.field {
                a.insert("field".into(), Value::from(field.clone()));
            }
            g.node(sid.clone(), NodeType::Settings, conv.settings.field.as_deref().unwrap_or("unknown"), a);
            g.link(&cid, &sid, "has_settings");
        }
        if let Some(summary) = &conv.summary {
            let sid = format!("summary:{}", conv.id);
            g.node(sid.clone(), NodeType::Summary, &summary.text, BTreeMap::new());
            g.link(&cid, &sid, "has_summary");
        }
        for (i, rel) in conv.relationships.iter().enumerate() {
            let rid = format!("relationship:{}:{i}", conv.id);
            g.node(
                rid.clone(),
                NodeType::Relationship,
                &rel.relation,
                attrs([
                    ("speaker_a", Value::from(rel.speaker_a.clone())),
                    ("speaker_b", Value::from(rel.speaker_b.clone())),
                ]),
            );
            g.link(&cid, &rid, "has_relationship");
        }
        for turn in &conv.turns {
            let tid = format!("turn:{}:{}", conv.id, turn.index);
            let mut a = attrs([
                ("index", Value::from(turn.index)),
                ("speaker", Value::from(turn.speaker.clone())),
            ]);
            for (task, label) in &turn.labels {
                a.insert(task.as_str().to_owned(), Value::from(label.clone()));
            }
            g.node(tid.clone(), NodeType::Turn, &turn.text, a);
            g.link(&cid, &tid, "has_turn");
        }
    }

    for d in project.descriptions.values().filter(|d| live(&d.id)) {
        if d.kind == DescriptionKind::Effect && !d.parent_id.as_deref().is_some_and(live) {
            continue;
        }
        let did = description_node_id(&d.id);
        let node_type = match d.kind {
            DescriptionKind::Norm => NodeType::SocialNorm,
            DescriptionKind::Violation => NodeType::Violation,
            DescriptionKind::Effect => NodeType::Effect,
        };
        g.node(
            did.clone(),
            node_type,
            &d.text(),
            attrs([("status", Value::from(d.status.as_str()))]),
        );
        match (d.kind, &d.parent_id) {
            (DescriptionKind::Effect, Some(parent)) => {
                g.link(&description_node_id(parent), &did, "has_effect")
            }
            (kind, _) => g.link(
                &conversation_node_id(&d.conversation_id),
                &did,
                &format!("has_{}", kind.as_str()),
            ),
        }
    }

    let mut used_concepts = Vec::new();
    let mut mapped = Vec::new();
    for a in project.assignments.iter().filter(|a| a.active && live(&a.description_id)) {
        let rejected = project
            .verdicts
            .iter()
            .any(|v| v.target_id == a.description_id && v.aspect == Aspect::Mapping && v.decision == Decision::Discard && v.workflow == Workflow::MultiAgent);
        if rejected {
            continue;
        }
        used_concepts.push(a.concept_id.clone());
        mapped.push(a);
    }
    used_concepts.sort();
    used_concepts.dedup();
    for cid in &used_concepts {
        // a missing concept surfaces below as a dangling edge
        if let Some(c) = project.concepts.get(cid) {
            g.node(
                concept_node_id(cid),
                NodeType::NormConcept,
                &c.name,
                attrs([
                    ("description", Value::from(c.description.clone())),
                    ("settings", Value::from(c.settings.clone())),
                    ("violation_sketch", Value::from(c.violation_sketch.clone())),
                    ("actor_roles", Value::from(c.actor_roles.clone())),
                    ("recipient_roles", Value::from(c.recipient_roles.clone())),
                ]),
            );
        }
    }
    mapped.sort_by(|a, b| a.description_id.cmp(&b.description_id));
    for a in mapped {
        g.link(
            &description_node_id(&a.description_id),
            &concept_node_id(&a.concept_id),
            "instance_of",
        );
    }

    let ids: HashSet<&str> = g.nodes.iter().map(|n| n.id.as_str()).collect();
    if let Some(e) = g
        .edges
        .iter()
        .find(|e| !ids.contains(e.source.as_str()) || !ids.contains(e.target.as_str()))
    {
        return Err(Error::invariant(
            "dangling_edge",
            format!("{} -[{}]-> {}", e.source, e.relation, e.target),
        ));
    }

    let mut out: Vec<GraphRecord> = g.nodes.into_iter().map(GraphRecord::Node).collect();
    out.extend(g.edges.into_iter().map(GraphRecord::Edge));
    Ok(out)
}

pub fn write_graph<W: Write>(records: &[GraphRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
