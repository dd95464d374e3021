use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Project;
use crate::schema::{DescriptionKind, DescriptionStatus};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub total: u64,
    pub by_status: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub conversations: u64,
    pub summaries: u64,
    pub norms: KindCounts,
    pub violations: KindCounts,
    pub effects: KindCounts,
    pub assignments: BTreeMap<String, u64>,
    pub groundings: u64,
    pub verdicts: u64,
}

/// Per-corpus pipeline counts, shaped like a sources-and-counts table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub corpora: BTreeMap<String, CorpusCounts>,
    pub concepts: u64,
}

impl StageReport {
    pub fn corpus(&self, source: &str) -> CorpusCounts {
        self.corpora.get(source).cloned().unwrap_or_default()
    }
}

pub fn stage_accounting(project: &Project) -> StageReport {
    let mut report = StageReport {
        concepts: project.concepts.len() as u64,
        ..Default::default()
    };
    let source_of = |conversation_id: &str| {
        project
            .conversations
            .get(conversation_id)
            .map_or_else(|| "unknown".to_owned(), |c| c.source.clone())
    };
    for c in project.conversations.values() {
        let row = report.corpora.entry(c.source.clone()).or_default();
        row.conversations += 1;
        row.summaries += u64::from(c.summary.is_some());
    }
    for d in project.descriptions.values() {
        let row = report.corpora.entry(source_of(&d.conversation_id)).or_default();
        let counts = match d.kind {
            DescriptionKind::Norm => &mut row.norms,
            DescriptionKind::Violation => &mut row.violations,
            DescriptionKind::Effect => &mut row.effects,
        };
        counts.total += 1;
        *counts.by_status.entry(d.status.as_str().to_owned()).or_default() += 1;
    }
    let corpus_of_description = |id: &str| {
        project
            .descriptions
            .get(id)
            .map_or_else(|| "unknown".to_owned(), |d| source_of(&d.conversation_id))
    };
    for a in project.assignments.iter().filter(|a| a.active) {
        let row = report.corpora.entry(corpus_of_description(&a.description_id)).or_default();
        *row.assignments.entry(a.provenance.as_str().to_owned()).or_default() += 1;
    }
    for g in project.groundings.values() {
        report
            .corpora
            .entry(corpus_of_description(&g.description_id))
            .or_default()
            .groundings += 1;
    }
    for v in &project.verdicts {
        report
            .corpora
            .entry(corpus_of_description(&v.target_id))
            .or_default()
            .verdicts += 1;
    }
    report
}

impl fmt::Display for StageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let valid = |k: &KindCounts| {
            k.by_status.get(DescriptionStatus::SelfVerified.as_str()).copied().unwrap_or(0)
                + k.by_status.get(DescriptionStatus::AgentVerified.as_str()).copied().unwrap_or(0)
        };
        writeln!(
            f,
            "{:<12} {:>6} {:>6} {:>8} {:>6} {:>8} {:>6} {:>8} {:>6} {:>6} {:>6} {:>6}",
            "corpus", "convs", "summ", "norms", "valid", "viol", "valid", "effects", "seed", "knn", "reasg", "grnd"
        )?;
        for (name, c) in &self.corpora {
            let a = |k: &str| c.assignments.get(k).copied().unwrap_or(0);
            writeln!(
                f,
                "{:<12} {:>6} {:>6} {:>8} {:>6} {:>8} {:>6} {:>8} {:>6} {:>6} {:>6} {:>6}",
                name,
                c.conversations,
                c.summaries,
                c.norms.total,
                valid(&c.norms),
                c.violations.total,
                valid(&c.violations),
                c.effects.total,
                a("human_seed"),
                a("knn"),
                a("reassigned"),
                c.groundings
            )?;
        }
        writeln!(f, "concepts: {}", self.concepts)
    }
}
