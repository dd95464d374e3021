//! Evaluation against human judgments: quality and retention of a
//! refinement step, nominal Krippendorff's alpha, Likert means, and the
//! concept-by-field distribution table.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Aspect, DescriptionStatus, HumanJudgment, YesNo};
use crate::store::Project;
use crate::verification::{Decision, Workflow};

/// A ratio that may be undefined. Never a sentinel number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Metric {
    Defined { value: f64 },
    Undefined { reason: String },
}

impl Metric {
    fn ratio(num: usize, den: usize, reason: &str) -> Self {
        if den == 0 {
            Metric::Undefined {
                reason: reason.to_owned(),
            }
        } else {
            Metric::Defined {
                value: num as f64 / den as f64,
            }
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Metric::Defined { value } => Some(*value),
            Metric::Undefined { .. } => None,
        }
    }

    /// Percentage rounded to `decimals` places.
    pub fn percent(&self, decimals: i32) -> Option<f64> {
        let p = 10f64.powi(decimals);
        self.value().map(|v| (v * 100.0 * p).round() / p)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Defined { value } => write!(f, "{:.1}", value * 100.0),
            Metric::Undefined { .. } => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRetention {
    pub quality: Metric,
    pub retention: Metric,
    pub original: usize,
    pub good_original: usize,
    pub retained: usize,
    pub good_retained: usize,
}

/// Majority verdict per target over all annotators; ties count as bad.
pub fn majority_good(judgments: &[HumanJudgment], aspect: Aspect) -> BTreeMap<String, bool> {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for j in judgments.iter().filter(|j| j.aspect == aspect) {
        let t = tally.entry(j.target_id.clone()).or_default();
        match j.verdict {
            YesNo::Yes => t.0 += 1,
            YesNo::No => t.1 += 1,
        }
    }
    tally.into_iter().map(|(id, (yes, no))| (id, yes > no)).collect()
}

/// Quality is the good share of the retained set; retention is the share
/// of good originals that were retained.
pub fn quality_retention(
    original_ids: &[String],
    retained_ids: &[String],
    judgments: &[HumanJudgment],
    aspect: Aspect,
) -> Result<QualityRetention> {
    let original: BTreeSet<&str> = original_ids.iter().map(String::as_str).collect();
    let retained: BTreeSet<&str> = retained_ids.iter().map(String::as_str).collect();
    let outside: Vec<String> = retained.difference(&original).map(|s| s.to_string()).collect();
    if !outside.is_empty() {
        return Err(Error::precondition_ids("retained ids outside the original set", outside));
    }
    let good = majority_good(judgments, aspect);
    let unjudged: Vec<String> = original
        .iter()
        .filter(|id| !good.contains_key(**id))
        .map(|s| s.to_string())
        .collect();
    if !unjudged.is_empty() {
        return Err(Error::precondition_ids("original ids without a human verdict", unjudged));
    }
    let good_original = original.iter().filter(|id| good[**id]).count();
    let good_retained = retained.iter().filter(|id| good[**id]).count();
    Ok(QualityRetention {
        quality: Metric::ratio(good_retained, retained.len(), "empty retained set"),
        retention: Metric::ratio(good_retained, good_original, "no good originals"),
        original: original.len(),
        good_original,
        retained: retained.len(),
        good_retained,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub alpha: f64,
    pub items_used: usize,
    pub items_dropped: usize,
    pub pairable_values: f64,
}

/// Nominal alpha from units of ratings (one inner vec per item). Units with
/// fewer than two ratings are dropped and counted.
pub fn alpha_from_units<V: Ord + Clone>(units: &[Vec<V>]) -> Result<AlphaReport> {
    let (used, dropped): (Vec<&Vec<V>>, Vec<&Vec<V>>) = units.iter().partition(|u| u.len() >= 2);
    if used.is_empty() {
        return Err(Error::precondition("alpha needs at least one item with two or more ratings"));
    }
    let mut index: BTreeMap<V, usize> = BTreeMap::new();
    for u in &used {
        for v in u.iter() {
            let next = index.len();
            index.entry(v.clone()).or_insert(next);
        }
    }
    let k = index.len();
    let mut o = vec![vec![0.0f64; k]; k];
    for u in &used {
        let m = u.len() as f64;
        let mut counts = vec![0.0f64; k];
        for v in u.iter() {
            counts[index[v]] += 1.0;
        }
        for c in 0..k {
            for d in 0..k {
                let pairs = if c == d { counts[c] * (counts[c] - 1.0) } else { counts[c] * counts[d] };
                o[c][d] += pairs / (m - 1.0);
            }
        }
    }
    let n_c: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();
    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for d in 0..k {
            if c != d {
                observed += o[c][d];
                expected += n_c[c] * n_c[d];
            }
        }
    }
    let d_o = observed / n;
    let d_e = expected / (n * (n - 1.0));
    if d_e == 0.0 {
        return Err(Error::InvalidArgument(
            "alpha undefined: every rating has the same value (expected disagreement is 0)".into(),
        ));
    }
    Ok(AlphaReport {
        alpha: 1.0 - d_o / d_e,
        items_used: used.len(),
        items_dropped: dropped.len(),
        pairable_values: n,
    })
}

/// Nominal Krippendorff's alpha over the yes/no judgments of one aspect.
pub fn krippendorff_alpha(judgments: &[HumanJudgment], aspect: Aspect) -> Result<AlphaReport> {
    let relevant: Vec<&HumanJudgment> = judgments.iter().filter(|j| j.aspect == aspect).collect();
    let annotators: BTreeSet<&str> = relevant.iter().map(|j| j.annotator_id.as_str()).collect();
    if annotators.len() < 2 {
        return Err(Error::precondition("alpha needs at least 2 annotators"));
    }
    let mut units: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for j in relevant {
        units
            .entry(j.target_id.as_str())
            .or_default()
            .push(j.verdict == YesNo::Yes);
    }
    alpha_from_units(&units.into_values().collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertReport {
    pub mean: f64,
    pub count: usize,
}

pub fn likert_values_mean(values: &[u8]) -> Result<LikertReport> {
    if values.is_empty() {
        return Err(Error::precondition("no ratings"));
    }
    if let Some(v) = values.iter().find(|v| !(1..=5).contains(*v)) {
        return Err(Error::InvalidArgument(format!("likert value {v} outside 1-5")));
    }
    Ok(LikertReport {
        mean: values.iter().map(|&v| f64::from(v)).sum::<f64>() / values.len() as f64,
        count: values.len(),
    })
}

/// Mean of every Likert rating among the judgments.
pub fn likert_mean(judgments: &[HumanJudgment]) -> Result<LikertReport> {
    let values: Vec<u8> = judgments.iter().filter_map(|j| j.likert).collect();
    likert_values_mean(&values)
}

/// Concept-by-field counts of active assignments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDistribution {
    pub fields: Vec<String>,
    pub rows: BTreeMap<String, BTreeMap<String, u64>>,
}

impl FieldDistribution {
    pub fn count(&self, concept: &str, field: &str) -> u64 {
        self.rows
            .get(concept)
            .and_then(|r| r.get(field))
            .copied()
            .unwrap_or(0)
    }

    /// Tab-separated, one row per concept, ready for plotting.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("concept");
        for f in &self.fields {
            out.push('\t');
            out.push_str(f);
        }
        out.push('\n');
        for (concept, row) in &self.rows {
            out.push_str(concept);
            for f in &self.fields {
                out.push_str(&format!("\t{}", row.get(f).copied().unwrap_or(0)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn concept_field_distribution(project: &Project) -> FieldDistribution {
    let mut dist = FieldDistribution::default();
    let mut fields = BTreeSet::new();
    for a in project.assignments.iter().filter(|a| a.active) {
        let Some(d) = project.descriptions.get(&a.description_id) else {
            continue;
        };
        if d.status == DescriptionStatus::Discarded {
            continue;
        }
        let Some(concept) = project.concepts.get(&a.concept_id) else {
            continue;
        };
        let field = project
            .conversations
            .get(&d.conversation_id)
            .and_then(|c| c.settings.field.clone())
            .filter(|f| !f.trim().is_empty())
            .unwrap_or_else(|| "unknown".to_owned());
        fields.insert(field.clone());
        *dist
            .rows
            .entry(concept.name.clone())
            .or_default()
            .entry(field)
            .or_default() += 1;
    }
    dist.fields = fields.into_iter().collect();
    dist
}

/// One row of the quality report: a refinement stage for one aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageQuality {
    pub aspect: Aspect,
    /// `"generated"`, `"self"` or `"multiagent"`.
    pub stage: String,
    pub result: QualityRetention,
}

/// Quality and retention per aspect for the unrefined data and for each
/// verification workflow, over the human-judged targets.
pub fn quality_report(project: &Project) -> Vec<StageQuality> {
    let mut rows = Vec::new();
    for aspect in Aspect::ALL {
        let judged: Vec<String> = majority_good(&project.judgments, aspect).into_keys().collect();
        if judged.is_empty() {
            continue;
        }
        if let Ok(r) = quality_retention(&judged, &judged, &project.judgments, aspect) {
            rows.push(StageQuality {
                aspect,
                stage: "generated".into(),
                result: r,
            });
        }
        for workflow in [Workflow::SelfCheck, Workflow::MultiAgent] {
            let decisions: HashMap<&str, Decision> = project
                .verdicts
                .iter()
                .filter(|v| v.aspect == aspect && v.workflow == workflow)
                .map(|v| (v.target_id.as_str(), v.decision))
                .collect();
            let original: Vec<String> = judged
                .iter()
                .filter(|id| decisions.contains_key(id.as_str()))
                .cloned()
                .collect();
            if original.is_empty() {
                continue;
            }
            let retained: Vec<String> = original
                .iter()
                .filter(|id| decisions[id.as_str()] == Decision::Retain)
                .cloned()
                .collect();
            if let Ok(r) = quality_retention(&original, &retained, &project.judgments, aspect) {
                rows.push(StageQuality {
                    aspect,
                    stage: workflow.as_str().into(),
                    result: r,
                });
            }
        }
    }
    rows
}

/// Alpha per aspect, where defined.
pub fn agreement_report(project: &Project) -> BTreeMap<Aspect, std::result::Result<AlphaReport, String>> {
    Aspect::ALL
        .into_iter()
        .filter(|a| project.judgments.iter().any(|j| j.aspect == *a))
        .map(|a| (a, krippendorff_alpha(&project.judgments, a).map_err(|e| e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(target: &str, annotator: &str, yes: bool) -> HumanJudgment {
        HumanJudgment {
            target_id: target.into(),
            annotator_id: annotator.into(),
            aspect: Aspect::Relevance,
            verdict: if yes { YesNo::Yes } else { YesNo::No },
            likert: None,
        }
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identity_refinement_all_good() {
        let js = vec![j("a", "x", true), j("b", "x", true)];
        let r = quality_retention(&ids(&["a", "b"]), &ids(&["a", "b"]), &js, Aspect::Relevance).unwrap();
        assert_eq!(r.quality.value(), Some(1.0));
        assert_eq!(r.retention.value(), Some(1.0));
    }

    #[test]
    fn empty_retained_is_undefined_quality() {
        let js = vec![j("a", "x", true)];
        let r = quality_retention(&ids(&["a"]), &[], &js, Aspect::Relevance).unwrap();
        assert!(r.quality.value().is_none());
        assert_eq!(r.retention.value(), Some(0.0));
    }

    #[test]
    fn ties_count_as_bad() {
        let js = vec![j("a", "x", true), j("a", "y", false)];
        assert!(!majority_good(&js, Aspect::Relevance)["a"]);
    }

    #[test]
    fn perfect_agreement_is_one() {
        let units = vec![vec![1, 1], vec![0, 0], vec![1, 1, 1]];
        assert_eq!(alpha_from_units(&units).unwrap().alpha, 1.0);
    }

    #[test]
    fn constant_ratings_error() {
        assert!(alpha_from_units(&[vec![1, 1], vec![1, 1]]).is_err());
    }

    #[test]
    fn likert_arithmetic() {
        let r = likert_values_mean(&[4, 4, 5]).unwrap();
        assert!((r.mean - 13.0 / 3.0).abs() < 1e-12);
        assert!(likert_values_mean(&[]).is_err());
        assert!(likert_values_mean(&[0]).is_err());
    }
}
