//! Nearest-centroid scoring of descriptions against concept centers.

use serde::{Deserialize, Serialize};

use super::vector::{cosine, normalized, normalized_mean};
use crate::error::{Error, Result};
use crate::schema::{AssignmentProvenance, ConceptAssignment};
use crate::store::Project;

/// Good and bad centers of one concept.
///
/// `good_centroid` is the normalized mean of the seed and good-mark
/// embeddings; `bad_centroid` the normalized mean of the bad marks, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptCenters {
    pub concept_id: String,
    pub good_centroid: Vec<f64>,
    pub bad_centroid: Option<Vec<f64>>,
}

/// Best concept for one description, if any clears the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub center: usize,
    pub score: f64,
}

/// Scores `v` against every center; `lambda = None` scores the good center
/// only, `Some(l)` subtracts `l * cosine(v, bad)` where a bad center exists.
/// Ties go to the earlier center. Returns the argmax when it reaches `tau`.
pub fn best_center(v: &[f64], centers: &[ConceptCenters], tau: f64, lambda: Option<f64>) -> Option<Choice> {
    let mut best: Option<Choice> = None;
    for (i, c) in centers.iter().enumerate() {
        let mut score = cosine(v, &c.good_centroid);
        if let (Some(l), Some(bad)) = (lambda, &c.bad_centroid) {
            score -= l * cosine(v, bad);
        }
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(Choice { center: i, score });
        }
    }
    best.filter(|b| b.score >= tau)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau = {tau} must lie in [-1, 1]")));
    }
    Ok(())
}

fn embedding(project: &Project, id: &str) -> Option<Vec<f64>> {
    project.embeddings.get(id).map(|e| normalized(&e.vector))
}

/// Centers for every concept in creation order.
pub fn concept_centers(project: &Project) -> Result<Vec<ConceptCenters>> {
    let dims = project
        .embeddings
        .values()
        .next()
        .map(|e| e.vector.len())
        .unwrap_or(0);
    let mut out = Vec::new();
    for concept in project.concepts_in_order() {
        let positives: Vec<Vec<f64>> = concept
            .seed_ids
            .iter()
            .chain(&concept.good_ids)
            .filter_map(|id| embedding(project, id))
            .collect();
        if !concept.seed_ids.iter().any(|id| project.embeddings.contains_key(id)) {
            return Err(Error::precondition_ids(
                format!("concept '{}' has no seed embedding", concept.name),
                vec![concept.id.clone()],
            ));
        }
        let good_centroid = normalized_mean(positives.iter().map(Vec::as_slice), dims)
            .unwrap_or_else(|| vec![0.0; dims]);
        let negatives: Vec<Vec<f64>> = concept
            .bad_ids
            .iter()
            .filter_map(|id| embedding(project, id))
            .collect();
        let bad_centroid = normalized_mean(negatives.iter().map(Vec::as_slice), dims);
        out.push(ConceptCenters {
            concept_id: concept.id.clone(),
            good_centroid,
            bad_centroid,
        });
    }
    Ok(out)
}

fn vectors_for(project: &Project, ids: &[String]) -> Result<Vec<Vec<f64>>> {
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !project.embeddings.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::precondition_ids("descriptions without embeddings", missing));
    }
    Ok(ids
        .iter()
        .map(|id| embedding(project, id).expect("checked"))
        .collect())
}

/// Assigns each unmapped live norm to its nearest concept good-center when
/// the cosine reaches `tau`. Existing assignments are never touched.
pub fn knn_augment(project: &Project, tau: f64) -> Result<Vec<ConceptAssignment>> {
    check_tau(tau)?;
    let centers = concept_centers(project)?;
    if centers.is_empty() {
        return Ok(Vec::new());
    }
    let unmapped = project.unmapped_ids();
    let vectors = vectors_for(project, &unmapped)?;
    Ok(unmapped
        .into_iter()
        .zip(&vectors)
        .filter_map(|(id, v)| {
            best_center(v, &centers, tau, None).map(|choice| ConceptAssignment {
                description_id: id,
                concept_id: centers[choice.center].concept_id.clone(),
                provenance: AssignmentProvenance::Knn,
                score: choice.score.clamp(-1.0, 1.0),
                iteration: project.round,
                active: true,
            })
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReassignPlan {
    pub assign: Vec<ConceptAssignment>,
    pub unassign: Vec<String>,
}

/// Re-scores every live norm that is not a human seed with the good/bad
/// adjusted rule. Descriptions that stay with their concept are left as is.
pub fn reassign_with_good_bad(project: &Project, tau: f64, lambda: f64) -> Result<ReassignPlan> {
    check_tau(tau)?;
    if lambda < 0.0 || lambda.is_nan() {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} must be >= 0")));
    }
    if project.marks_pending.is_empty() {
        return Err(Error::precondition(
            "no good/bad marks recorded since the last reassignment",
        ));
    }
    let centers = concept_centers(project)?;
    let active = project.active_assignments();
    let candidates: Vec<String> = project
        .live_norms()
        .filter(|d| {
            active
                .get(d.id.as_str())
                .is_none_or(|a| a.provenance != AssignmentProvenance::HumanSeed)
        })
        .map(|d| d.id.clone())
        .collect();
    let vectors = vectors_for(project, &candidates)?;
    let mut plan = ReassignPlan::default();
    for (id, v) in candidates.into_iter().zip(&vectors) {
        let current = active.get(id.as_str()).map(|a| a.concept_id.as_str());
        match best_center(v, &centers, tau, Some(lambda)) {
            Some(choice) => {
                let concept_id = &centers[choice.center].concept_id;
                if current != Some(concept_id.as_str()) {
                    plan.assign.push(ConceptAssignment {
                        description_id: id,
                        concept_id: concept_id.clone(),
                        provenance: AssignmentProvenance::Reassigned,
                        score: choice.score.clamp(-1.0, 1.0),
                        iteration: project.round,
                        active: true,
                    });
                }
            }
            None => {
                if current.is_some() {
                    plan.unassign.push(id);
                }
            }
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn center(id: &str, good: &[f64], bad: Option<&[f64]>) -> ConceptCenters {
        ConceptCenters {
            concept_id: id.into(),
            good_centroid: normalized(good),
            bad_centroid: bad.map(normalized),
        }
    }

    #[test]
    fn identical_vector_scores_one() {
        let c = [center("a", &[0.6, 0.8], None)];
        let choice = best_center(&normalized(&[0.6, 0.8]), &c, 0.5, None).unwrap();
        assert!((choice.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_vector_stays_unmapped() {
        let c = [center("a", &[1.0, 0.0], None), center("b", &[0.0, 1.0, ][..], None)];
        assert!(best_center(&[0.0, 0.0], &c, 0.5, None).is_none());
        let c3 = [center("a", &[1.0, 0.0, 0.0], None)];
        assert!(best_center(&[0.0, 0.0, 1.0], &c3, 0.5, None).is_none());
    }

    #[test]
    fn ties_go_to_earlier_concept() {
        let c = [center("first", &[1.0, 0.0], None), center("second", &[1.0, 0.0], None)];
        assert_eq!(best_center(&[1.0, 0.0], &c, 0.0, None).unwrap().center, 0);
    }

    #[test]
    fn bad_example_with_unit_lambda_falls_below_threshold() {
        let good = [1.0, 0.0];
        let bad = normalized(&[0.8, 0.6]);
        let c = [center("a", &good, Some(&bad))];
        // adjusted = cos(d, good) - 1 <= 0
        assert!(best_center(&bad, &c, 0.1, Some(1.0)).is_none());
        assert!(best_center(&bad, &c, 0.1, None).is_some());
    }
}
