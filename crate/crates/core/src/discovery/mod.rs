//! Interactive norm concept discovery.
//!
//! One round: cluster the unmapped norm descriptions, let annotators turn
//! tight clusters into concepts (5-10 seeds plus a symbolic structure),
//! extend each concept to nearby unmapped descriptions, collect good/bad
//! marks, re-score against good and bad centers, and go again with
//! whatever is still unmapped.
//!
//! Every function here is pure over a [`Project`] snapshot; the caller turns
//! the result into store events.

mod assign;
mod kmeans;
pub mod vector;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use assign::{
    best_center, concept_centers, knn_augment, reassign_with_good_bad, Choice, ConceptCenters,
    ReassignPlan,
};
pub use kmeans::{default_k, kmeans, ClusterView, KMeansParams, KMeansResult, EXEMPLARS};

use crate::error::{Error, Result};
use crate::schema::{
    AssignmentProvenance, ConceptAssignment, DescriptionKind, DescriptionStatus, NormConcept,
    SymbolicStructure, MAX_SEEDS, MIN_SEEDS,
};
use crate::store::Project;

/// Operator knobs for discovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    /// Cluster count; `None` means `ceil(sqrt(n / 2))`.
    pub k: Option<usize>,
    pub tau: f64,
    pub lambda: f64,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            k: None,
            tau: 0.7,
            lambda: 1.0,
            seed: 0,
            max_iters: 100,
        }
    }
}

/// Deterministic concept id derived from the (unique) name.
pub fn concept_id_for(name: &str) -> String {
    let digest = Sha256::digest(name.trim().as_bytes());
    format!("k-{}", &hex::encode(digest)[..12])
}

/// Validates a new concept and builds it with one human-seed assignment per seed.
pub fn create_concept(
    project: &Project,
    seed_ids: &[String],
    structure: &SymbolicStructure,
    annotator: &str,
) -> Result<(NormConcept, Vec<ConceptAssignment>)> {
    let mut seeds = seed_ids.to_vec();
    seeds.dedup();
    let unique: std::collections::BTreeSet<&String> = seeds.iter().collect();
    if unique.len() != seeds.len() {
        return Err(Error::precondition("duplicate seed ids"));
    }
    if seeds.len() < MIN_SEEDS {
        return Err(Error::precondition_ids(
            format!("seed count below {MIN_SEEDS}"),
            seeds.clone(),
        ));
    }
    if seeds.len() > MAX_SEEDS {
        return Err(Error::precondition_ids(
            format!("seed count above {MAX_SEEDS}"),
            seeds.clone(),
        ));
    }
    let missing = structure.missing_fields();
    if !missing.is_empty() {
        return Err(Error::precondition(format!(
            "symbolic structure incomplete: {}",
            missing.join(", ")
        )));
    }
    if let Some(existing) = project.concept_by_name(structure.name.trim()) {
        return Err(Error::precondition_ids(
            format!("concept name '{}' already exists", structure.name),
            vec![existing.id.clone()],
        ));
    }
    let active = project.active_assignments();
    for id in &seeds {
        let d = project
            .descriptions
            .get(id)
            .ok_or_else(|| Error::not_found("description", id))?;
        if d.kind != DescriptionKind::Norm || d.status == DescriptionStatus::Discarded {
            return Err(Error::precondition_ids(
                format!("seed '{id}' is not a live norm description"),
                vec![id.clone()],
            ));
        }
        if let Some(a) = active.get(id.as_str()) {
            let name = project
                .concepts
                .get(&a.concept_id)
                .map_or(a.concept_id.as_str(), |c| c.name.as_str());
            return Err(Error::precondition_ids(
                format!("seed '{id}' already assigned to concept '{name}'"),
                vec![id.clone(), a.concept_id.clone()],
            ));
        }
    }
    let id = concept_id_for(&structure.name);
    let concept = NormConcept {
        id: id.clone(),
        name: structure.name.trim().to_owned(),
        description: structure.description.trim().to_owned(),
        settings: structure
            .settings
            .iter()
            .map(|s| s.trim().to_owned())
            .filter(|s| !s.is_empty())
            .collect(),
        violation_sketch: structure.violation_sketch.trim().to_owned(),
        actor_roles: structure.actor_roles.trim().to_owned(),
        recipient_roles: structure.recipient_roles.trim().to_owned(),
        seed_ids: seeds.clone(),
        good_ids: Vec::new(),
        bad_ids: Vec::new(),
        created_by: annotator.to_owned(),
        iteration: project.round,
        created_at_version: project.version,
    };
    let assignments = seeds
        .into_iter()
        .map(|d| ConceptAssignment {
            description_id: d,
            concept_id: id.clone(),
            provenance: AssignmentProvenance::HumanSeed,
            score: 1.0,
            iteration: project.round,
            active: true,
        })
        .collect();
    Ok((concept, assignments))
}

/// Checks a good/bad marking request. Returns advisory warnings; counts
/// outside 5-10 warn rather than fail.
pub fn check_marks(
    project: &Project,
    concept_id: &str,
    good: &[String],
    bad: &[String],
) -> Result<Vec<String>> {
    let concept = project
        .concepts
        .get(concept_id)
        .ok_or_else(|| Error::not_found("concept", concept_id))?;
    let unknown: Vec<String> = good
        .iter()
        .chain(bad)
        .filter(|id| !project.descriptions.contains_key(*id))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::precondition_ids("unknown description ids", unknown));
    }
    let seeds: Vec<String> = good
        .iter()
        .chain(bad)
        .filter(|id| concept.seed_ids.contains(id))
        .cloned()
        .collect();
    if !seeds.is_empty() {
        return Err(Error::precondition_ids("seeds cannot be marked", seeds));
    }
    let both: Vec<String> = good.iter().filter(|g| bad.contains(g)).cloned().collect();
    if !both.is_empty() {
        return Err(Error::precondition_ids("ids marked both good and bad", both));
    }
    let mut warnings = Vec::new();
    for (label, ids) in [("good", good), ("bad", bad)] {
        if !ids.is_empty() && !(MIN_SEEDS..=MAX_SEEDS).contains(&ids.len()) {
            warnings.push(format!(
                "{} {label} marks for '{}'; {MIN_SEEDS}-{MAX_SEEDS} recommended",
                ids.len(),
                concept.name
            ));
        }
    }
    Ok(warnings)
}

/// A planned clustering round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub round: u32,
    pub clusters: Vec<ClusterView>,
    pub inertia_history: Vec<f64>,
    pub warning: Option<String>,
}

/// Clusters the remaining unmapped descriptions for the next round.
/// Returns `None` when nothing is left to cluster.
pub fn next_round(project: &Project, config: &DiscoveryConfig) -> Result<Option<RoundPlan>> {
    let ids = project.unmapped_ids();
    if ids.is_empty() {
        return Ok(None);
    }
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !project.embeddings.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::precondition_ids("descriptions without embeddings", missing));
    }
    let vectors: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| project.embeddings[id].vector.clone())
        .collect();
    let requested = config.k.unwrap_or_else(|| default_k(ids.len()));
    let (k, warning) = if requested > ids.len() {
        let msg = format!(
            "k = {requested} exceeds {} unmapped descriptions; using k = {}",
            ids.len(),
            ids.len()
        );
        log::warn!("{msg}");
        (ids.len(), Some(msg))
    } else {
        (requested, None)
    };
    let round = project.round + 1;
    let result = kmeans(
        &ids,
        &vectors,
        KMeansParams {
            k,
            seed: config.seed,
            max_iters: config.max_iters,
        },
        round,
    )?;
    Ok(Some(RoundPlan {
        round,
        clusters: result.clusters,
        inertia_history: result.inertia_history,
        warning,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub concepts: usize,
    pub mapped: usize,
    pub total: usize,
    pub coverage_fraction: f64,
}

/// Share of live norm descriptions with an active concept assignment.
pub fn coverage_stats(project: &Project) -> Coverage {
    let active = project.active_assignments();
    let (mut mapped, mut total) = (0, 0);
    for d in project.live_norms() {
        total += 1;
        mapped += usize::from(active.contains_key(d.id.as_str()));
    }
    Coverage {
        concepts: project.concepts.len(),
        mapped,
        total,
        coverage_fraction: if total == 0 {
            0.0
        } else {
            mapped as f64 / total as f64
        },
    }
}
