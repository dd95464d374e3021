//! Synthetic fixtures shared by the benchmarks.

use normlens::schema::{DescriptionKind, DescriptionStatus, EmbeddingRecord, NormDescription, SymbolicStructure};
use normlens::{Event, Project};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` random unit-ish vectors of `dims` dimensions around `centers` blobs.
pub fn blobs(n: usize, dims: usize, centers: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..centers)
        .map(|_| (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (0..n)
        .map(|i| {
            means[i % centers]
                .iter()
                .map(|m| m + rng.random_range(-0.2..0.2))
                .collect()
        })
        .collect()
}

/// A project with `n` embedded norm descriptions and `concepts` concepts,
/// each seeded with five descriptions.
pub fn project(n: usize, dims: usize, concepts: usize, seed: u64) -> Project {
    let vectors = blobs(n, dims, concepts.max(1), seed);
    let mut p = Project::default();
    let conv = normlens::Conversation {
        id: "c".into(),
        source: "bench".into(),
        language: "en".into(),
        turns: vec![normlens::schema::Turn {
            index: 0,
            speaker: "A".into(),
            text: "hi".into(),
            labels: Default::default(),
        }],
        relationships: Vec::new(),
        settings: Default::default(),
        summary: None,
    };
    p.apply(&Event::ConversationAdded { conversation: conv }).unwrap();
    for (i, v) in vectors.into_iter().enumerate() {
        let id = format!("d{i:05}");
        p.apply(&Event::DescriptionAdded {
            description: NormDescription {
                id: id.clone(),
                conversation_id: "c".into(),
                kind: DescriptionKind::Norm,
                title: String::new(),
                body: format!("norm {i}"),
                parent_id: None,
                status: DescriptionStatus::Raw,
            },
        })
        .unwrap();
        p.apply(&Event::EmbeddingAdded {
            record: EmbeddingRecord {
                target_id: id,
                vector: v,
                model_tag: "bench".into(),
                normalized: false,
            },
        })
        .unwrap();
    }
    for c in 0..concepts {
        let seeds: Vec<String> = (0..5).map(|j| format!("d{:05}", c + j * concepts)).collect();
        let structure = SymbolicStructure {
            name: format!("concept {c}"),
            description: "d".into(),
            settings: vec!["family".into()],
            violation_sketch: "v".into(),
            actor_roles: "a".into(),
            recipient_roles: "r".into(),
        };
        let (concept, assignments) = normlens::discovery::create_concept(&p, &seeds, &structure, "bench").unwrap();
        p.apply(&Event::ConceptCreated { concept, assignments }).unwrap();
    }
    p
}
