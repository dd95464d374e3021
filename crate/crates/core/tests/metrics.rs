use normlens::metrics::{alpha_from_units, krippendorff_alpha, likert_mean, quality_retention};
use normlens::schema::YesNo;
use normlens::{Aspect, HumanJudgment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn round_to(x: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    (x * p).round() / p
}

fn pct(num: usize, den: usize) -> f64 {
    round_to(100.0 * num as f64 / den as f64, 1)
}

fn judgment(target: &str, annotator: &str, aspect: Aspect, yes: bool) -> HumanJudgment {
    HumanJudgment {
        target_id: target.into(),
        annotator_id: annotator.into(),
        aspect,
        verdict: if yes { YesNo::Yes } else { YesNo::No },
        likert: None,
    }
}

/// (quality, retention) of a refinement stage.
struct Cell {
    quality: f64,
    retention: f64,
}

/// Counts for one aspect: original size, good originals, and per stage the
/// retained size with its good share.
struct Counts {
    n: usize,
    good: usize,
    stages: Vec<(usize, usize)>,
}

fn solve(generated: f64, stages: &[Cell]) -> Counts {
    for n in 50..=1000 {
        for good in 1..=n {
            if pct(good, n) != generated {
                continue;
            }
            let mut found = Vec::new();
            for cell in stages {
                let hit = (0..=good).filter(|gr| pct(*gr, good) == cell.retention).find_map(|gr| {
                    (gr.max(1)..=gr + (n - good))
                        .find(|r| pct(gr, *r) == cell.quality)
                        .map(|r| (r, gr))
                });
                match hit {
                    Some(h) => found.push(h),
                    None => break,
                }
            }
            if found.len() == stages.len() {
                return Counts { n, good, stages: found };
            }
        }
    }
    panic!("no integer fixture for {generated}");
}

fn check_aspect(aspect: Aspect, generated: f64, stages: [Cell; 2]) {
    let counts = solve(generated, &stages);
    let ids: Vec<String> = (0..counts.n).map(|i| format!("d{i:04}")).collect();
    // the first `good` ids are judged good by a two-of-three majority
    let mut judgments = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let good = i < counts.good;
        judgments.push(judgment(id, "a", aspect, good));
        judgments.push(judgment(id, "b", aspect, good));
        judgments.push(judgment(id, "c", aspect, !good));
    }
    let all = quality_retention(&ids, &ids, &judgments, aspect).unwrap();
    assert_eq!(all.quality.percent(1), Some(generated), "{aspect:?} generated");
    assert_eq!(all.retention.percent(1), Some(100.0));

    for ((retained, good_retained), cell) in counts.stages.iter().zip(&stages) {
        let bad_retained = retained - good_retained;
        let kept: Vec<String> = ids[..*good_retained]
            .iter()
            .chain(&ids[counts.good..counts.good + bad_retained])
            .cloned()
            .collect();
        let qr = quality_retention(&ids, &kept, &judgments, aspect).unwrap();
        assert_eq!(qr.quality.percent(1), Some(cell.quality), "{aspect:?} quality");
        assert_eq!(qr.retention.percent(1), Some(cell.retention), "{aspect:?} retention");
    }
}

pub fn relevance_cells() {
    check_aspect(
        Aspect::Relevance,
        81.0,
        [Cell { quality: 82.2, retention: 73.0 }, Cell { quality: 88.4, retention: 91.3 }],
    );
}

pub fn mapping_cells() {
    check_aspect(
        Aspect::Mapping,
        91.0,
        [Cell { quality: 93.4, retention: 85.6 }, Cell { quality: 94.8, retention: 93.8 }],
    );
}

pub fn violation_cells() {
    check_aspect(
        Aspect::Violation,
        60.3,
        [Cell { quality: 64.3, retention: 74.0 }, Cell { quality: 66.1, retention: 81.4 }],
    );
}

#[test]
fn undefined_ratios_are_tagged() {
    let ids = vec!["x".to_string()];
    let j = [judgment("x", "a", Aspect::Relevance, false)];
    let qr = quality_retention(&ids, &[], &j, Aspect::Relevance).unwrap();
    assert!(qr.quality.value().is_none());
    assert!(qr.retention.value().is_none());
}

/// Pairwise definition: observed disagreement within units weighted by
/// 1/(m-1), expected disagreement over all pairable values pooled.
fn brute_alpha(units: &[Vec<u8>]) -> f64 {
    let units: Vec<&Vec<u8>> = units.iter().filter(|u| u.len() >= 2).collect();
    let pooled: Vec<u8> = units.iter().flat_map(|u| u.iter().copied()).collect();
    let n = pooled.len() as f64;
    let mut within = 0.0;
    for u in &units {
        let mut d = 0.0;
        for i in 0..u.len() {
            for j in 0..u.len() {
                if i != j && u[i] != u[j] {
                    d += 1.0;
                }
            }
        }
        within += d / (u.len() as f64 - 1.0);
    }
    let mut between = 0.0;
    for i in 0..pooled.len() {
        for j in 0..pooled.len() {
            if i != j && pooled[i] != pooled[j] {
                between += 1.0;
            }
        }
    }
    1.0 - (within / n) / (between / (n * (n - 1.0)))
}

pub fn alpha_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut checked = 0;
    while checked < 50 {
        let items = rng.random_range(2..30);
        let categories = rng.random_range(2..5u8);
        let units: Vec<Vec<u8>> = (0..items)
            .map(|_| {
                let m = rng.random_range(1..5);
                (0..m).map(|_| rng.random_range(0..categories)).collect()
            })
            .collect();
        let Ok(report) = alpha_from_units(&units) else { continue };
        let expected = brute_alpha(&units);
        assert!((report.alpha - expected).abs() < 1e-9, "{} vs {expected}", report.alpha);
        checked += 1;
    }
}

#[test]
fn alpha_rejects_degenerate_input() {
    assert!(alpha_from_units(&[vec![1u8]]).is_err());
    assert!(alpha_from_units(&[vec![1u8, 1], vec![1, 1]]).is_err());
    let one = [judgment("x", "a", Aspect::Mapping, true)];
    assert_eq!(krippendorff_alpha(&one, Aspect::Mapping).unwrap_err().code(), "precondition_failed");
}

/// Two annotators: `agree_yes` both yes, `agree_no` both no, `split` one each.
fn alpha_fixture(target: f64, aspect: Aspect) -> Vec<HumanJudgment> {
    for total in 20..200usize {
        for split in 1..total {
            for agree_yes in 1..total - split {
                let agree_no = total - split - agree_yes;
                let mut units = vec![vec![1u8, 1]; agree_yes];
                units.extend(vec![vec![0u8, 0]; agree_no]);
                units.extend(vec![vec![1u8, 0]; split]);
                if round_to(brute_alpha(&units), 2) == target {
                    let mut out = Vec::new();
                    for (i, u) in units.iter().enumerate() {
                        let id = format!("t{i}");
                        out.push(judgment(&id, "a", aspect, u[0] == 1));
                        out.push(judgment(&id, "b", aspect, u[1] == 1));
                    }
                    return out;
                }
            }
        }
    }
    panic!("no fixture for {target}");
}

pub fn alpha_fixtures_reach_reported_agreement() {
    for (aspect, target) in [(Aspect::Mapping, 0.61), (Aspect::Relevance, 0.74), (Aspect::Violation, 0.68)] {
        let judgments = alpha_fixture(target, aspect);
        let report = krippendorff_alpha(&judgments, aspect).unwrap();
        assert_eq!(round_to(report.alpha, 2), target, "{aspect:?}");
    }
}

pub fn likert_fixture_mean() {
    let mut judgments = Vec::new();
    for (value, count) in [(5u8, 41), (4, 31), (3, 26), (2, 2)] {
        for i in 0..count {
            let mut j = judgment(&format!("m{value}-{i}"), "a", Aspect::Mapping, true);
            j.likert = Some(value);
            judgments.push(j);
        }
    }
    let report = likert_mean(&judgments).unwrap();
    assert_eq!(report.count, 100);
    assert_eq!(round_to(report.mean, 2), 4.11);
}

// The checks above are plain functions so the acceptance summary can call them too.
mod tests {
    #[test]
    fn relevance_cells() {
        super::relevance_cells();
    }

    #[test]
    fn mapping_cells() {
        super::mapping_cells();
    }

    #[test]
    fn violation_cells() {
        super::violation_cells();
    }

    #[test]
    fn alpha_matches_pairwise_oracle() {
        super::alpha_matches_pairwise_oracle();
    }

    #[test]
    fn alpha_fixtures_reach_reported_agreement() {
        super::alpha_fixtures_reach_reported_agreement();
    }

    #[test]
    fn likert_fixture_mean() {
        super::likert_fixture_mean();
    }
}
