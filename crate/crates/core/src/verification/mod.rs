//! Retain/discard decisions for descriptions, mappings and violation
//! judgments.
//!
//! Two workflows: a self check that asks the provider to reconsider, and a
//! rubric-driven chain (critic writes criteria, verifier prunes them,
//! quantifier rates each target, evaluator thresholds the mean score).
//! This module is the only place that decides to discard.

mod agents;
mod types;

use serde::{Deserialize, Serialize};

pub use agents::{
    evaluate, generate_criteria, parse_criteria, parse_yes_no, quantify, self_question, self_verify,
    task_description, verify_criteria, Quantified, SelfOutcome, Target, CRITIC_SYSTEM,
    QUANTIFIER_SYSTEM, SELF_REVIEW, VERIFIER_SYSTEM,
};
pub use types::{
    infer_scoring, Criterion, CriterionScore, Decision, Rubric, Scoring, VerificationVerdict, Workflow,
};

use crate::error::{Error, Result};
use crate::provider::{fan_out, ChatProvider, RetryPolicy};
use crate::store::FailureRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub threshold: f64,
    pub parallelism: usize,
    pub retry: RetryPolicy,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            parallelism: 4,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchItem {
    Verdict(VerificationVerdict),
    Failure(FailureRecord),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub retained: usize,
    pub discarded: usize,
    pub failed: usize,
    pub warnings: Vec<String>,
}

fn run_one<P: ChatProvider + ?Sized>(
    target: &Target,
    workflow: Workflow,
    rubric: Option<&Rubric>,
    provider: &P,
    config: &BatchConfig,
) -> (BatchItem, Vec<String>) {
    let fail = |message: String| FailureRecord {
        stage: format!("verify:{}:{}", workflow, target.aspect),
        target_id: target.id.clone(),
        message,
    };
    match workflow {
        Workflow::SelfCheck => match self_verify(target, provider, config.retry) {
            Ok(SelfOutcome { verdict: Some(v), .. }) => (BatchItem::Verdict(v), Vec::new()),
            Ok(SelfOutcome { failure, .. }) => (
                BatchItem::Failure(fail(failure.unwrap_or_else(|| "verdict withheld".into()))),
                Vec::new(),
            ),
            Err(e) => (BatchItem::Failure(fail(e.to_string())), Vec::new()),
        },
        Workflow::MultiAgent => {
            let rubric = rubric.expect("checked by run_batch");
            match quantify(target, rubric, provider, config.retry)
                .and_then(|q| evaluate(&target.id, target.aspect, q.scores, config.threshold).map(|v| (v, q.warnings)))
            {
                Ok((v, warnings)) => (BatchItem::Verdict(v), warnings),
                Err(e) => (BatchItem::Failure(fail(e.to_string())), Vec::new()),
            }
        }
    }
}

/// Verifies `targets` in order, handing each result to `sink` as soon as
/// its chunk of `parallelism` targets completes. Callers skip targets that
/// already hold a verdict, so an interrupted batch resumes where it stopped.
pub fn run_batch<P, F>(
    targets: &[Target],
    workflow: Workflow,
    rubric: Option<&Rubric>,
    provider: &P,
    config: &BatchConfig,
    mut sink: F,
) -> Result<BatchSummary>
where
    P: ChatProvider + ?Sized,
    F: FnMut(BatchItem) -> Result<()>,
{
    if workflow == Workflow::MultiAgent {
        let rubric = rubric.ok_or_else(|| Error::precondition("multi-agent verification needs a rubric"))?;
        if rubric.scored().next().is_none() {
            return Err(Error::precondition("rubric has no robust scored criteria"));
        }
    }
    let mut summary = BatchSummary::default();
    for chunk in targets.chunks(config.parallelism.max(1)) {
        let results = fan_out(chunk, config.parallelism, |t| run_one(t, workflow, rubric, provider, config));
        for (item, warnings) in results {
            summary.warnings.extend(warnings);
            match &item {
                BatchItem::Verdict(v) if v.decision == Decision::Retain => summary.retained += 1,
                BatchItem::Verdict(_) => summary.discarded += 1,
                BatchItem::Failure(_) => summary.failed += 1,
            }
            sink(item)?;
        }
    }
    Ok(summary)
}
