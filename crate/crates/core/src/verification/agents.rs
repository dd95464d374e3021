//! Self-verification and the critic / verifier / quantifier / evaluator roles.
//!
//! Each role is a separate provider session with its own system prompt.

use std::collections::BTreeSet;

use serde::Deserialize;

use super::types::{infer_scoring, Criterion, CriterionScore, Decision, Rubric, VerificationVerdict, Workflow};
use crate::elicitation::clean_line;
use crate::error::{Error, Result};
use crate::provider::{complete_with_retry, ChatMessage, ChatProvider, ChatRequest, RetryPolicy};
use crate::schema::Aspect;

/// Something to be verified: an id plus the text the agents see.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub id: String,
    pub aspect: Aspect,
    pub context: String,
}

pub const CRITIC_SYSTEM: &str = "You are a critic agent. Given a task description and examples of a successful and a failed run of the task, propose categorical criteria for judging new runs. Write one block per criterion:\nCriterion: <name>\nDescription: <one sentence>\nAccepted Values: <comma-separated values, ordered from worst to best>";

pub const VERIFIER_SYSTEM: &str = "You are a verifier agent. Decide whether each criterion gives stable, discriminating ratings on the probe examples. Answer one line per criterion: '<criterion name>: robust' or '<criterion name>: not robust'.";

pub const QUANTIFIER_SYSTEM: &str = "You are a quantifier agent. Rate the example on every criterion. Answer one line per criterion: '<criterion name>: <one of its accepted values>'.";

pub const SELF_REVIEW: &str = "Re-consider your judgment carefully. Answer yes or no.";

/// The question posed for a self check, per aspect.
pub fn self_question(aspect: Aspect) -> &'static str {
    match aspect {
        Aspect::Relevance => "Is the social norm description relevant to the conversation? Answer yes or no.",
        Aspect::Mapping => "Does the social norm description match the norm concept it is mapped to? Answer yes or no.",
        Aspect::Violation => "Is the violation status annotated for this conversation correct? Answer yes or no.",
    }
}

/// Default task statement per aspect.
pub fn task_description(aspect: Aspect) -> &'static str {
    match aspect {
        Aspect::Relevance => "Judge the relevance of a norm description to a conversation.",
        Aspect::Mapping => "Judge whether a norm description is correctly mapped to a norm concept.",
        Aspect::Violation => "Judge the quality of a symbolic annotation of a norm in a conversation, including its violation status.",
    }
}

/// Leading yes/no of a response.
pub fn parse_yes_no(text: &str) -> Option<bool> {
    let (line, _) = clean_line(text.lines().find(|l| !l.trim().is_empty())?);
    let word: String = line
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Outcome of a self check. `verdict` is `None` when the answer stayed
/// unparseable after one retry.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfOutcome {
    pub verdict: Option<VerificationVerdict>,
    pub failure: Option<String>,
}

/// Shows the provider its earlier "yes" and asks it to reconsider.
pub fn self_verify<P: ChatProvider + ?Sized>(target: &Target, provider: &P, retry: RetryPolicy) -> Result<SelfOutcome> {
    let mut messages = vec![
        ChatMessage::user(format!("{}\n\n{}", target.context, self_question(target.aspect))),
        ChatMessage::assistant("yes"),
        ChatMessage::user(SELF_REVIEW),
    ];
    for attempt in 0..2 {
        let (answer, _) = complete_with_retry(provider, &ChatRequest::new(messages.clone()), retry)?;
        if let Some(yes) = parse_yes_no(&answer) {
            return Ok(SelfOutcome {
                verdict: Some(VerificationVerdict {
                    target_id: target.id.clone(),
                    aspect: target.aspect,
                    workflow: Workflow::SelfCheck,
                    decision: if yes { Decision::Retain } else { Decision::Discard },
                    scores: Vec::new(),
                    rationale: answer.trim().to_owned(),
                }),
                failure: None,
            });
        }
        if attempt == 0 {
            messages.push(ChatMessage::assistant(answer));
            messages.push(ChatMessage::user("Answer with a single word: yes or no."));
        }
    }
    Ok(SelfOutcome {
        verdict: None,
        failure: Some(format!("'{}': no yes/no answer after retry", target.id)),
    })
}

#[derive(Deserialize)]
struct JsonCriterion {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default, alias = "values", alias = "accepted")]
    accepted_values: Vec<String>,
}

fn criterion(name: &str, description: &str, values: Vec<String>) -> Criterion {
    Criterion {
        name: name.trim().to_owned(),
        description: description.trim().to_owned(),
        scoring: infer_scoring(&values),
        accepted_values: values,
        robust: true,
    }
}

fn split_values(text: &str) -> Vec<String> {
    text.split([',', ';'])
        .map(|v| v.trim().trim_end_matches('.').trim().to_owned())
        .filter(|v| !v.is_empty())
        .collect()
}

/// Parses critic output: `Criterion:` / `Description:` / `Accepted Values:`
/// blocks, or a JSON array of `{name, description, accepted_values}`.
/// Criteria without values and repeated names are dropped with a warning.
pub fn parse_criteria(text: &str) -> (Vec<Criterion>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut raw: Vec<(String, String, Vec<String>)> = Vec::new();
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        match serde_json::from_str::<Vec<JsonCriterion>>(trimmed) {
            Ok(list) => raw = list.into_iter().map(|c| (c.name, c.description, c.accepted_values)).collect(),
            Err(e) => warnings.push(format!("criteria JSON unreadable: {e}")),
        }
    } else {
        let mut field: Option<usize> = None;
        for line in text.lines() {
            let (line, _) = clean_line(line);
            if line.is_empty() {
                continue;
            }
            let key_value = line.split_once(':').map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim()));
            match key_value {
                Some((k, v)) if k == "criterion" || k == "criteria" || k == "name" => {
                    raw.push((v.to_owned(), String::new(), Vec::new()));
                    field = None;
                }
                Some((k, v)) if k == "description" && !raw.is_empty() => {
                    raw.last_mut().expect("non-empty").1 = v.to_owned();
                    field = Some(1);
                }
                Some((k, v)) if (k == "accepted values" || k == "values") && !raw.is_empty() => {
                    raw.last_mut().expect("non-empty").2 = split_values(v);
                    field = Some(2);
                }
                _ => match (field, raw.last_mut()) {
                    (Some(1), Some(last)) => {
                        last.1.push(' ');
                        last.1.push_str(&line);
                    }
                    (Some(2), Some(last)) => last.2.extend(split_values(&line)),
                    _ => {}
                },
            }
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (name, description, values) in raw {
        let key = name.trim().to_lowercase();
        if key.is_empty() {
            warnings.push("criterion without a name dropped".into());
        } else if values.is_empty() {
            warnings.push(format!("criterion '{}' has no accepted values; dropped", name.trim()));
        } else if !seen.insert(key) {
            warnings.push(format!("criterion '{}' repeated; later copy dropped", name.trim()));
        } else {
            out.push(criterion(&name, &description, values));
        }
    }
    (out, warnings)
}

/// Critic role. Fails with "no criteria" when nothing usable comes back.
pub fn generate_criteria<P: ChatProvider + ?Sized>(
    task: &str,
    success_example: &str,
    failure_example: &str,
    provider: &P,
    retry: RetryPolicy,
) -> Result<(Vec<Criterion>, Vec<String>)> {
    if success_example.trim().is_empty() || failure_example.trim().is_empty() {
        return Err(Error::precondition("critic needs a successful and a failed example"));
    }
    let request = ChatRequest::new(vec![
        ChatMessage::system(CRITIC_SYSTEM),
        ChatMessage::user(format!(
            "Task: {task}\n\nSuccessful example:\n{success_example}\n\nFailed example:\n{failure_example}"
        )),
    ]);
    let (text, _) = complete_with_retry(provider, &request, retry)?;
    let (criteria, warnings) = parse_criteria(&text);
    for w in &warnings {
        log::warn!("critic: {w}");
    }
    if criteria.is_empty() {
        return Err(Error::precondition("no criteria"));
    }
    Ok((criteria, warnings))
}

fn criteria_listing<'a>(criteria: impl Iterator<Item = &'a Criterion>) -> String {
    let mut out = String::new();
    for c in criteria {
        out.push_str(&format!(
            "- {}: {} Accepted values: {}\n",
            c.name,
            c.description,
            c.accepted_values.join(", ")
        ));
    }
    out
}

/// Verifier role. Criteria the verifier calls "not robust" are excluded
/// from scoring; unmentioned ones stay robust.
pub fn verify_criteria<P: ChatProvider + ?Sized>(
    rubric: &Rubric,
    probes: &[String],
    provider: &P,
    retry: RetryPolicy,
) -> Result<Rubric> {
    if probes.len() < 2 {
        return Err(Error::precondition("criteria verification needs at least 2 probe examples"));
    }
    let mut user = format!("Task: {}\n\nCriteria:\n{}", rubric.task, criteria_listing(rubric.criteria.iter()));
    for (i, p) in probes.iter().enumerate() {
        user.push_str(&format!("\nProbe example {}:\n{}\n", i + 1, p));
    }
    let request = ChatRequest::new(vec![ChatMessage::system(VERIFIER_SYSTEM), ChatMessage::user(user)]);
    let (text, _) = complete_with_retry(provider, &request, retry)?;
    let mut out = rubric.clone();
    for line in text.lines() {
        let (line, _) = clean_line(line);
        let Some((name, verdict)) = line.rsplit_once(':') else {
            continue;
        };
        let v = verdict.trim().trim_end_matches('.').to_ascii_lowercase();
        let robust = match v.as_str() {
            "robust" | "yes" | "accept" | "accepted" => true,
            "not robust" | "no" | "reject" | "rejected" => false,
            _ => continue,
        };
        if let Some(c) = out.criteria.iter_mut().find(|c| c.name.eq_ignore_ascii_case(name.trim())) {
            c.robust = robust;
        }
    }
    if out.robust().next().is_none() {
        return Err(Error::precondition("verifier rejected every criterion"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantified {
    pub scores: Vec<CriterionScore>,
    pub warnings: Vec<String>,
}

fn read_ratings(text: &str, wanted: &[&Criterion]) -> Vec<Option<usize>> {
    let mut picked = vec![None; wanted.len()];
    for line in text.lines() {
        let (line, _) = clean_line(line);
        let Some((name, value)) = line.split_once(':') else {
            continue;
        };
        if let Some(i) = wanted.iter().position(|c| c.name.eq_ignore_ascii_case(name.trim())) {
            if picked[i].is_none() {
                picked[i] = wanted[i].match_value(value);
            }
        }
    }
    picked
}

/// Quantifier role. Every robust criterion gets one accepted value; invalid
/// or missing values get one reprompt listing the valid values, then the
/// criterion is skipped with a warning.
pub fn quantify<P: ChatProvider + ?Sized>(
    target: &Target,
    rubric: &Rubric,
    provider: &P,
    retry: RetryPolicy,
) -> Result<Quantified> {
    let wanted: Vec<&Criterion> = rubric.robust().collect();
    if wanted.is_empty() {
        return Err(Error::precondition("rubric has no robust criteria"));
    }
    let mut messages = vec![
        ChatMessage::system(QUANTIFIER_SYSTEM),
        ChatMessage::user(format!(
            "Task: {}\n\nCriteria:\n{}\nExample:\n{}",
            rubric.task,
            criteria_listing(wanted.iter().copied()),
            target.context
        )),
    ];
    let (first, _) = complete_with_retry(provider, &ChatRequest::new(messages.clone()), retry)?;
    let mut picked = read_ratings(&first, &wanted);
    let mut warnings = Vec::new();
    let missing: Vec<usize> = (0..wanted.len()).filter(|&i| picked[i].is_none()).collect();
    if !missing.is_empty() {
        let mut ask = String::from("Some ratings were missing or not among the accepted values. Rate these criteria again, one line each:\n");
        for &i in &missing {
            ask.push_str(&format!(
                "- {} (valid values: {})\n",
                wanted[i].name,
                wanted[i].accepted_values.join(", ")
            ));
        }
        messages.push(ChatMessage::assistant(first));
        messages.push(ChatMessage::user(ask));
        let (second, _) = complete_with_retry(provider, &ChatRequest::new(messages), retry)?;
        let subset: Vec<&Criterion> = missing.iter().map(|&i| wanted[i]).collect();
        for (j, v) in read_ratings(&second, &subset).into_iter().enumerate() {
            let i = missing[j];
            picked[i] = v;
            if v.is_none() {
                warnings.push(format!("'{}': no valid value for '{}'; skipped", target.id, wanted[i].name));
            }
        }
    }
    let scores = wanted
        .iter()
        .zip(picked)
        .filter_map(|(c, p)| {
            p.map(|i| CriterionScore {
                criterion: c.name.clone(),
                value: c.accepted_values[i].clone(),
                score: c.score(i),
            })
        })
        .collect();
    Ok(Quantified { scores, warnings })
}

/// Evaluator: retain iff the mean of the numeric scores reaches `threshold`.
pub fn evaluate(target_id: &str, aspect: Aspect, scores: Vec<CriterionScore>, threshold: f64) -> Result<VerificationVerdict> {
    let numeric: Vec<f64> = scores.iter().filter_map(|s| s.score).collect();
    if numeric.is_empty() {
        return Err(Error::precondition_ids(
            "evaluation needs at least one robust criterion score",
            vec![target_id.to_owned()],
        ));
    }
    let mean = numeric.iter().sum::<f64>() / numeric.len() as f64;
    let decision = if mean >= threshold {
        Decision::Retain
    } else {
        Decision::Discard
    };
    Ok(VerificationVerdict {
        target_id: target_id.to_owned(),
        aspect,
        workflow: Workflow::MultiAgent,
        decision,
        scores,
        rationale: format!("mean {mean:.4} over {} criteria, threshold {threshold}", numeric.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{EchoProvider, ScriptedProvider};

    fn target() -> Target {
        Target {
            id: "d-1".into(),
            aspect: Aspect::Relevance,
            context: "Conversation: ...".into(),
        }
    }

    fn clarity_rubric() -> Rubric {
        let (criteria, _) = parse_criteria(
            "Criterion: Clarity\nDescription: How clear.\nAccepted Values: 1 - very unclear, 2 - unclear, 3 - neutral, 4 - clear, 5 - very clear",
        );
        Rubric {
            aspect: Aspect::Relevance,
            version: 1,
            task: "t".into(),
            criteria,
        }
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(parse_yes_no("Yes, relevant."), Some(true));
        assert_eq!(parse_yes_no("\n**No**"), Some(false));
        assert_eq!(parse_yes_no("Nothing to add"), None);
    }

    #[test]
    fn echo_provider_stands_by_its_answer() {
        let out = self_verify(&target(), &EchoProvider, RetryPolicy::default()).unwrap();
        assert_eq!(out.verdict.unwrap().decision, Decision::Retain);
    }

    #[test]
    fn unparseable_twice_withholds_verdict() {
        let p = ScriptedProvider::responses(["maybe", "perhaps"]);
        let out = self_verify(&target(), &p, RetryPolicy::default()).unwrap();
        assert!(out.verdict.is_none() && out.failure.is_some());
    }

    #[test]
    fn quantify_scores_ordinal_value() {
        let p = ScriptedProvider::responses(["Clarity: 4 - clear"]);
        let q = quantify(&target(), &clarity_rubric(), &p, RetryPolicy::default()).unwrap();
        assert_eq!(q.scores[0].score, Some(0.75));
    }

    #[test]
    fn out_of_scale_value_is_reprompted_then_skipped() {
        let p = ScriptedProvider::responses(["Clarity: 6", "Clarity: 7"]);
        let q = quantify(&target(), &clarity_rubric(), &p, RetryPolicy::default()).unwrap();
        assert!(q.scores.is_empty());
        assert_eq!(q.warnings.len(), 1);
        assert!(p.requests()[1].last_user().unwrap().contains("5 - very clear"));
    }

    #[test]
    fn evaluator_threshold() {
        let s = |v: f64| CriterionScore {
            criterion: "c".into(),
            value: "v".into(),
            score: Some(v),
        };
        let scores = vec![s(0.75), s(0.5), s(1.0)];
        assert_eq!(evaluate("t", Aspect::Relevance, scores.clone(), 0.7).unwrap().decision, Decision::Retain);
        assert_eq!(evaluate("t", Aspect::Relevance, scores, 0.8).unwrap().decision, Decision::Discard);
    }

    #[test]
    fn criteria_without_values_are_dropped() {
        let (c, w) = parse_criteria("Criterion: A\nDescription: x\nCriterion: B\nAccepted Values: yes, no");
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].name, "B");
        assert_eq!(w.len(), 1);
    }
}
