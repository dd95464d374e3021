use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParseEnumError;
use crate::schema::Aspect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workflow {
    #[serde(rename = "self")]
    SelfCheck,
    #[serde(rename = "multiagent")]
    MultiAgent,
}

impl Workflow {
    pub fn as_str(self) -> &'static str {
        match self {
            Workflow::SelfCheck => "self",
            Workflow::MultiAgent => "multiagent",
        }
    }
}

impl FromStr for Workflow {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "self" => Ok(Workflow::SelfCheck),
            "agents" | "multiagent" | "multi-agent" => Ok(Workflow::MultiAgent),
            _ => Err(ParseEnumError::new("workflow", s)),
        }
    }
}

impl fmt::Display for Workflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Retain,
    Discard,
}

/// How a criterion's chosen value becomes a number in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scoring {
    /// `index / (len - 1)` over the accepted values.
    Ordinal,
    /// Explicit value-to-score table.
    Mapped { scores: BTreeMap<String, f64> },
    /// Recorded but left out of the mean.
    Informational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub description: String,
    pub accepted_values: Vec<String>,
    pub robust: bool,
    pub scoring: Scoring,
}

impl Criterion {
    /// Whether this criterion contributes to the evaluator's mean.
    pub fn scored(&self) -> bool {
        self.robust && !matches!(self.scoring, Scoring::Informational)
    }

    /// Finds the accepted value a response token refers to: exact
    /// (case-insensitive) match, or the leading number of an `N - label` scale.
    pub fn match_value(&self, token: &str) -> Option<usize> {
        let t = token.trim().trim_end_matches('.').trim();
        if t.is_empty() {
            return None;
        }
        if let Some(i) = self
            .accepted_values
            .iter()
            .position(|v| v.eq_ignore_ascii_case(t))
        {
            return Some(i);
        }
        let lead = t.split(|c: char| !c.is_ascii_digit()).next().unwrap_or("");
        if !lead.is_empty() {
            if let Some(i) = self
                .accepted_values
                .iter()
                .position(|v| ordinal_prefix(v).as_deref() == Some(lead))
            {
                // "4 - clear" and "4" both pick index of "4 - ..."; "4 - wrong" does not
                let rest = t[lead.len()..].trim_start_matches([' ', '-', '–']).trim();
                let label = value_label(&self.accepted_values[i]);
                if rest.is_empty() || rest.eq_ignore_ascii_case(label) {
                    return Some(i);
                }
            }
        }
        None
    }

    /// Normalized score for the accepted value at `index`.
    pub fn score(&self, index: usize) -> Option<f64> {
        match &self.scoring {
            Scoring::Ordinal => {
                let len = self.accepted_values.len();
                if len < 2 {
                    Some(1.0)
                } else {
                    Some(index as f64 / (len - 1) as f64)
                }
            }
            Scoring::Mapped { scores } => {
                let value = self.accepted_values.get(index)?;
                scores
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case(value))
                    .map(|(_, s)| *s)
                    .or(Some(0.5))
            }
            Scoring::Informational => None,
        }
    }
}

/// `"4"` for `"4 - clear"`.
pub(crate) fn ordinal_prefix(value: &str) -> Option<String> {
    let digits: String = value.trim().chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    let rest = value.trim()[digits.len()..].trim_start();
    if rest.is_empty() || rest.starts_with('-') || rest.starts_with('–') {
        Some(digits)
    } else {
        None
    }
}

fn value_label(value: &str) -> &str {
    let v = value.trim();
    let digits = v.chars().take_while(|c| c.is_ascii_digit()).count();
    v[digits..].trim_start().trim_start_matches(['-', '–']).trim()
}

/// Picks the default scoring for a value list: ordinal for `N - label`
/// scales, informational otherwise.
pub fn infer_scoring(values: &[String]) -> Scoring {
    if values.len() >= 2 && values.iter().all(|v| ordinal_prefix(v).is_some()) {
        Scoring::Ordinal
    } else {
        Scoring::Informational
    }
}

/// A versioned categorical rubric for one aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub aspect: Aspect,
    pub version: u32,
    pub task: String,
    pub criteria: Vec<Criterion>,
}

impl Rubric {
    pub fn scored(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter().filter(|c| c.scored())
    }

    pub fn robust(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter().filter(|c| c.robust)
    }

    /// Applies a declared value-to-score table to one criterion, making it
    /// count towards the mean.
    pub fn declare_mapping(&mut self, criterion: &str, scores: BTreeMap<String, f64>) -> bool {
        match self
            .criteria
            .iter_mut()
            .find(|c| c.name.eq_ignore_ascii_case(criterion))
        {
            Some(c) => {
                c.scoring = Scoring::Mapped { scores };
                true
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub criterion: String,
    pub value: String,
    /// `None` for informational criteria.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub target_id: String,
    pub aspect: Aspect,
    pub workflow: Workflow,
    pub decision: Decision,
    #[serde(default)]
    pub scores: Vec<CriterionScore>,
    #[serde(default)]
    pub rationale: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clarity() -> Criterion {
        let values: Vec<String> = [
            "1 - very unclear",
            "2 - unclear",
            "3 - neutral",
            "4 - clear",
            "5 - very clear",
        ]
        .map(String::from)
        .to_vec();
        Criterion {
            name: "Clarity".into(),
            description: String::new(),
            scoring: infer_scoring(&values),
            accepted_values: values,
            robust: true,
        }
    }

    #[test]
    fn ordinal_values_match_by_label_or_number() {
        let c = clarity();
        assert_eq!(c.scoring, Scoring::Ordinal);
        assert_eq!(c.match_value("4 - clear"), Some(3));
        assert_eq!(c.match_value("4 - Clear."), Some(3));
        assert_eq!(c.match_value("4"), Some(3));
        assert_eq!(c.match_value("6"), None);
        assert_eq!(c.match_value("4 - very clear"), None);
        assert_eq!(c.match_value("clear"), None);
        assert_eq!(c.score(3), Some(0.75));
    }

    #[test]
    fn non_numeric_lists_default_to_informational() {
        let values = vec!["enactor".to_owned(), "acceptor".into(), "both".into()];
        assert_eq!(infer_scoring(&values), Scoring::Informational);
        let mut rubric = Rubric {
            aspect: Aspect::Violation,
            version: 1,
            task: String::new(),
            criteria: vec![Criterion {
                name: "Responsibility Assessment".into(),
                description: String::new(),
                accepted_values: values.clone(),
                robust: true,
                scoring: infer_scoring(&values),
            }],
        };
        assert_eq!(rubric.scored().count(), 0);
        let mut table = BTreeMap::new();
        table.insert("both".to_owned(), 1.0);
        assert!(rubric.declare_mapping("responsibility assessment", table));
        let c = &rubric.criteria[0];
        assert!(c.scored());
        assert_eq!(c.score(2), Some(1.0));
        assert_eq!(c.score(0), Some(0.5));
    }
}
