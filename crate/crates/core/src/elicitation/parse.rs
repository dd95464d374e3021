//! Line-oriented parsers for elicitation responses.
//!
//! Every function here is total: arbitrary input yields a (possibly empty)
//! result plus diagnostics, never an error.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::schema::{Provenance, Relationship};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectItem {
    /// Index into `Sections::violations`, when the effect could be linked.
    pub violation_index: Option<usize>,
    /// Text before the effect label, e.g. `Disrespectful language`.
    pub reference: String,
    /// e.g. `Observed effect`.
    pub label: String,
    pub body: String,
}

impl EffectItem {
    pub fn title(&self) -> String {
        match (self.reference.is_empty(), self.label.is_empty()) {
            (false, false) => format!("{} - {}", self.reference, self.label),
            (false, true) => self.reference.clone(),
            (true, false) => self.label.clone(),
            (true, true) => String::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sections {
    pub norms: Vec<Item>,
    pub violations: Vec<Item>,
    pub effects: Vec<EffectItem>,
    pub diagnostics: Vec<String>,
}

impl Sections {
    pub fn is_empty(&self) -> bool {
        self.norms.is_empty() && self.violations.is_empty() && self.effects.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Norms,
    Violations,
    Effects,
    Other,
}

/// Removes markdown emphasis and a leading bullet or list number.
/// Returns the cleaned line and whether a list marker was present.
pub(crate) fn clean_line(line: &str) -> (String, bool) {
    let mut s = line.replace("**", "").replace("__", "");
    s = s.trim().to_owned();
    let mut marker = false;
    for bullet in ["- ", "* ", "• ", "· "] {
        if let Some(rest) = s.strip_prefix(bullet) {
            s = rest.trim_start().to_owned();
            marker = true;
            break;
        }
    }
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 && digits <= 3 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            s = r.trim_start().to_owned();
            marker = true;
        }
    }
    (s.trim().to_owned(), marker)
}

fn header_of(line: &str) -> Option<Section> {
    let head = line.strip_suffix(':').unwrap_or(line).trim();
    if head.is_empty() || head.contains(':') || head.split_whitespace().count() > 5 {
        return None;
    }
    // a bare word line without a colon is only a header for the known names
    let had_colon = line.ends_with(':');
    let lower = head.to_ascii_lowercase();
    let last = lower.split_whitespace().last().unwrap_or("");
    let section = match last {
        "norms" | "norm" => Section::Norms,
        "violations" | "violation" => Section::Violations,
        "effects" | "effect" => Section::Effects,
        _ if had_colon => Section::Other,
        _ => return None,
    };
    if !had_colon && lower.split_whitespace().count() > 2 {
        return None;
    }
    Some(section)
}

/// Splits an App D style response into norms, violations and effects.
pub fn parse_sections(text: &str) -> Sections {
    let mut out = Sections::default();
    let mut current: Option<Section> = None;
    let mut raw_effects: Vec<(String, String, String)> = Vec::new();
    let mut saw_header = false;
    let mut stray = 0usize;

    for raw in text.lines() {
        let (line, marker) = clean_line(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(section) = header_of(&line) {
            current = Some(section);
            saw_header = true;
            continue;
        }
        let Some(section) = current else {
            stray += 1;
            continue;
        };
        let split = line
            .split_once(':')
            .filter(|(t, b)| !t.trim().is_empty() && !b.trim().is_empty() && t.len() <= 160);
        match section {
            Section::Other => {}
            Section::Norms | Section::Violations => {
                let items = if section == Section::Norms {
                    &mut out.norms
                } else {
                    &mut out.violations
                };
                match split {
                    Some((t, b)) => items.push(Item {
                        title: t.trim().to_owned(),
                        body: b.trim().to_owned(),
                    }),
                    None if is_nil_answer(&line) => {}
                    None if marker || items.is_empty() => items.push(Item {
                        title: String::new(),
                        body: line.clone(),
                    }),
                    None => {
                        let last = items.last_mut().expect("non-empty");
                        append(&mut last.body, &line);
                    }
                }
            }
            Section::Effects => match split {
                Some((t, b)) => {
                    let (reference, label) = split_effect_title(t.trim());
                    raw_effects.push((reference, label, b.trim().to_owned()));
                }
                None if is_nil_answer(&line) => {}
                None if marker || raw_effects.is_empty() => {
                    raw_effects.push((String::new(), String::new(), line.clone()))
                }
                None => append(&mut raw_effects.last_mut().expect("non-empty").2, &line),
            },
        }
    }

    if !saw_header {
        out.diagnostics.push("no section header found".into());
        return out;
    }
    if stray > 0 {
        out.diagnostics
            .push(format!("{stray} line(s) before the first section header ignored"));
    }
    for (ordinal, (reference, label, body)) in raw_effects.into_iter().enumerate() {
        let violation_index = link_effect(&reference, ordinal, &out.violations);
        if violation_index.is_none() {
            out.diagnostics.push(format!(
                "effect {} ('{}') matches no violation",
                ordinal + 1,
                reference
            ));
        }
        out.effects.push(EffectItem {
            violation_index,
            reference,
            label,
            body,
        });
    }
    out
}

/// `None observed.`, `No violations.`, `N/A` and the like.
fn is_nil_answer(line: &str) -> bool {
    let l = line.trim().trim_end_matches('.').to_ascii_lowercase();
    l == "none"
        || l == "no"
        || l == "n/a"
        || l.starts_with("none ")
        || l.starts_with("none,")
        || l.starts_with("no violation")
        || l.starts_with("no cultural norm violation")
        || l.starts_with("no effect")
        || l.starts_with("there are no ")
        || l.starts_with("there is no ")
}

fn append(body: &mut String, line: &str) {
    if !body.is_empty() {
        body.push(' ');
    }
    body.push_str(line);
}

/// `Disrespectful language - Observed effect` into reference and label.
fn split_effect_title(title: &str) -> (String, String) {
    for sep in [" - ", " – ", " — "] {
        if let Some((r, l)) = title.rsplit_once(sep) {
            if l.to_ascii_lowercase().contains("effect") {
                return (r.trim().to_owned(), l.trim().to_owned());
            }
        }
    }
    if title.to_ascii_lowercase().contains("effect") && title.split_whitespace().count() <= 3 {
        return (String::new(), title.to_owned());
    }
    (title.to_owned(), String::new())
}

fn normalize_title(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.')
        .to_lowercase()
}

/// Title match first (exact, then prefix either way), then the reference's
/// leading index, then ordinal position.
fn link_effect(reference: &str, ordinal: usize, violations: &[Item]) -> Option<usize> {
    let r = normalize_title(reference);
    if !r.is_empty() {
        let titles: Vec<String> = violations.iter().map(|v| normalize_title(&v.title)).collect();
        if let Some(i) = titles.iter().position(|t| !t.is_empty() && *t == r) {
            return Some(i);
        }
        if let Some(i) = titles
            .iter()
            .position(|t| !t.is_empty() && (t.starts_with(&r) || r.starts_with(t.as_str())))
        {
            return Some(i);
        }
        let lead: String = r.chars().take_while(|c| c.is_ascii_digit()).collect();
        let rest = r[lead.len()..].trim();
        if !lead.is_empty() && (rest.is_empty() || rest.starts_with(['.', ')'])) {
            let n: usize = lead.parse().ok()?;
            return (1..=violations.len()).contains(&n).then(|| n - 1);
        }
    }
    (ordinal < violations.len()).then_some(ordinal)
}

/// Parses `A: B — relation` lines (em dash, en dash or ` - `). Also accepts
/// `A and B: relation` and `A - B: relation`. Only pairs of known speakers
/// are kept, named as they appear in the conversation.
pub fn parse_relationships(text: &str, speakers: &BTreeSet<&str>) -> (Vec<Relationship>, Vec<String>) {
    let mut out = Vec::new();
    let mut diagnostics = Vec::new();
    let canon = |name: &str| {
        let n = name.trim().trim_matches(|c: char| c == '"' || c == '\'');
        speakers
            .iter()
            .find(|s| s.eq_ignore_ascii_case(n))
            .map(|s| (*s).to_owned())
    };
    for raw in text.lines() {
        let (line, _) = clean_line(raw);
        let Some((a, b, relation)) = relationship_parts(&line) else {
            continue;
        };
        let (Some(sa), Some(sb)) = (canon(&a), canon(&b)) else {
            diagnostics.push(format!("relationship '{line}' names an unknown speaker"));
            continue;
        };
        if sa == sb || relation.is_empty() {
            diagnostics.push(format!("relationship '{line}' is malformed"));
            continue;
        }
        let duplicate = out.iter().any(|r: &Relationship| {
            (r.speaker_a == sa && r.speaker_b == sb) || (r.speaker_a == sb && r.speaker_b == sa)
        });
        if !duplicate {
            out.push(Relationship {
                speaker_a: sa,
                speaker_b: sb,
                relation,
                provenance: Provenance::ProviderFilled,
            });
        }
    }
    (out, diagnostics)
}

fn split_dash(s: &str) -> Option<(&str, &str)> {
    ["—", "–", " - "]
        .into_iter()
        .find_map(|sep| s.split_once(sep))
}

fn relationship_parts(line: &str) -> Option<(String, String, String)> {
    let (left, right) = line.split_once(':')?;
    let (left, right) = (left.trim(), right.trim());
    if let Some((b, rel)) = split_dash(right) {
        if !left.contains(" and ") && split_dash(left).is_none() {
            return Some((left.into(), b.trim().into(), rel.trim().into()));
        }
    }
    let (a, b) = left.split_once(" and ").or_else(|| split_dash(left))?;
    Some((a.trim().into(), b.trim().into(), right.trim_end_matches('.').trim().into()))
}

/// Strips a leading `Summary:` label and surrounding whitespace.
pub fn parse_summary(text: &str) -> Option<String> {
    let mut t = text.trim();
    if let Some((head, rest)) = t.split_once(':') {
        if clean_line(head).0.eq_ignore_ascii_case("summary") {
            t = rest.trim();
        }
    }
    let t = t.replace("**", "");
    let t = t.split_whitespace().collect::<Vec<_>>().join(" ");
    (!t.is_empty()).then_some(t)
}
