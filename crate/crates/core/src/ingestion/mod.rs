//! Corpus loading. Each supported layout is an adapter onto the canonical
//! one-conversation-per-line JSONL form.

mod downsample;
mod fill;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use downsample::{downsample, DownsampleSpec};
pub use fill::{fill_missing_fields, FillField, FillOutcome, FILL_STAGE};

use crate::error::{Error, Result};
use crate::schema::{
    check_conversation, Conversation, LabelTask, Provenance, Relationship, SettingsRecord, Summary, Turn,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    MpddJson,
    CpedCsv,
    LdcDir,
    GenericJsonl,
}

impl CorpusFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusFormat::MpddJson => "mpdd_json",
            CorpusFormat::CpedCsv => "cped_csv",
            CorpusFormat::LdcDir => "ldc_dir",
            CorpusFormat::GenericJsonl => "generic_jsonl",
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "mpdd_json" | "mpdd" => Ok(CorpusFormat::MpddJson),
            "cped_csv" | "cped" => Ok(CorpusFormat::CpedCsv),
            "ldc_dir" | "ldc" => Ok(CorpusFormat::LdcDir),
            "generic_jsonl" | "jsonl" => Ok(CorpusFormat::GenericJsonl),
            other => Err(Error::InvalidArgument(format!(
                "unknown corpus format '{other}' (expected mpdd_json, cped_csv, ldc_dir or generic_jsonl)"
            ))),
        }
    }
}

/// A malformed record. Loading continues past these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    /// `file:line` or `file:key`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub conversations: Vec<Conversation>,
    pub errors: Vec<RecordError>,
    /// Conversations per source.
    pub counts: BTreeMap<String, usize>,
}

/// Loads a corpus. Fails outright only when nothing could be parsed.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<LoadReport> {
    let path = path.as_ref();
    let mut sink = Sink::default();
    match format {
        CorpusFormat::MpddJson => load_mpdd(path, &mut sink)?,
        CorpusFormat::CpedCsv => load_cped(path, &mut sink)?,
        CorpusFormat::LdcDir => load_ldc(path, &mut sink)?,
        CorpusFormat::GenericJsonl => load_jsonl(path, &mut sink)?,
    }
    if sink.report.conversations.is_empty() {
        let detail = sink
            .report
            .errors
            .iter()
            .take(3)
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Parse(format!(
            "no conversations parsed from {} as {format}{}",
            path.display(),
            if detail.is_empty() { String::new() } else { format!(": {detail}") }
        )));
    }
    for c in &sink.report.conversations {
        *sink.report.counts.entry(c.source.clone()).or_default() += 1;
    }
    Ok(sink.report)
}

#[derive(Default)]
struct Sink {
    report: LoadReport,
    seen: BTreeSet<String>,
}

impl Sink {
    fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.report.errors.push(RecordError {
            location: location.into(),
            message: message.into(),
        });
    }

    fn push(&mut self, location: String, conversation: Conversation) {
        if let Some(v) = check_conversation(&conversation).into_iter().next() {
            self.error(location, format!("{}: {}", v.rule, v.message));
        } else if !self.seen.insert(conversation.id.clone()) {
            self.error(location, format!("duplicate conversation id '{}'", conversation.id));
        } else {
            self.report.conversations.push(conversation);
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into())
}

fn conversation(id: String, source: String, turns: Vec<Turn>) -> Conversation {
    Conversation {
        id,
        source,
        language: "zh".into(),
        turns,
        relationships: Vec::new(),
        settings: SettingsRecord::default(),
        summary: None,
    }
}

fn gold_relationship(a: &str, b: &str, relation: &str) -> Relationship {
    Relationship {
        speaker_a: a.to_owned(),
        speaker_b: b.to_owned(),
        relation: relation.to_owned(),
        provenance: Provenance::Gold,
    }
}

/// Adds a relationship unless the same unordered pair and relation exists.
fn add_relationship(rels: &mut Vec<Relationship>, r: Relationship) {
    let dup = rels.iter().any(|x| {
        x.relation == r.relation
            && ((x.speaker_a == r.speaker_a && x.speaker_b == r.speaker_b)
                || (x.speaker_a == r.speaker_b && x.speaker_b == r.speaker_a))
    });
    if !dup {
        rels.push(r);
    }
}

fn label_map(pairs: &[(LabelTask, Option<&str>)]) -> BTreeMap<LabelTask, String> {
    pairs
        .iter()
        .filter_map(|(task, v)| {
            let v = (*v)?.trim();
            (!v.is_empty()).then(|| (*task, v.to_owned()))
        })
        .collect()
}

#[derive(Deserialize)]
struct MpddTurn {
    speaker: String,
    utterance: String,
    #[serde(default)]
    emotion: Option<String>,
    #[serde(default)]
    listener: Vec<MpddListener>,
}

#[derive(Deserialize)]
struct MpddListener {
    name: String,
    #[serde(default)]
    relation: Option<String>,
}

/// `{ "<dialogue id>": [ {speaker, utterance, emotion, listener: [{name, relation}]} ] }`
fn load_mpdd(path: &Path, sink: &mut Sink) -> Result<()> {
    let text = read(path)?;
    let file = path.display().to_string();
    let doc: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{file}: not a JSON object of dialogues: {e}")))?;
    let source = format!("mpdd:{}", stem(path));
    for (key, value) in doc {
        let location = format!("{file}:{key}");
        let raw: Vec<MpddTurn> = match serde_json::from_value(value) {
            Ok(t) => t,
            Err(e) => {
                sink.error(location, e.to_string());
                continue;
            }
        };
        let turns: Vec<Turn> = raw
            .iter()
            .enumerate()
            .map(|(i, t)| Turn {
                index: i,
                speaker: t.speaker.trim().to_owned(),
                text: t.utterance.trim().to_owned(),
                labels: label_map(&[(LabelTask::Emotion, t.emotion.as_deref())]),
            })
            .collect();
        let mut c = conversation(format!("mpdd-{key}"), source.clone(), turns);
        let speakers: BTreeSet<String> = c.speakers().into_iter().map(str::to_owned).collect();
        let mut skipped = 0;
        for t in &raw {
            for l in &t.listener {
                let (Some(rel), a, b) = (l.relation.as_deref(), t.speaker.trim(), l.name.trim()) else {
                    continue;
                };
                if rel.trim().is_empty() || a == b {
                    continue;
                }
                if speakers.contains(a) && speakers.contains(b) {
                    add_relationship(&mut c.relationships, gold_relationship(a, b, rel.trim()));
                } else {
                    skipped += 1;
                }
            }
        }
        if skipped > 0 {
            log::debug!("{location}: {skipped} listener relations name non-speakers, skipped");
        }
        sink.push(location, c);
    }
    Ok(())
}

/// CPED-style utterance rows grouped by `Dialogue_ID` in file order.
fn load_cped(path: &Path, sink: &mut Sink) -> Result<()> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{file}: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{file}: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let (Some(dialogue), Some(speaker), Some(utterance)) = (col("Dialogue_ID"), col("Speaker"), col("Utterance")) else {
        return Err(Error::Parse(format!(
            "{file}: header must include Dialogue_ID, Speaker and Utterance"
        )));
    };
    let emotion = col("Emotion");
    let sentiment = col("Sentiment");
    let act = col("DA");
    let scene = col("Scene");
    let source = format!("cped:{}", stem(path));

    struct Pending {
        first_line: u64,
        turns: Vec<Turn>,
        scene: Option<String>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Pending> = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        // header is line 1
        let line = i as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                sink.error(format!("{file}:{line}"), e.to_string());
                continue;
            }
        };
        let get = |c: Option<usize>| c.and_then(|c| row.get(c)).map(str::trim).filter(|s| !s.is_empty());
        let (Some(d), Some(s), Some(u)) = (get(Some(dialogue)), get(Some(speaker)), get(Some(utterance))) else {
            sink.error(format!("{file}:{line}"), "missing Dialogue_ID, Speaker or Utterance");
            continue;
        };
        let entry = groups.entry(d.to_owned()).or_insert_with(|| {
            order.push(d.to_owned());
            Pending {
                first_line: line,
                turns: Vec::new(),
                scene: None,
            }
        });
        if entry.scene.is_none() {
            entry.scene = get(scene).map(str::to_owned);
        }
        let index = entry.turns.len();
        entry.turns.push(Turn {
            index,
            speaker: s.to_owned(),
            text: u.to_owned(),
            labels: label_map(&[
                (LabelTask::Emotion, get(emotion)),
                (LabelTask::Sentiment, get(sentiment)),
                (LabelTask::DialogueAct, get(act)),
            ]),
        });
    }
    for d in order {
        let p = groups.remove(&d).expect("grouped");
        let mut c = conversation(format!("cped-{d}"), source.clone(), p.turns);
        if let Some(scene) = p.scene {
            c.settings.field = Some(scene);
            c.settings.field_provenance = Some(Provenance::Gold);
        }
        sink.push(format!("{file}:{}", p.first_line), c);
    }
    Ok(())
}

#[derive(Deserialize, Default)]
struct LdcMeta {
    #[serde(default)]
    field: Option<String>,
    #[serde(default)]
    relationships: Vec<LdcRelation>,
    #[serde(default)]
    summary: Option<String>,
}

#[derive(Deserialize)]
struct LdcRelation {
    a: String,
    b: String,
    relation: String,
}

/// A directory of `<id>.tsv` files with `speaker<TAB>text[<TAB>emotion[<TAB>act]]`
/// rows, each optionally accompanied by `<id>.meta.json`.
fn load_ldc(path: &Path, sink: &mut Sink) -> Result<()> {
    let dir = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut files: Vec<PathBuf> = dir
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    files.sort();
    let source = format!(
        "ldc:{}",
        path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    );
    for f in files {
        let file = f.display().to_string();
        let text = match read(&f) {
            Ok(t) => t,
            Err(e) => {
                sink.error(file, e.to_string());
                continue;
            }
        };
        let mut turns = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 || cols[0].trim().is_empty() || cols[1].trim().is_empty() {
                sink.error(format!("{file}:{}", i + 1), "expected speaker<TAB>text");
                continue;
            }
            turns.push(Turn {
                index: turns.len(),
                speaker: cols[0].trim().to_owned(),
                text: cols[1].trim().to_owned(),
                labels: label_map(&[
                    (LabelTask::Emotion, cols.get(2).copied()),
                    (LabelTask::DialogueAct, cols.get(3).copied()),
                ]),
            });
        }
        let id = stem(&f);
        let mut c = conversation(format!("ldc-{id}"), source.clone(), turns);
        let meta_path = f.with_file_name(format!("{id}.meta.json"));
        if meta_path.exists() {
            let meta: LdcMeta = match read(&meta_path).and_then(|t| Ok(serde_json::from_str(&t)?)) {
                Ok(m) => m,
                Err(e) => {
                    sink.error(meta_path.display().to_string(), e.to_string());
                    LdcMeta::default()
                }
            };
            if let Some(field) = meta.field.filter(|f| !f.trim().is_empty()) {
                c.settings.field = Some(field);
                c.settings.field_provenance = Some(Provenance::Gold);
            }
            for r in meta.relationships {
                add_relationship(&mut c.relationships, gold_relationship(&r.a, &r.b, &r.relation));
            }
            c.summary = meta.summary.filter(|s| !s.trim().is_empty()).map(|text| Summary {
                text,
                provenance: Provenance::Gold,
            });
        }
        sink.push(file, c);
    }
    Ok(())
}

fn load_jsonl(path: &Path, sink: &mut Sink) -> Result<()> {
    let text = read(path)?;
    let file = path.display().to_string();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{file}:{}", i + 1);
        match serde_json::from_str::<Conversation>(line) {
            Ok(c) => sink.push(location, c),
            Err(e) => sink.error(location, e.to_string()),
        }
    }
    Ok(())
}

/// Canonical form: one conversation per line, in the given order.
pub fn to_jsonl(conversations: &[Conversation]) -> String {
    let mut out = String::new();
    for c in conversations {
        out.push_str(&serde_json::to_string(c).expect("conversation serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: impl AsRef<Path>, conversations: &[Conversation]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(conversations)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_names_parse() {
        for f in [
            CorpusFormat::MpddJson,
            CorpusFormat::CpedCsv,
            CorpusFormat::LdcDir,
            CorpusFormat::GenericJsonl,
        ] {
            assert_eq!(f.as_str().parse::<CorpusFormat>().unwrap(), f);
        }
        assert_eq!("ldc".parse::<CorpusFormat>().unwrap(), CorpusFormat::LdcDir);
        assert!("xml".parse::<CorpusFormat>().is_err());
    }

    #[test]
    fn relationships_dedupe_unordered() {
        let mut rels = Vec::new();
        add_relationship(&mut rels, gold_relationship("A", "B", "friends"));
        add_relationship(&mut rels, gold_relationship("B", "A", "friends"));
        assert_eq!(rels.len(), 1);
    }
}
