#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use clap::Parser;
use http_body_util::BodyExt;
use normlens::elicitation::{elicit, ElicitOptions, PromptScript};
use normlens::provider::{FixedClock, FnProvider, ProviderError, RecordingProvider, RetryPolicy};
use normlens::schema::Turn;
use normlens::{Conversation, Project, Store};
use normlens_cli::cli::{run, Cli};
use normlens_cli::config::Config;
use normlens_cli::server::{router, AppState};
use serde_json::Value;
use tower::ServiceExt;

pub const ELDERS: [&str; 10] = [
    "elders", "respect", "greet", "grandparents", "bow", "seniors", "courtesy", "address", "honor", "age",
];
pub const GIFTS: [&str; 10] = [
    "gift", "return", "envelope", "reciprocate", "favor", "repay", "present", "money", "obligation", "wrapped",
];

/// Five norm lines for conversation `c`: alternating themes across
/// conversations, each line a rotating window over the theme vocabulary.
pub fn norm_lines(c: usize) -> Vec<(String, String)> {
    (0..5)
        .map(|i| {
            let theme = if (c + i).is_multiple_of(2) { &ELDERS } else { &GIFTS };
            let start = (c * 3 + i * 7) % theme.len();
            let words: Vec<&str> = (0..7).map(|j| theme[(start + j) % theme.len()]).collect();
            let title = format!("{} {}", theme[start], theme[(start + 1) % theme.len()]);
            (title, words.join(" "))
        })
        .collect()
}

pub fn conversations(n: usize) -> Vec<Conversation> {
    (0..n)
        .map(|c| Conversation {
            id: format!("conv-{c:02}"),
            source: if c % 2 == 0 { "fixture:a".into() } else { "fixture:b".into() },
            language: "en".into(),
            turns: vec![
                Turn {
                    index: 0,
                    speaker: "Li".into(),
                    text: format!("Hello, this is scene {c:02}."),
                    labels: Default::default(),
                },
                Turn {
                    index: 1,
                    speaker: "Wang".into(),
                    text: "Good to see you, uncle.".into(),
                    labels: Default::default(),
                },
            ],
            relationships: Vec::new(),
            settings: Default::default(),
            summary: None,
        })
        .collect()
}

pub fn write_corpus(path: &Path, convs: &[Conversation]) {
    let text: String = convs
        .iter()
        .map(|c| serde_json::to_string(c).unwrap() + "\n")
        .collect();
    std::fs::write(path, text).unwrap();
}

fn scene_of(text: &str) -> usize {
    let at = text.find("scene ").expect("scene marker") + 6;
    text[at..at + 2].parse().unwrap()
}

/// Answers the four elicitation prompts for the fixture corpus.
pub fn elicitation_answer(request: &normlens::provider::ChatRequest) -> Result<String, ProviderError> {
    let first = &request.messages[0].content;
    let last = request.last_user().unwrap_or_default();
    if last.contains("Translate") {
        return Ok(first.lines().skip(1).collect::<Vec<_>>().join("\n"));
    }
    if last.contains("relationships") {
        return Ok("Li: Wang - uncle and nephew".into());
    }
    if last.contains("Summarize") {
        return Ok("Li greets Wang. They exchange pleasantries.".into());
    }
    let mut out = String::from("Norms:\n");
    for (i, (title, body)) in norm_lines(scene_of(first)).into_iter().enumerate() {
        out.push_str(&format!("{}. {title}: {body}\n", i + 1));
    }
    out.push_str("\nViolations:\nNone observed.\n");
    Ok(out)
}

/// Records a replay cassette for the fixture corpus.
pub fn record_elicitation(path: &Path, convs: &[Conversation]) {
    let recorder = RecordingProvider::new(FnProvider(elicitation_answer));
    let options = ElicitOptions {
        run: "elicit".into(),
        retry: RetryPolicy::default(),
        clock: &FixedClock(0),
    };
    for c in convs {
        elicit(c, &recorder, &PromptScript::default(), &options).unwrap();
    }
    recorder.save(path).unwrap();
}

/// Runs one command line in-process. The first argument is the program name.
pub fn cli(project: &Path, args: &[&str]) -> normlens::Result<String> {
    let mut argv: Vec<String> = vec!["normlens".into(), "-p".into(), project.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let parsed = Cli::try_parse_from(&argv).map_err(|e| normlens::Error::InvalidArgument(e.to_string()))?;
    let mut out = Vec::new();
    run(parsed, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

pub fn cli_ok(project: &Path, args: &[&str]) -> String {
    cli(project, args).unwrap_or_else(|e| panic!("{args:?} failed: {e}"))
}

/// A project with the fixture corpus ingested, elicited and embedded.
pub struct Prepared {
    pub dir: tempfile::TempDir,
    pub project: PathBuf,
}

pub fn prepared(n_convs: usize) -> Prepared {
    let dir = tempfile::tempdir().unwrap();
    let convs = conversations(n_convs);
    let corpus = dir.path().join("corpus.jsonl");
    let cassette = dir.path().join("elicit.cassette.jsonl");
    write_corpus(&corpus, &convs);
    record_elicitation(&cassette, &convs);
    let project = dir.path().join("project");
    cli_ok(&project, &["ingest", "--format", "jsonl", corpus.to_str().unwrap()]);
    cli_ok(&project, &["elicit", "--provider", &format!("replay:{}", cassette.display())]);
    cli_ok(&project, &["embed", "--embedder", "hashing"]);
    Prepared { dir, project }
}

/// Copies a project directory (event log only; snapshots are derived).
pub fn copy_project(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    std::fs::copy(from.join("events.jsonl"), to.join("events.jsonl")).unwrap();
}

pub fn load(project: &Path) -> Project {
    Store::open(project).unwrap().project().clone()
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
}

/// Sends one request through the router.
pub async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    token: Option<&str>,
    headers: &[(&str, &str)],
    body: Option<Value>,
) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    Reply { status, body }
}

pub fn structure(name: &str) -> Value {
    serde_json::json!({
        "name": name,
        "description": format!("{name} in everyday interaction"),
        "settings": ["family"],
        "violation_sketch": "ignoring the expected behavior",
        "actor_roles": "younger family member",
        "recipient_roles": "older family member",
    })
}

/// Deterministic seed pick: exemplars of the largest cluster of `round`
/// (ties by id), topped up with its other members to five.
pub fn pick_seeds(project: &Project, round: u32) -> Vec<String> {
    let active = project.active_assignments();
    let mut views: Vec<_> = project
        .clusters
        .iter()
        .filter(|c| c.iteration == round)
        .collect();
    views.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then(a.cluster_id.cmp(&b.cluster_id)));
    let view = views.first().expect("a cluster");
    let mut seeds: Vec<String> = Vec::new();
    for id in view.exemplar_ids.iter().chain(&view.members) {
        if seeds.len() == 5 {
            break;
        }
        if !seeds.contains(id) && !active.contains_key(id.as_str()) {
            seeds.push(id.clone());
        }
    }
    seeds
}

/// Good marks: knn members of the concept; bad marks: unmapped norms.
pub fn pick_marks(project: &Project, concept_id: &str) -> (Vec<String>, Vec<String>) {
    let active = project.active_assignments();
    let mut good: Vec<String> = active
        .values()
        .filter(|a| a.concept_id == concept_id && a.provenance == normlens::schema::AssignmentProvenance::Knn)
        .map(|a| a.description_id.clone())
        .collect();
    good.sort();
    good.truncate(3);
    let mut bad = project.unmapped_ids();
    bad.sort();
    bad.truncate(3);
    (good, bad)
}

pub const TAU: &str = "0.45";
pub const LAMBDA: &str = "0.5";

/// Two discovery rounds driven from the command line.
pub fn session_cli(project: &Path, scratch: &Path) {
    for (round, name) in [(1u32, "Respect for elders"), (2, "Gift reciprocity")] {
        cli_ok(project, &["cluster", "--k", "2", "--seed", "7"]);
        let p = load(project);
        let spec = serde_json::json!({
            "seed_ids": pick_seeds(&p, round),
            "annotator": "ann1",
        });
        let mut spec_doc = structure(name);
        spec_doc.as_object_mut().unwrap().extend(spec.as_object().unwrap().clone());
        let file = scratch.join(format!("concept-{round}.json"));
        std::fs::write(&file, spec_doc.to_string()).unwrap();
        cli_ok(project, &["concept", "create", file.to_str().unwrap()]);
        cli_ok(project, &["augment", "--tau", TAU]);
        let p = load(project);
        let cid = p.concept_by_name(name).unwrap().id.clone();
        let (good, bad) = pick_marks(&p, &cid);
        let (good, bad) = (good.join(","), bad.join(","));
        let mut args = vec!["concept", "mark", cid.as_str(), "--annotator", "ann1"];
        if !good.is_empty() {
            args.extend(["--good", good.as_str()]);
        }
        if !bad.is_empty() {
            args.extend(["--bad", bad.as_str()]);
        }
        cli_ok(project, &args);
        cli_ok(project, &["reassign", "--tau", TAU, "--lambda", LAMBDA]);
    }
}

/// The same two rounds driven through the HTTP API.
pub async fn session_api(app: &axum::Router) {
    let tok = Some("ann1");
    let tau: f64 = TAU.parse().unwrap();
    let lambda: f64 = LAMBDA.parse().unwrap();
    for (round, name) in [(1u32, "Respect for elders"), (2, "Gift reciprocity")] {
        let r = call(app, "POST", "/rounds/next", tok, &[], Some(serde_json::json!({"k": 2, "seed": 7}))).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.body);
        let r = call(app, "GET", &format!("/clusters?round={round}"), tok, &[], None).await;
        assert_eq!(r.status, StatusCode::OK);
        let seeds = pick_seeds_api(&r.body, &progress_assigned(app).await);
        let mut body = structure(name);
        body["seed_ids"] = serde_json::json!(seeds);
        let r = call(app, "POST", "/concepts", tok, &[], Some(body)).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
        let cid = r.body["concept"]["id"].as_str().unwrap().to_owned();
        let r = call(app, "POST", "/rounds/augment", tok, &[], Some(serde_json::json!({"tau": tau}))).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.body);
        let (good, bad) = marks_api(app, &cid).await;
        let r = call(
            app,
            "POST",
            &format!("/concepts/{cid}/marks"),
            tok,
            &[],
            Some(serde_json::json!({"good": good, "bad": bad})),
        )
        .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.body);
        let r = call(
            app,
            "POST",
            "/rounds/reassign",
            tok,
            &[],
            Some(serde_json::json!({"tau": tau, "lambda": lambda})),
        )
        .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    }
}

/// Ids with an active assignment, read through `/concepts` and
/// `/descriptions/{id}`.
async fn progress_assigned(app: &axum::Router) -> std::collections::BTreeSet<String> {
    let r = call(app, "GET", "/clusters", None, &[], None).await;
    let mut out = std::collections::BTreeSet::new();
    for c in r.body["clusters"].as_array().unwrap() {
        for m in c["members"].as_array().unwrap() {
            let id = m.as_str().unwrap();
            let d = call(app, "GET", &format!("/descriptions/{id}"), None, &[], None).await;
            if !d.body["assignment"].is_null() {
                out.insert(id.to_owned());
            }
        }
    }
    out
}

fn pick_seeds_api(clusters: &Value, assigned: &std::collections::BTreeSet<String>) -> Vec<String> {
    let mut views: Vec<&Value> = clusters["clusters"].as_array().unwrap().iter().collect();
    views.sort_by(|a, b| {
        b["size"]
            .as_u64()
            .cmp(&a["size"].as_u64())
            .then(a["cluster_id"].as_str().cmp(&b["cluster_id"].as_str()))
    });
    let view = views[0];
    let exemplars = view["exemplars"].as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap());
    let members = view["members"].as_array().unwrap().iter().map(|m| m.as_str().unwrap());
    let mut seeds: Vec<String> = Vec::new();
    for id in exemplars.chain(members) {
        if seeds.len() == 5 {
            break;
        }
        if !seeds.iter().any(|s| s == id) && !assigned.contains(id) {
            seeds.push(id.to_owned());
        }
    }
    seeds
}

async fn marks_api(app: &axum::Router, concept_id: &str) -> (Vec<String>, Vec<String>) {
    let r = call(app, "GET", &format!("/concepts/{concept_id}/members"), None, &[], None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    let mut good: Vec<String> = r.body["members"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|m| m["provenance"] == "knn")
        .map(|m| m["description_id"].as_str().unwrap().to_owned())
        .collect();
    good.sort();
    good.truncate(3);
    let r = call(app, "GET", "/descriptions?unmapped=true", None, &[], None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    let mut bad: Vec<String> = r.body["ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_owned())
        .collect();
    bad.sort();
    bad.truncate(3);
    (good, bad)
}

/// A one-criterion relevance rubric on a five-point scale.
pub fn clarity_rubric() -> Value {
    serde_json::json!({
        "aspect": "relevance",
        "version": 1,
        "task": "Judge whether the norm description applies to the conversation.",
        "criteria": [{
            "name": "Clarity",
            "description": "How clearly the description follows from the conversation.",
            "accepted_values": ["1 - very unclear", "2 - unclear", "3 - neutral", "4 - clear", "5 - very clear"],
            "robust": true,
            "scoring": {"kind": "ordinal"}
        }]
    })
}

/// Quantifier stand-in: rates by a hash of the request, so answers differ
/// between targets but never between runs.
pub fn quantifier_answer(request: &normlens::provider::ChatRequest) -> Result<String, ProviderError> {
    let text = request.last_user().unwrap_or_default();
    let h = text.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    Ok(format!("Clarity: {}", 1 + h % 5))
}

/// Runs the scripted two-round session through the CLI and through the API
/// on copies of one prepared project and checks that both end identical.
pub async fn session_equivalence() {
    let prep = prepared(12);
    let base = load(&prep.project);
    assert_eq!(base.live_norms().count(), 60);

    let via_cli = prep.dir.path().join("via-cli");
    let via_api = prep.dir.path().join("via-api");
    copy_project(&prep.project, &via_cli);
    copy_project(&prep.project, &via_api);

    session_cli(&via_cli, prep.dir.path());

    let state = AppState::new(Store::open(&via_api).unwrap(), Config::default(), None, None);
    let app = router(state);
    session_api(&app).await;
    drop(app);

    let a = load(&via_cli);
    let b = load(&via_api);
    let cov = normlens::discovery::coverage_stats(&a);
    assert_eq!(a.concepts.len(), 2);
    assert!(cov.coverage_fraction >= 0.6, "{cov:?}");
    assert!(a.to_json() == b.to_json(), "CLI and API snapshots differ");
}
