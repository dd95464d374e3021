//! JSON-over-HTTP API used by the annotation console.
//!
//! Reads take a snapshot of the project under the store lock. Mutations go
//! through the same [`normlens::commands`] functions the CLI uses, so a
//! session driven over HTTP leaves the same log as one driven from the
//! shell. Requests carrying `x-expected-version` are rejected with 409 when
//! the project has moved on; requests carrying `x-request-id` are answered
//! from a cache on retry. Round operations and verification batches hold
//! an exclusive round lock and fail fast with 409 while it is taken.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use normlens::commands::{self, ConceptSpec, Outcome};
use normlens::discovery::{coverage_stats, vector};
use normlens::metrics;
use normlens::provider::ChatProvider;
use normlens::schema::YesNo;
use normlens::{Aspect, Error, HumanJudgment, Project, Store, SymbolicStructure, Workflow};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Config;

/// Structured error body: `{code, message, offending_ids}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub offending_ids: Vec<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_owned(),
            message: message.into(),
            offending_ids: Vec::new(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Precondition { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Invariant { .. } => StatusCode::CONFLICT,
            Error::NotFound { .. } => StatusCode::NOT_FOUND,
            Error::InvalidArgument(_) | Error::Parse(_) | Error::Json(_) => StatusCode::BAD_REQUEST,
            Error::Provider(_) => StatusCode::BAD_GATEWAY,
            Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status: status.as_u16(),
            code: e.code().to_owned(),
            message: e.to_string(),
            offending_ids: e.offending_ids().to_vec(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult = Result<(StatusCode, Json<Value>), ApiError>;

struct Shared {
    store: Mutex<Store>,
    config: Config,
    provider: Option<Arc<dyn ChatProvider>>,
    secret: Option<String>,
    round_lock: Arc<tokio::sync::Mutex<()>>,
    replies: Mutex<HashMap<String, (u16, Value)>>,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(store: Store, config: Config, provider: Option<Arc<dyn ChatProvider>>, secret: Option<String>) -> Self {
        Self {
            shared: Arc::new(Shared {
                store: Mutex::new(store),
                config,
                provider,
                secret,
                round_lock: Arc::new(tokio::sync::Mutex::new(())),
                replies: Mutex::new(HashMap::new()),
            }),
        }
    }

    /// The lock held by round operations and verification batches.
    pub fn round_lock(&self) -> Arc<tokio::sync::Mutex<()>> {
        self.shared.round_lock.clone()
    }

    fn store(&self) -> MutexGuard<'_, Store> {
        self.shared.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// A copy of the current project state.
    pub fn project(&self) -> Project {
        self.store().project().clone()
    }

    pub fn version(&self) -> u64 {
        self.store().version()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/clusters", get(clusters))
        .route("/clusters/{id}/samples", get(samples))
        .route("/concepts", get(list_concepts).post(create_concept))
        .route("/concepts/{id}/marks", post(mark))
        .route("/concepts/{id}/members", get(members))
        .route("/descriptions", get(list_descriptions))
        .route("/descriptions/{id}", get(description))
        .route("/rounds/next", post(next_round))
        .route("/rounds/augment", post(augment))
        .route("/rounds/reassign", post(reassign))
        .route("/progress", get(progress))
        .route("/judgments", post(judgments))
        .route("/verify", post(verify))
        .route("/reports/{kind}", get(report))
        .with_state(state)
}

/// Serves the API until interrupted.
pub fn serve(state: AppState, addr: &str) -> normlens::Result<()> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("<runtime>", e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::io(addr, e))?;
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::io(addr, e))
    })
}

/// Annotator id from `Authorization: Bearer <annotator>[:<secret>]`.
fn annotator(state: &AppState, headers: &HeaderMap) -> Result<String, ApiError> {
    let unauthorized = |m: &str| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", m);
    let token = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or_else(|| unauthorized("bearer token required"))?;
    let (id, secret) = match token.split_once(':') {
        Some((id, s)) => (id, Some(s)),
        None => (token, None),
    };
    if id.is_empty() {
        return Err(unauthorized("token carries no annotator id"));
    }
    if let Some(expected) = &state.shared.secret {
        if secret != Some(expected.as_str()) {
            return Err(unauthorized("bad token secret"));
        }
    }
    Ok(id.to_owned())
}

fn parse_body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let slice: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(slice)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))
}

fn expected_version(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    match headers.get("x-expected-version") {
        None => Ok(None),
        Some(v) => v
            .to_str()
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .map(Some)
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "invalid_argument", "x-expected-version must be an integer")),
    }
}

fn request_id(headers: &HeaderMap) -> Option<String> {
    headers
        .get("x-request-id")
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
        .filter(|s| !s.is_empty())
}

fn cached(state: &AppState, id: &Option<String>) -> Option<(StatusCode, Json<Value>)> {
    let id = id.as_ref()?;
    let replies = state.shared.replies.lock().unwrap_or_else(|e| e.into_inner());
    replies
        .get(id)
        .map(|(s, v)| (StatusCode::from_u16(*s).unwrap_or(StatusCode::OK), Json(v.clone())))
}

fn remember(state: &AppState, id: Option<String>, status: StatusCode, body: &Value) {
    if let Some(id) = id {
        state
            .shared
            .replies
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, (status.as_u16(), body.clone()));
    }
}

/// Runs one mutation: auth, replay cache, version check, then the command
/// and its append under a single store lock.
fn mutate<F>(state: &AppState, headers: &HeaderMap, status: StatusCode, f: F) -> ApiResult
where
    F: FnOnce(&Project, &str) -> normlens::Result<(Outcome, Value)>,
{
    let who = annotator(state, headers)?;
    let rid = request_id(headers);
    if let Some(reply) = cached(state, &rid) {
        return Ok(reply);
    }
    let expected = expected_version(headers)?;
    let mut store = state.store();
    if let Some(v) = expected {
        if v != store.version() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "conflict",
                format!("project is at version {}, request expected {v}", store.version()),
            ));
        }
    }
    let (outcome, mut body) = f(store.project(), &who)?;
    let version = store.append_all(outcome.events)?;
    drop(store);
    if let Value::Object(map) = &mut body {
        map.insert("version".into(), json!(version));
        map.insert("warnings".into(), json!(outcome.warnings));
    }
    remember(state, rid, status, &body);
    Ok((status, Json(body)))
}

fn round_busy() -> ApiError {
    ApiError::new(StatusCode::CONFLICT, "round_in_progress", "another round operation is running")
}

#[derive(Deserialize)]
struct RoundQuery {
    round: Option<u32>,
}

#[derive(Serialize)]
struct Exemplar {
    id: String,
    text: String,
}

fn text_of(p: &Project, id: &str) -> String {
    p.descriptions.get(id).map(|d| d.text()).unwrap_or_default()
}

async fn clusters(State(state): State<AppState>, Query(q): Query<RoundQuery>) -> ApiResult {
    let p = state.project();
    let round = q.round.unwrap_or(p.round);
    let views: Vec<Value> = p
        .clusters
        .iter()
        .chain(&p.archived_clusters)
        .filter(|c| c.iteration == round)
        .map(|c| {
            json!({
                "cluster_id": c.cluster_id,
                "iteration": c.iteration,
                "members": c.members,
                "size": c.members.len(),
                "exemplars": c.exemplar_ids.iter().map(|id| Exemplar { id: id.clone(), text: text_of(&p, id) }).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok((StatusCode::OK, Json(json!({ "round": round, "clusters": views, "version": p.version }))))
}

#[derive(Deserialize)]
struct SampleQuery {
    n: Option<usize>,
}

async fn samples(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<SampleQuery>) -> ApiResult {
    let p = state.project();
    let c = p
        .clusters
        .iter()
        .chain(&p.archived_clusters)
        .find(|c| c.cluster_id == id)
        .ok_or_else(|| ApiError::from(Error::not_found("cluster", &id)))?;
    let mut scored: Vec<(f64, &String)> = c
        .members
        .iter()
        .filter_map(|m| p.embeddings.get(m).map(|e| (vector::cosine(&e.vector, &c.centroid), m)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    let n = q.n.unwrap_or(normlens::discovery::EXEMPLARS);
    let samples: Vec<Value> = scored
        .into_iter()
        .take(n)
        .map(|(score, id)| json!({ "id": id, "text": text_of(&p, id), "score": score }))
        .collect();
    Ok((StatusCode::OK, Json(json!({ "cluster_id": id, "samples": samples }))))
}

async fn list_concepts(State(state): State<AppState>) -> ApiResult {
    let p = state.project();
    let active = p.active_assignments();
    let concepts: Vec<Value> = p
        .concepts_in_order()
        .into_iter()
        .map(|c| {
            let members = active.values().filter(|a| a.concept_id == c.id).count();
            json!({ "concept": c, "members": members })
        })
        .collect();
    Ok((StatusCode::OK, Json(json!({ "concepts": concepts, "version": p.version }))))
}

/// Active assignments of one concept, best score first.
async fn members(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let p = state.project();
    if !p.concepts.contains_key(&id) {
        return Err(Error::not_found("concept", &id).into());
    }
    let mut rows: Vec<_> = p
        .active_assignments()
        .into_values()
        .filter(|a| a.concept_id == id)
        .collect();
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.description_id.cmp(&b.description_id)));
    let members: Vec<Value> = rows
        .into_iter()
        .map(|a| {
            json!({
                "description_id": a.description_id,
                "text": text_of(&p, &a.description_id),
                "provenance": a.provenance.as_str(),
                "score": a.score,
                "iteration": a.iteration,
            })
        })
        .collect();
    Ok((StatusCode::OK, Json(json!({ "concept_id": id, "members": members, "version": p.version }))))
}

#[derive(Deserialize)]
struct DescriptionQuery {
    #[serde(default)]
    unmapped: bool,
}

async fn list_descriptions(State(state): State<AppState>, Query(q): Query<DescriptionQuery>) -> ApiResult {
    let p = state.project();
    let ids: Vec<String> = if q.unmapped {
        p.unmapped_ids()
    } else {
        p.descriptions.keys().cloned().collect()
    };
    Ok((StatusCode::OK, Json(json!({ "ids": ids, "version": p.version }))))
}

#[derive(Deserialize)]
struct CreateConcept {
    #[serde(flatten)]
    structure: SymbolicStructure,
    seed_ids: Vec<String>,
}

async fn create_concept(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let req: CreateConcept = parse_body(&body)?;
    mutate(&state, &headers, StatusCode::CREATED, |p, who| {
        let spec = ConceptSpec {
            structure: req.structure,
            seed_ids: req.seed_ids,
            annotator: who.to_owned(),
        };
        let outcome = commands::create_concept(p, &spec)?;
        let concept = match &outcome.events[0] {
            normlens::Event::ConceptCreated { concept, .. } => json!(concept),
            _ => Value::Null,
        };
        Ok((outcome, json!({ "concept": concept })))
    })
}

#[derive(Deserialize)]
struct Marks {
    #[serde(default)]
    good: Vec<String>,
    #[serde(default)]
    bad: Vec<String>,
}

async fn mark(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: Marks = parse_body(&body)?;
    mutate(&state, &headers, StatusCode::OK, |p, who| {
        let outcome = commands::mark(p, &id, &req.good, &req.bad, who)?;
        Ok((outcome, json!({ "concept_id": id })))
    })
}

async fn description(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let p = state.project();
    let d = p
        .descriptions
        .get(&id)
        .ok_or_else(|| ApiError::from(Error::not_found("description", &id)))?;
    Ok((
        StatusCode::OK,
        Json(json!({
            "description": d,
            "text": d.text(),
            "assignment": p.active_assignment(&id),
            "grounding": p.groundings.get(&id),
        })),
    ))
}

#[derive(Deserialize, Default)]
struct RoundParams {
    tau: Option<f64>,
    lambda: Option<f64>,
    k: Option<usize>,
    seed: Option<u64>,
}

/// Runs a round operation under the round lock.
fn round_op<F>(state: &AppState, headers: &HeaderMap, f: F) -> ApiResult
where
    F: FnOnce(&Project, &str) -> normlens::Result<(Outcome, Value)>,
{
    let lock = state.round_lock();
    let _guard = lock.try_lock().map_err(|_| round_busy())?;
    mutate(state, headers, StatusCode::OK, f)
}

async fn next_round(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let req: RoundParams = parse_body(&body)?;
    let mut config = state.shared.config.discovery();
    config.k = req.k.or(config.k);
    config.seed = req.seed.unwrap_or(config.seed);
    round_op(&state, &headers, |p, _| {
        let outcome = commands::cluster(p, &config)?;
        let clusters = outcome
            .events
            .iter()
            .map(|e| match e {
                normlens::Event::ClustersComputed { round, clusters, .. } => json!({"round": round, "clusters": clusters.len()}),
                _ => Value::Null,
            })
            .next()
            .unwrap_or(Value::Null);
        Ok((outcome, json!({ "computed": clusters })))
    })
}

fn assignment_counts(outcome: &Outcome) -> Value {
    let (mut assigned, mut unassigned) = (0, 0);
    for e in &outcome.events {
        if let normlens::Event::AssignmentsUpdated { assign, unassign, .. } = e {
            assigned += assign.len();
            unassigned += unassign.len();
        }
    }
    json!({ "assigned": assigned, "unassigned": unassigned })
}

async fn augment(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let req: RoundParams = parse_body(&body)?;
    let tau = req.tau.unwrap_or(state.shared.config.tau);
    round_op(&state, &headers, |p, _| {
        let outcome = commands::augment(p, tau)?;
        let body = assignment_counts(&outcome);
        Ok((outcome, body))
    })
}

async fn reassign(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let req: RoundParams = parse_body(&body)?;
    let tau = req.tau.unwrap_or(state.shared.config.tau);
    let lambda = req.lambda.unwrap_or(state.shared.config.lambda);
    round_op(&state, &headers, |p, _| {
        let outcome = commands::reassign(p, tau, lambda)?;
        let body = assignment_counts(&outcome);
        Ok((outcome, body))
    })
}

async fn progress(State(state): State<AppState>) -> ApiResult {
    let p = state.project();
    Ok((
        StatusCode::OK,
        Json(json!({
            "version": p.version,
            "round": p.round,
            "coverage": coverage_stats(&p),
            "clusters": p.clusters.len(),
            "marks_pending": p.marks_pending,
        })),
    ))
}

#[derive(Deserialize)]
struct JudgmentIn {
    target_id: String,
    aspect: Aspect,
    verdict: YesNo,
    #[serde(default)]
    likert: Option<u8>,
}

#[derive(Deserialize)]
struct JudgmentsIn {
    judgments: Vec<JudgmentIn>,
}

async fn judgments(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let req: JudgmentsIn = parse_body(&body)?;
    mutate(&state, &headers, StatusCode::OK, |p, who| {
        let js = req
            .judgments
            .into_iter()
            .map(|j| HumanJudgment {
                target_id: j.target_id,
                annotator_id: who.to_owned(),
                aspect: j.aspect,
                verdict: j.verdict,
                likert: j.likert,
            })
            .collect();
        let outcome = commands::record_judgments(p, js)?;
        let n = outcome.events.len();
        Ok((outcome, json!({ "recorded": n })))
    })
}

#[derive(Deserialize)]
struct VerifyIn {
    aspect: Aspect,
    mode: String,
    #[serde(default)]
    threshold: Option<f64>,
}

async fn verify(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let req: VerifyIn = parse_body(&body)?;
    annotator(&state, &headers)?;
    let rid = request_id(&headers);
    if let Some(reply) = cached(&state, &rid) {
        return Ok(reply);
    }
    let workflow = match req.mode.as_str() {
        "self" => Workflow::SelfCheck,
        "agents" | "multiagent" => Workflow::MultiAgent,
        other => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalid_argument",
                format!("mode '{other}' is not self or agents"),
            ))
        }
    };
    let provider = state.shared.provider.clone().ok_or_else(|| {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no_provider", "server was started without a provider")
    })?;
    let lock = state.round_lock();
    let guard = lock.try_lock_owned().map_err(|_| round_busy())?;
    let expected = expected_version(&headers)?;
    let project = state.project();
    if let Some(v) = expected.filter(|v| *v != project.version) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "conflict",
            format!("project is at version {}, request expected {v}", project.version),
        ));
    }
    let mut config = state.shared.config.batch();
    if let Some(t) = req.threshold {
        config.threshold = t;
    }
    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        commands::verify(&project, req.aspect, workflow, provider.as_ref(), &config, &mut |events| {
            worker.store().append_all(events).map(|_| ())
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let (outcome, summary) = result?;
    let body = json!({
        "retained": summary.retained,
        "discarded": summary.discarded,
        "failed": summary.failed,
        "warnings": outcome.warnings,
        "version": state.version(),
    });
    remember(&state, rid, StatusCode::OK, &body);
    Ok((StatusCode::OK, Json(body)))
}

async fn report(State(state): State<AppState>, Path(kind): Path<String>) -> ApiResult {
    let p = state.project();
    let body = match kind.as_str() {
        "quality" => json!({ "rows": metrics::quality_report(&p) }),
        "agreement" => {
            let mut map = serde_json::Map::new();
            for (aspect, r) in metrics::agreement_report(&p) {
                let v = match r {
                    Ok(r) => json!(r),
                    Err(e) => json!({ "error": e }),
                };
                map.insert(aspect.as_str().to_owned(), v);
            }
            let likert = match metrics::likert_mean(&p.judgments) {
                Ok(r) => json!(r),
                Err(e) => json!({ "error": e.to_string() }),
            };
            json!({ "alpha": map, "likert": likert })
        }
        "distribution" => json!(metrics::concept_field_distribution(&p)),
        other => return Err(ApiError::from(Error::not_found("report", other))),
    };
    Ok((StatusCode::OK, Json(body)))
}
