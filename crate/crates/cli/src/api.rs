//! HTTP+JSON service over a loaded model and dataset.
//!
//! | endpoint | body | success |
//! |---|---|---|
//! | `GET /health` | | model status |
//! | `GET /sessions?limit=` | | session ids and compositions |
//! | `POST /sequence` | [`SequenceRequest`] | [`SequenceResponse`] |
//! | `POST /sweep` | [`SweepRequest`] | [`SweepResponse`] |
//!
//! Errors are `{"error": kind, "message": ..., "field": ...}` with status 400
//! (malformed JSON), 404 (unknown session), 422 (invalid field) or 503 (no
//! model loaded).

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};

use setseq::checkpoint::model_hash;
use setseq::data::{Objective, ObjectiveSet, Session};
use setseq::decoder::{jmo_beam_search, jmo_beam_search_traced, setrank_sort, DecodeConfig, StepDiagnostic, StepTrace};
use setseq::eval::{epsilon_sweep, evaluate, session_record, MeanGoodAll, PerTarget, Ranker};
use setseq::metrics::GoodAll;
use setseq::model::Model;

pub const DEFAULT_SESSION_LIMIT: usize = 50;
pub const MAX_SWEEP_SESSIONS: usize = 2000;

/// Immutable state shared by every request.
pub struct AppState {
    model: Option<Model>,
    model_hash: Option<String>,
    sessions: Vec<Session>,
    index: HashMap<String, usize>,
    defaults: DecodeConfig,
}

impl AppState {
    pub fn new(model: Option<Model>, sessions: Vec<Session>, defaults: DecodeConfig) -> setseq::Result<Self> {
        defaults.validate()?;
        let model_hash = model.as_ref().map(model_hash).transpose()?;
        let index = sessions
            .iter()
            .enumerate()
            .map(|(i, s)| (s.session_id.clone(), i))
            .collect();
        Ok(AppState {
            model,
            model_hash,
            sessions,
            index,
            defaults,
        })
    }

    pub fn defaults(&self) -> &DecodeConfig {
        &self.defaults
    }

    pub fn model_hash(&self) -> Option<&str> {
        self.model_hash.as_deref()
    }

    fn session(&self, id: &str) -> Result<&Session, ApiError> {
        self.index
            .get(id)
            .map(|&i| &self.sessions[i])
            .ok_or_else(|| ApiError::not_found(format!("unknown session {:?}", id)))
    }

    fn model(&self) -> Result<(&Model, &str), ApiError> {
        match (&self.model, &self.model_hash) {
            (Some(m), Some(h)) => Ok((m, h)),
            _ => Err(ApiError {
                status: StatusCode::SERVICE_UNAVAILABLE,
                body: ErrorBody {
                    error: "unavailable".into(),
                    message: "no model is loaded".into(),
                    field: None,
                },
            }),
        }
    }

    fn decode_config(
        &self,
        epsilon: Option<f64>,
        beam_width: Option<usize>,
        enabled: Option<ObjectiveSet>,
    ) -> Result<DecodeConfig, ApiError> {
        let cfg = DecodeConfig {
            epsilon: epsilon.unwrap_or(self.defaults.epsilon),
            beam_width: beam_width.unwrap_or(self.defaults.beam_width),
            enabled: enabled.unwrap_or(self.defaults.enabled),
        };
        check_epsilon("epsilon", cfg.epsilon)?;
        if cfg.beam_width < 1 {
            return Err(ApiError::invalid("beam_width", "beam_width must be at least 1"));
        }
        Ok(cfg)
    }
}

fn check_epsilon(field: &str, eps: f64) -> Result<(), ApiError> {
    if (0.0..=1.0).contains(&eps) {
        Ok(())
    } else {
        Err(ApiError::invalid(
            field,
            format!("epsilon must lie in [0, 1], got {}", eps),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>, field: Option<&str>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: kind.into(),
                message: message.into(),
                field: field.map(Into::into),
            },
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message, None)
    }

    fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message, Some(field))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message, None)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, &self.body)
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_vec(body) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub epsilon: f64,
    pub beam_width: usize,
    pub enabled_objectives: ObjectiveSet,
}

impl From<&DecodeConfig> for ConfigEcho {
    fn from(c: &DecodeConfig) -> Self {
        ConfigEcho {
            epsilon: c.epsilon,
            beam_width: c.beam_width,
            enabled_objectives: c.enabled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub boost: usize,
    pub exposure: usize,
    pub discovery: usize,
}

impl Composition {
    fn of(s: &Session) -> Self {
        Composition {
            boost: s.objectives.column_count(Objective::Boost),
            exposure: s.objectives.column_count(Objective::Exposure),
            discovery: s.objectives.column_count(Objective::Discovery),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub user_id: String,
    pub tracks: usize,
    pub streamed: usize,
    pub composition: Composition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionsResponse {
    pub model_hash: Option<String>,
    pub total: usize,
    pub limit: usize,
    pub sessions: Vec<SessionSummary>,
}

#[derive(Debug, Deserialize)]
pub struct SessionsQuery {
    pub limit: Option<usize>,
}

pub fn list_sessions(state: &AppState, limit: Option<usize>) -> SessionsResponse {
    let limit = limit.unwrap_or(DEFAULT_SESSION_LIMIT);
    SessionsResponse {
        model_hash: state.model_hash.clone(),
        total: state.sessions.len(),
        limit,
        sessions: state
            .sessions
            .iter()
            .take(limit)
            .map(|s| SessionSummary {
                session_id: s.session_id.clone(),
                user_id: s.user.id.clone(),
                tracks: s.len(),
                streamed: s.sat.iter().filter(|&&v| v == 1).count(),
                composition: Composition::of(s),
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceRequest {
    pub session_id: String,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub beam_width: Option<usize>,
    #[serde(default)]
    pub enabled_objectives: Option<ObjectiveSet>,
    #[serde(default)]
    pub explain: bool,
}

/// Metrics of one ranked session against its logged outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub ndcg5: PerTarget,
    pub ndcg10: PerTarget,
    pub map5: PerTarget,
    pub good_all: [GoodAll; 3],
}

fn metrics_of(session: &Session, order: &[usize]) -> SessionMetrics {
    let r = session_record(session, order);
    SessionMetrics {
        ndcg5: r.ndcg5,
        ndcg10: r.ndcg10,
        map5: r.map5,
        good_all: r.good_all,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceResponse {
    pub model_hash: String,
    pub config: ConfigEcho,
    pub session_id: String,
    /// Track ids in ranked order.
    pub ranking: Vec<String>,
    /// 0-based input indices in ranked order.
    pub order: Vec<usize>,
    pub score: Option<f64>,
    pub relevance: Vec<f64>,
    pub steps: Vec<StepDiagnostic>,
    pub metrics: SessionMetrics,
    /// The same metrics for the plain relevance sort of the model scores.
    pub setrank_metrics: SessionMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<StepTrace>>,
}

pub fn sequence(state: &AppState, req: &SequenceRequest) -> Result<SequenceResponse, ApiError> {
    let cfg = state.decode_config(req.epsilon, req.beam_width, req.enabled_objectives)?;
    let session = state.session(&req.session_id)?;
    let (model, hash) = state.model()?;
    let r = model.score_session(session).map_err(ApiError::internal)?.0;
    let (ranked, trace) = if req.explain {
        let (ranked, trace) = jmo_beam_search_traced(&r, &session.objectives, &cfg).map_err(ApiError::internal)?;
        (ranked, Some(trace))
    } else {
        (
            jmo_beam_search(&r, &session.objectives, &cfg).map_err(ApiError::internal)?,
            None,
        )
    };
    Ok(SequenceResponse {
        model_hash: hash.to_string(),
        config: ConfigEcho::from(&cfg),
        session_id: session.session_id.clone(),
        ranking: ranked.order.iter().map(|&i| session.tracks[i].id.clone()).collect(),
        metrics: metrics_of(session, &ranked.order),
        setrank_metrics: metrics_of(session, &setrank_sort(&r).order),
        order: ranked.order,
        score: ranked.score,
        relevance: r,
        steps: ranked.steps,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub session_ids: Vec<String>,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub beam_width: Option<usize>,
    #[serde(default)]
    pub enabled_objectives: Option<ObjectiveSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEcho {
    pub epsilons: Vec<f64>,
    pub beam_width: usize,
    pub enabled_objectives: ObjectiveSet,
    pub sessions: usize,
}

/// Session-averaged metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub ndcg5: PerTarget,
    pub ndcg10: PerTarget,
    pub map5: PerTarget,
    pub good_all: [MeanGoodAll; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPointOut {
    pub epsilon: f64,
    #[serde(flatten)]
    pub metrics: MetricSummary,
    pub mean_candidates: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResponse {
    pub model_hash: String,
    pub config: SweepEcho,
    pub session_ids: Vec<String>,
    pub points: Vec<SweepPointOut>,
    pub setrank: MetricSummary,
}

pub fn sweep(state: &AppState, req: &SweepRequest) -> Result<SweepResponse, ApiError> {
    if req.epsilons.is_empty() {
        return Err(ApiError::invalid("epsilons", "at least one epsilon is required"));
    }
    for &e in &req.epsilons {
        check_epsilon("epsilons", e)?;
    }
    if req.epsilons.windows(2).any(|w| w[0] > w[1]) {
        return Err(ApiError::invalid("epsilons", "epsilons must be sorted ascending"));
    }
    if req.session_ids.is_empty() || req.session_ids.len() > MAX_SWEEP_SESSIONS {
        return Err(ApiError::invalid(
            "session_ids",
            format!("between 1 and {} session ids are required", MAX_SWEEP_SESSIONS),
        ));
    }
    let cfg = state.decode_config(Some(req.epsilons[0]), req.beam_width, req.enabled_objectives)?;
    let sessions: Vec<Session> = req
        .session_ids
        .iter()
        .map(|id| state.session(id).cloned())
        .collect::<Result<_, _>>()?;
    let (model, hash) = state.model()?;
    let scores = setseq::eval::score_sessions(model, &sessions).map_err(ApiError::internal)?;
    let report =
        epsilon_sweep(&sessions, &scores, &req.epsilons, cfg.beam_width, cfg.enabled).map_err(ApiError::internal)?;
    let base = evaluate("setrank", &Ranker::Sort, &sessions, Some(&scores)).map_err(ApiError::internal)?;
    Ok(SweepResponse {
        model_hash: hash.to_string(),
        config: SweepEcho {
            epsilons: req.epsilons.clone(),
            beam_width: cfg.beam_width,
            enabled_objectives: cfg.enabled,
            sessions: sessions.len(),
        },
        session_ids: req.session_ids.clone(),
        points: report
            .points
            .into_iter()
            .map(|p| SweepPointOut {
                epsilon: p.epsilon,
                metrics: MetricSummary {
                    ndcg5: p.report.ndcg5,
                    ndcg10: p.report.ndcg10,
                    map5: p.report.map5,
                    good_all: p.report.good_all,
                },
                mean_candidates: p.mean_candidates,
            })
            .collect(),
        setrank: MetricSummary {
            ndcg5: base.ndcg5,
            ndcg10: base.ndcg10,
            map5: base.map5,
            good_all: base.good_all,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_loaded: bool,
    pub model_hash: Option<String>,
    pub sessions: usize,
    pub defaults: ConfigEcho,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {}", e)))
}

async fn run_blocking<T, F>(state: Arc<AppState>, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&state)).await {
        Ok(Ok(body)) => json_response(StatusCode::OK, &body),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::internal(e).into_response(),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    json_response(
        StatusCode::OK,
        &HealthResponse {
            status: "ok".into(),
            model_loaded: state.model.is_some(),
            model_hash: state.model_hash.clone(),
            sessions: state.sessions.len(),
            defaults: ConfigEcho::from(&state.defaults),
        },
    )
}

async fn sessions_handler(State(state): State<Arc<AppState>>, Query(q): Query<SessionsQuery>) -> Response {
    json_response(StatusCode::OK, &list_sessions(&state, q.limit))
}

async fn sequence_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: SequenceRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    tracing::debug!(session = %req.session_id, "sequence");
    run_blocking(state, move |s| sequence(s, &req)).await
}

async fn sweep_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: SweepRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    tracing::debug!(sessions = req.session_ids.len(), points = req.epsilons.len(), "sweep");
    run_blocking(state, move |s| sweep(s, &req)).await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", get(sessions_handler))
        .route("/sequence", post(sequence_handler))
        .route("/sweep", post(sweep_handler))
        .with_state(state)
}
