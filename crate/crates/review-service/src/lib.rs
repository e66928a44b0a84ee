//! HTTP backend for the human review queue.
//!
//! Ratings are appended to a line-delimited log before they are
//! acknowledged; a restarted service replays the log and ends up in the same
//! state.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lgsa_core::adjudication::{
    calibrate, compute_agreement, latest_records, read_annotations, read_review_items,
    AdjudicationError, AgreementStats, AnnotationRecord, CalibrationDecision, LabelFidelity,
    ReviewItem, DEFAULT_TOLERANCE,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ADDR_ENV: &str = "REVIEW_ADDR";
pub const TOKEN_ENV: &str = "REVIEW_TOKEN";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("invalid rating: {0}")]
    InvalidRating(String),
    #[error("{0}")]
    Conflict(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Adjudication(#[from] AdjudicationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::UnknownItem(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidRating(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Adjudication(AdjudicationError::NotEnoughRaters | AdjudicationError::NoRecords) => {
                StatusCode::CONFLICT
            }
            ServiceError::Adjudication(AdjudicationError::BadTolerance(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{self}");
        }
        let mut resp = (status, Json(ErrorBody { error: self.to_string() })).into_response();
        if status == StatusCode::UNAUTHORIZED {
            resp.headers_mut()
                .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
        }
        resp
    }
}

/// Queue, ratings and the open append log.
struct Session {
    queue: Vec<ReviewItem>,
    index: HashMap<String, usize>,
    /// Every accepted record in arrival order; what the log holds.
    records: Vec<AnnotationRecord>,
    /// Latest record per (item, rater).
    latest: BTreeMap<(String, String), AnnotationRecord>,
    log: BufWriter<File>,
    last_timestamp: u64,
}

impl Session {
    fn apply(&mut self, r: AnnotationRecord) {
        self.last_timestamp = self.last_timestamp.max(r.timestamp);
        self.latest
            .insert((r.item_id.clone(), r.rater_id.clone()), r.clone());
        self.records.push(r);
    }

    fn rated_by(&self, rater: &str) -> usize {
        self.latest.keys().filter(|(_, r)| r == rater).count()
    }

    fn progress(&self, rater: &str) -> Progress {
        Progress {
            rated: self.rated_by(rater),
            total: self.queue.len(),
        }
    }

    fn partitions(&self) -> BTreeMap<String, String> {
        self.queue
            .iter()
            .map(|i| (i.candidate_id.clone(), i.partition_id.clone()))
            .collect()
    }
}

/// Shared handle to the service state.
#[derive(Clone)]
pub struct AppState {
    session: Arc<Mutex<Session>>,
    token: Arc<String>,
    default_tolerance: f64,
}

impl AppState {
    /// Load the queue and replay `log_path` if it exists. Later ratings are
    /// appended to the same file.
    pub fn open(queue_path: &Path, log_path: &Path, token: String) -> Result<Self, ServiceError> {
        Self::with_queue(read_review_items(queue_path)?, log_path, token)
    }

    pub fn with_queue(queue: Vec<ReviewItem>, log_path: &Path, token: String) -> Result<Self, ServiceError> {
        if token.is_empty() {
            return Err(ServiceError::Config(format!("{TOKEN_ENV} must not be empty")));
        }
        let mut index = HashMap::new();
        for (i, item) in queue.iter().enumerate() {
            if index.insert(item.candidate_id.clone(), i).is_some() {
                return Err(ServiceError::Config(format!(
                    "duplicate item `{}` in queue",
                    item.candidate_id
                )));
            }
        }
        let replayed = if log_path.exists() {
            read_annotations(log_path)?
        } else {
            Vec::new()
        };
        if let Some(parent) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let log = BufWriter::new(OpenOptions::new().create(true).append(true).open(log_path)?);
        let mut session = Session {
            queue,
            index,
            records: Vec::new(),
            latest: BTreeMap::new(),
            log,
            last_timestamp: 0,
        };
        for r in replayed {
            if !session.index.contains_key(&r.item_id) {
                return Err(ServiceError::Config(format!(
                    "{} rates `{}`, which is not in the queue",
                    log_path.display(),
                    r.item_id
                )));
            }
            session.apply(r);
        }
        Ok(AppState {
            session: Arc::new(Mutex::new(session)),
            token: Arc::new(token),
            default_tolerance: DEFAULT_TOLERANCE,
        })
    }

    pub fn with_default_tolerance(mut self, tolerance: f64) -> Self {
        self.default_tolerance = tolerance;
        self
    }

    fn lock(&self) -> MutexGuard<'_, Session> {
        // a panicking handler cannot leave a half-applied record: apply()
        // runs only after the log write succeeded
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Every record received so far, in arrival order.
    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.lock().records.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub rated: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    /// `None` once the rater has rated every item.
    pub item: Option<ReviewItem>,
    pub done: bool,
    pub progress: Progress,
}

#[derive(Debug, Deserialize)]
pub struct RaterQuery {
    pub rater: String,
}

/// Rating body. The item id comes from the path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingBody {
    pub rater_id: String,
    pub label_fidelity: LabelFidelity,
    /// Wide type so out-of-range values reach validation instead of failing
    /// to parse.
    pub fluency: i64,
    pub stereotype_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingAck {
    pub record: AnnotationRecord,
    pub progress: Progress,
    /// Distinct (item, rater) pairs rated so far.
    pub total_ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub total_items: usize,
    pub raters: BTreeMap<String, usize>,
    pub records: usize,
}

#[derive(Debug, Deserialize)]
pub struct ToleranceQuery {
    pub tolerance: Option<f64>,
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let ok = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == state.token.as_str());
    if ok {
        next.run(req).await
    } else {
        ServiceError::Unauthorized.into_response()
    }
}

async fn next_item(State(state): State<AppState>, Query(q): Query<RaterQuery>) -> Result<Json<NextResponse>, ServiceError> {
    if q.rater.trim().is_empty() {
        return Err(ServiceError::InvalidRating("rater id must not be empty".into()));
    }
    let s = state.lock();
    let item = s
        .queue
        .iter()
        .find(|i| !s.latest.contains_key(&(i.candidate_id.clone(), q.rater.clone())))
        .cloned();
    Ok(Json(NextResponse {
        done: item.is_none(),
        item,
        progress: s.progress(&q.rater),
    }))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn rate(
    State(state): State<AppState>,
    UrlPath(item): UrlPath<String>,
    Json(body): Json<RatingBody>,
) -> Result<Json<RatingAck>, ServiceError> {
    let mut s = state.lock();
    if !s.index.contains_key(&item) {
        return Err(ServiceError::UnknownItem(item));
    }
    let fluency = u8::try_from(body.fluency)
        .ok()
        .filter(|f| (1..=5).contains(f))
        .ok_or_else(|| ServiceError::InvalidRating(format!("fluency {} outside 1..=5", body.fluency)))?;
    // non-decreasing, so arrival order decides ties under last-write-wins
    let timestamp = now_ms().max(s.last_timestamp);
    let record = AnnotationRecord {
        item_id: item,
        rater_id: body.rater_id,
        label_fidelity: body.label_fidelity,
        fluency,
        stereotype_flag: body.stereotype_flag,
        timestamp,
    };
    record
        .validate()
        .map_err(|e| ServiceError::InvalidRating(e.to_string()))?;
    let line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
    writeln!(s.log, "{line}")?;
    s.log.flush()?;
    s.apply(record.clone());
    Ok(Json(RatingAck {
        progress: s.progress(&record.rater_id),
        total_ratings: s.latest.len(),
        record,
    }))
}

async fn agreement(State(state): State<AppState>) -> Result<Json<AgreementStats>, ServiceError> {
    let s = state.lock();
    Ok(Json(compute_agreement(&s.records)?))
}

async fn calibration(
    State(state): State<AppState>,
    Query(q): Query<ToleranceQuery>,
) -> Result<Json<CalibrationDecision>, ServiceError> {
    let s = state.lock();
    let tolerance = q.tolerance.unwrap_or(state.default_tolerance);
    Ok(Json(calibrate(&s.records, tolerance, &s.partitions())?))
}

async fn export(State(state): State<AppState>) -> Result<Response, ServiceError> {
    let s = state.lock();
    let mut body = String::new();
    for r in &s.records {
        body.push_str(&serde_json::to_string(r).map_err(std::io::Error::other)?);
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn status(State(state): State<AppState>) -> Json<StatusResponse> {
    let s = state.lock();
    let mut raters = BTreeMap::new();
    for r in latest_records(&s.records) {
        *raters.entry(r.rater_id).or_insert(0) += 1;
    }
    Json(StatusResponse {
        total_items: s.queue.len(),
        raters,
        records: s.records.len(),
    })
}

/// All endpoints behind bearer-token auth.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/review/next", get(next_item))
        .route("/review/{item}/rating", post(rate))
        .route("/review/agreement", get(agreement))
        .route("/review/calibration", get(calibration))
        .route("/review/export", get(export))
        .route("/review/status", get(status))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Listen address from `REVIEW_ADDR`, or the default.
pub fn addr_from_env() -> Result<SocketAddr, ServiceError> {
    let raw = std::env::var(ADDR_ENV).unwrap_or_else(|_| DEFAULT_ADDR.to_string());
    raw.parse()
        .map_err(|e| ServiceError::Config(format!("{ADDR_ENV}={raw}: {e}")))
}

/// Token from `REVIEW_TOKEN`; required.
pub fn token_from_env() -> Result<String, ServiceError> {
    std::env::var(TOKEN_ENV)
        .ok()
        .filter(|t| !t.is_empty())
        .ok_or_else(|| ServiceError::Config(format!("{TOKEN_ENV} is not set")))
}

/// Serve until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: AppState) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Paths the service reads and writes inside a run directory.
pub fn default_paths(run_dir: &Path) -> (PathBuf, PathBuf) {
    (
        run_dir.join("review/queue.jsonl"),
        run_dir.join("review/annotations.jsonl"),
    )
}
