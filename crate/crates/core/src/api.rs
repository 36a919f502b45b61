//! HTTP/JSON service over a loaded project, network and dataset.
//!
//! The network is never trained or modified here. Annotation edits go through
//! the project's single-writer commit path; reads work on a snapshot of the
//! revision that was active when the request started.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, PathRejection};
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::embedding::TextEncoder;
use crate::error::{Diagnostic, Error, ErrorKind, Result};
use crate::net::MatchingNetwork;
use crate::report::{evaluate_corrected, evaluate_standalone, load_baseline, CorrectionReport, EvaluationReport};
use crate::scoring::{score_videos, AnnotationSet, ClassScoreBreakdown};
use crate::store::{ClassDiff, Project, RevisionSummary};

/// Memoises another encoder by exact text.
pub struct CachedEncoder {
    inner: Box<dyn TextEncoder>,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl CachedEncoder {
    pub fn new(inner: Box<dyn TextEncoder>) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Drops every entry whose text is not in `keep`.
    pub fn retain_texts(&self, keep: &AnnotationSet) {
        let texts = keep.feature_texts();
        self.cache
            .lock()
            .expect("cache lock")
            .retain(|t, _| texts.contains(t.as_str()));
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TextEncoder for CachedEncoder {
    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(text) {
            return Ok(v.clone());
        }
        let v = self.inner.encode(text)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(text.to_string(), v.clone());
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub class_label: String,
    pub features: usize,
    pub videos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassesResponse {
    pub revision: u64,
    pub classes: Vec<ClassInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationsResponse {
    pub revision: u64,
    pub annotations: AnnotationSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRequest {
    pub annotations: AnnotationSet,
    #[serde(default)]
    pub note: String,
    /// Reject with 409 unless this is still the active revision.
    #[serde(default)]
    pub base_revision: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitResponse {
    pub revision: u64,
    pub parent: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub video_id: String,
    #[serde(default)]
    pub class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub revision: u64,
    pub video_id: String,
    pub truth: Option<String>,
    pub scores: Vec<ClassScoreBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvaluateRequest {
    /// Omitted means every labelled video.
    #[serde(default)]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectRequest {
    /// Defaults to the project's configured lambda.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Baseline scores file, relative to the project root.
    pub baseline_ref: String,
    #[serde(default)]
    pub softmax: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionsResponse {
    pub revision: u64,
    pub revisions: Vec<RevisionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffResponse {
    pub revision: u64,
    pub from: u64,
    pub to: u64,
    pub classes: Vec<ClassDiff>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorResponse {
    pub revision: u64,
    pub error: ErrorBody,
}

pub fn status_for(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::Validation => StatusCode::BAD_REQUEST,
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Conflict => StatusCode::CONFLICT,
        ErrorKind::Io | ErrorKind::Contract => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

/// Everything a request handler needs.
pub struct Workbench {
    project: RwLock<Project>,
    net: MatchingNetwork,
    dataset: Dataset,
    encoder: CachedEncoder,
}

impl Workbench {
    pub fn new(project: Project, net: MatchingNetwork, dataset: Dataset, encoder: Box<dyn TextEncoder>) -> Self {
        Self {
            project: RwLock::new(project),
            net,
            dataset,
            encoder: CachedEncoder::new(encoder),
        }
    }

    /// Loads the project at `root` with the dataset, checkpoint and embedding
    /// source named in its manifest.
    pub fn open(root: &Path) -> Result<Self> {
        let project = Project::open(root)?;
        let missing = |what: &str| Error::InvalidConfig(format!("project has no {what} configured"));
        let dataset = Dataset::load(&project.dataset_path().ok_or_else(|| missing("dataset"))?, None)?;
        let net = MatchingNetwork::load_checkpoint(&project.checkpoint_path().ok_or_else(|| missing("checkpoint"))?)?;
        let encoder = Box::new(project.encoder()?);
        Ok(Self::new(project, net, dataset, encoder))
    }

    fn snapshot(&self) -> (u64, AnnotationSet) {
        let p = self.project.read().expect("project lock");
        (p.active_revision(), p.active().annotations.clone())
    }

    pub fn active_revision(&self) -> u64 {
        self.project.read().expect("project lock").active_revision()
    }

    pub fn network(&self) -> &MatchingNetwork {
        &self.net
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn cached_texts(&self) -> usize {
        self.encoder.len()
    }

    pub fn classes(&self) -> ClassesResponse {
        let (revision, ann) = self.snapshot();
        let mut classes: BTreeMap<&str, ClassInfo> = BTreeMap::new();
        let blank = |label: &str| ClassInfo {
            class_label: label.to_string(),
            features: 0,
            videos: 0,
        };
        for label in self.dataset.features().iter().filter_map(|v| v.class_label.as_deref()) {
            classes.entry(label).or_insert_with(|| blank(label)).videos += 1;
        }
        for (label, features) in &ann.classes {
            classes.entry(label).or_insert_with(|| blank(label)).features = features.len();
        }
        ClassesResponse {
            revision,
            classes: classes.into_values().collect(),
        }
    }

    pub fn annotations(&self) -> AnnotationsResponse {
        let (revision, annotations) = self.snapshot();
        AnnotationsResponse { revision, annotations }
    }

    pub fn commit(&self, req: CommitRequest) -> Result<CommitResponse> {
        req.annotations.validate()?;
        // Refuse texts that cannot be embedded before they reach the history.
        for text in req.annotations.feature_texts() {
            self.encoder.encode(text)?;
        }
        let mut project = self.project.write().expect("project lock");
        let parent = project.active_revision();
        let revision = project.commit_based_on(req.annotations, &req.note, req.base_revision)?;
        self.encoder.retain_texts(&project.active().annotations);
        Ok(CommitResponse { revision, parent })
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse> {
        let (revision, mut ann) = self.snapshot();
        let video = self
            .dataset
            .get(&req.video_id)
            .ok_or_else(|| Error::UnknownVideo(req.video_id.clone()))?;
        if let Some(class) = &req.class {
            let features = ann
                .classes
                .remove(class)
                .ok_or_else(|| Error::UnknownClass(class.clone()))?;
            ann.classes = BTreeMap::from([(class.clone(), features)]);
        }
        if ann.classes.is_empty() {
            return Err(Error::NoFeatures("<any>".into()));
        }
        let mode = self.project.read().expect("project lock").config().mode;
        let scores = score_videos(&self.net, &[video], &ann, &self.encoder, mode)?.remove(0);
        Ok(ScoreResponse {
            revision,
            video_id: video.video_id.clone(),
            truth: video.class_label.clone(),
            scores,
        })
    }

    pub fn evaluate(&self, req: &EvaluateRequest) -> Result<EvaluationReport> {
        let (revision, ann) = self.snapshot();
        let cfg = self.project.read().expect("project lock").config().clone();
        evaluate_standalone(
            &self.net,
            &self.dataset,
            req.split,
            &ann,
            &self.encoder,
            cfg.mode,
            revision,
            cfg.top_k,
        )
    }

    pub fn correct(&self, req: &CorrectRequest) -> Result<CorrectionReport> {
        let (revision, ann) = self.snapshot();
        let (cfg, path) = {
            let p = self.project.read().expect("project lock");
            (p.config().clone(), p.resolve(Path::new(&req.baseline_ref)))
        };
        if !path.is_file() {
            return Err(Error::InvalidValue(format!(
                "baseline_ref {:?} is not a file in the project",
                req.baseline_ref
            )));
        }
        let baseline = load_baseline(&path)?;
        evaluate_corrected(
            &self.net,
            &self.dataset,
            &ann,
            &self.encoder,
            cfg.mode,
            &baseline,
            req.lambda.unwrap_or(cfg.lambda),
            req.softmax.unwrap_or(cfg.softmax_baseline),
            revision,
        )
    }

    pub fn revisions(&self) -> RevisionsResponse {
        let p = self.project.read().expect("project lock");
        RevisionsResponse {
            revision: p.active_revision(),
            revisions: p.summaries(),
        }
    }

    pub fn diff(&self, from: u64, to: u64) -> Result<DiffResponse> {
        let p = self.project.read().expect("project lock");
        Ok(DiffResponse {
            revision: p.active_revision(),
            from,
            to,
            classes: p.diff(from, to)?,
        })
    }

    pub fn error_response(&self, err: &Error) -> Response {
        let diagnostics = match err {
            Error::ValidationFailed(d) => d.clone(),
            _ => Vec::new(),
        };
        let body = ErrorResponse {
            revision: self.active_revision(),
            error: ErrorBody {
                kind: err.kind(),
                message: err.to_string(),
                diagnostics,
            },
        };
        (status_for(err.kind()), Json(body)).into_response()
    }

    fn bad_request(&self, message: String) -> Response {
        self.error_response(&Error::InvalidValue(message))
    }
}

type Shared = Arc<Workbench>;

/// Runs `f` off the async executor and turns its result into a response.
async fn blocking<T, F>(wb: Shared, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Workbench) -> Result<T> + Send + 'static,
{
    let worker = wb.clone();
    match tokio::task::spawn_blocking(move || f(&worker)).await {
        Ok(Ok(value)) => (StatusCode::OK, Json(value)).into_response(),
        Ok(Err(e)) => wb.error_response(&e),
        Err(join) => wb.error_response(&Error::InvalidConfig(format!("request handler failed: {join}"))),
    }
}

async fn get_classes(State(wb): State<Shared>) -> Response {
    Json(wb.classes()).into_response()
}

async fn get_annotations(State(wb): State<Shared>) -> Response {
    Json(wb.annotations()).into_response()
}

async fn put_annotations(State(wb): State<Shared>, body: Result<Json<CommitRequest>, JsonRejection>) -> Response {
    match body {
        Ok(Json(req)) => blocking(wb, move |w| w.commit(req)).await,
        Err(e) => wb.bad_request(e.body_text()),
    }
}

async fn post_score(State(wb): State<Shared>, body: Result<Json<ScoreRequest>, JsonRejection>) -> Response {
    match body {
        Ok(Json(req)) => blocking(wb, move |w| w.score(&req)).await,
        Err(e) => wb.bad_request(e.body_text()),
    }
}

async fn post_evaluate(State(wb): State<Shared>, body: Result<Json<EvaluateRequest>, JsonRejection>) -> Response {
    match body {
        Ok(Json(req)) => blocking(wb, move |w| w.evaluate(&req)).await,
        Err(e) => wb.bad_request(e.body_text()),
    }
}

async fn post_correct(State(wb): State<Shared>, body: Result<Json<CorrectRequest>, JsonRejection>) -> Response {
    match body {
        Ok(Json(req)) => blocking(wb, move |w| w.correct(&req)).await,
        Err(e) => wb.bad_request(e.body_text()),
    }
}

async fn get_revisions(State(wb): State<Shared>) -> Response {
    Json(wb.revisions()).into_response()
}

async fn get_diff(State(wb): State<Shared>, ids: Result<UrlPath<(u64, u64)>, PathRejection>) -> Response {
    match ids {
        Ok(UrlPath((a, b))) => blocking(wb, move |w| w.diff(a, b)).await,
        Err(e) => wb.bad_request(e.body_text()),
    }
}

pub fn router(wb: Shared) -> Router {
    let fallback_wb = wb.clone();
    Router::new()
        .route("/v1/classes", get(get_classes))
        .route("/v1/annotations", get(get_annotations).put(put_annotations))
        .route("/v1/score", post(post_score))
        .route("/v1/evaluate", post(post_evaluate))
        .route("/v1/correct", post(post_correct))
        .route("/v1/revisions", get(get_revisions))
        .route("/v1/revisions/{id}/diff/{other}", get(get_diff))
        .fallback(move || async move {
            let body = ErrorResponse {
                revision: fallback_wb.active_revision(),
                error: ErrorBody {
                    kind: ErrorKind::NotFound,
                    message: "no such endpoint".into(),
                    diagnostics: Vec::new(),
                },
            };
            (StatusCode::NOT_FOUND, Json(body))
        })
        .with_state(wb)
}

/// Serves until the process is stopped. `on_bound` receives the actual
/// address, which matters when binding port 0.
pub async fn serve(wb: Shared, addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(wb)).await
}
