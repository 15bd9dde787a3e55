//! JSON API consumed by the review dashboard.

use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use weakspot_core::audit::{self, AuditConfig, Prediction, Weakspot};
use weakspot_core::data::{DatasetBundle, Record};
use weakspot_core::index::NeighborIndex;
use weakspot_core::learner::LinearClassifier;
use weakspot_core::metrics::MetricsReport;
use weakspot_core::pipeline::{
    self, read_json, AuditReport, Datasets, DisparityChange, EnhanceReport, PipelineConfig, PipelineError,
};
use weakspot_core::prompt::DescriptionSet;
use weakspot_core::review::{AssociationKey, ReviewError, ReviewItem, ReviewStore, Verdict};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Missing(m) => Self::new(StatusCode::CONFLICT, m),
            PipelineError::Config(m) => Self::bad_request(m),
            other => Self::internal(other.to_string()),
        }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::UnknownKey(..) => Self::not_found(e.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Baseline predictions over the audit bundle, for re-running detection
/// under other radii and thresholds.
struct LiveAudit {
    bundle: DatasetBundle,
    predictions: Vec<Prediction>,
    index: NeighborIndex,
}

pub struct AppState {
    config: PipelineConfig,
    sets: Arc<Datasets>,
    review: Arc<ReviewStore>,
    audit: RwLock<Option<AuditReport>>,
    enhance: RwLock<Option<EnhanceReport>>,
    live: Option<LiveAudit>,
}

fn optional<T>(r: Result<T, PipelineError>) -> Result<Option<T>, PipelineError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(PipelineError::Missing(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl AppState {
    /// Loads datasets, the review queue and whatever reports exist on disk.
    pub fn load(config: PipelineConfig) -> Result<Self, PipelineError> {
        let sets = Datasets::load(&config.data)?;
        Self::with_datasets(config, sets)
    }

    pub fn with_datasets(config: PipelineConfig, sets: Datasets) -> Result<Self, PipelineError> {
        config.validate()?;
        let review = ReviewStore::open(config.review_path()).map_err(|e| PipelineError::stage("open review", e))?;
        let audit: Option<AuditReport> = optional(read_json(config.audit_report_path()))?;
        let enhance: Option<EnhanceReport> = optional(read_json(config.enhance_report_path()))?;
        let live = if config.baseline_path().exists() {
            let model = LinearClassifier::load(config.baseline_path())
                .map_err(|e| PipelineError::stage("load checkpoint", e))?;
            let reference = audit.as_ref().map_or(config.audit.reference, |a| a.audit.reference);
            let bundle = sets.audit_bundle(reference)?.into_owned();
            let predictions = model.predict(&bundle).map_err(|e| PipelineError::stage("predict", e))?;
            let index = NeighborIndex::build(&bundle, |r| reference.keeps(r));
            Some(LiveAudit {
                bundle,
                predictions,
                index,
            })
        } else {
            None
        };
        Ok(Self {
            config,
            sets: Arc::new(sets),
            review: Arc::new(review),
            audit: RwLock::new(audit),
            enhance: RwLock::new(enhance),
            live,
        })
    }

    fn audit_report(&self) -> Option<AuditReport> {
        self.audit.read().unwrap().clone()
    }

    fn audit_config(&self) -> AuditConfig {
        self.audit
            .read()
            .unwrap()
            .as_ref()
            .map_or_else(|| self.config.audit.clone(), |a| a.audit.clone())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/report", get(report))
        .route("/api/weakspots", get(weakspots))
        .route("/api/weakspots/{id}", get(weakspot_detail))
        .route("/api/associations", get(associations))
        .route("/api/associations/{object}/{class}/verdict", post(set_verdict))
        .route("/api/prompts", get(prompts))
        .route("/api/enhance", post(enhance))
        .route("/api/metrics/before-after", get(before_after))
        .with_state(state)
}

#[derive(Serialize)]
struct ReportBody {
    audit: Option<AuditReport>,
    enhance: Option<EnhanceReport>,
}

async fn report(State(s): State<Arc<AppState>>) -> ApiResult<ReportBody> {
    Ok(Json(ReportBody {
        audit: s.audit_report(),
        enhance: s.enhance.read().unwrap().clone(),
    }))
}

#[derive(Debug, Default, Deserialize)]
pub struct WeakspotQuery {
    pub d: Option<f64>,
    pub tperp: Option<f64>,
    pub true_class: Option<String>,
    pub predicted_class: Option<String>,
}

#[derive(Serialize)]
struct WeakspotList {
    radius: f64,
    perplexity_threshold: f64,
    count: usize,
    weakspots: Vec<Weakspot>,
}

/// Persisted weakspots, or a fresh detection when `d` or `tperp` differ
/// from the persisted audit.
async fn weakspots(State(s): State<Arc<AppState>>, Query(q): Query<WeakspotQuery>) -> ApiResult<WeakspotList> {
    let base = s.audit_config();
    let cfg = AuditConfig {
        radius: q.d.unwrap_or(base.radius),
        perplexity_threshold: q.tperp.unwrap_or(base.perplexity_threshold),
        ..base.clone()
    };
    cfg.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let same = cfg.radius == base.radius && cfg.perplexity_threshold == base.perplexity_threshold;
    let mut found = match (s.audit_report(), &s.live) {
        (Some(a), _) if same => a.weakspots,
        (None, _) if same => Vec::new(),
        (_, Some(live)) => audit::detect(&live.bundle, &live.predictions, &live.index, &cfg)
            .map_err(|e| ApiError::internal(e.to_string()))?,
        (_, None) => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "no baseline checkpoint; run audit first",
            ))
        }
    };
    found.retain(|w| {
        q.true_class.as_ref().is_none_or(|c| &w.true_class == c)
            && q.predicted_class.as_ref().is_none_or(|c| &w.predicted_class == c)
    });
    Ok(Json(WeakspotList {
        radius: cfg.radius,
        perplexity_threshold: cfg.perplexity_threshold,
        count: found.len(),
        weakspots: found,
    }))
}

#[derive(Serialize)]
struct WeakspotDetail {
    weakspot: Weakspot,
    record: Option<Record>,
    neighbors: Vec<Record>,
}

async fn weakspot_detail(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<WeakspotDetail> {
    let report = s.audit_report().ok_or_else(|| ApiError::not_found("no audit report"))?;
    let weakspot = report
        .weakspots
        .into_iter()
        .find(|w| w.pivotal_id == id)
        .ok_or_else(|| ApiError::not_found(format!("no weakspot with pivotal {id:?}")))?;
    let bundle = s.sets.audit_bundle(report.audit.reference)?;
    let record = bundle.record(&id).cloned();
    let neighbors = weakspot
        .neighbor_ids
        .iter()
        .filter_map(|n| bundle.record(n).cloned())
        .collect();
    Ok(Json(WeakspotDetail {
        weakspot,
        record,
        neighbors,
    }))
}

#[derive(Debug, Default, Deserialize)]
pub struct AssociationQuery {
    pub verdict: Option<String>,
}

async fn associations(State(s): State<Arc<AppState>>, Query(q): Query<AssociationQuery>) -> ApiResult<Vec<ReviewItem>> {
    let verdict = q
        .verdict
        .as_deref()
        .map(str::parse::<Verdict>)
        .transpose()
        .map_err(ApiError::bad_request)?;
    let queue = s.review.snapshot();
    Ok(Json(queue.filter(verdict).into_iter().cloned().collect()))
}

#[derive(Debug, Deserialize)]
pub struct VerdictBody {
    pub verdict: Verdict,
    pub reviewer: String,
}

async fn set_verdict(
    State(s): State<Arc<AppState>>,
    Path((object, class)): Path<(String, String)>,
    body: Result<Json<VerdictBody>, JsonRejection>,
) -> ApiResult<ReviewItem> {
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let key = AssociationKey::new(object, class);
    let review = Arc::clone(&s.review);
    let item = tokio::task::spawn_blocking(move || review.set_verdict(&key, body.verdict, &body.reviewer))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(item))
}

async fn prompts(State(s): State<Arc<AppState>>) -> ApiResult<DescriptionSet> {
    let weakspots = s.audit_report().map(|a| a.weakspots).unwrap_or_default();
    Ok(Json(pipeline::describe(
        &s.config,
        &s.sets,
        &weakspots,
        &s.review.snapshot(),
    )?))
}

async fn enhance(State(s): State<Arc<AppState>>) -> ApiResult<EnhanceReport> {
    let state = Arc::clone(&s);
    let report = tokio::task::spawn_blocking(move || {
        pipeline::run_enhance_with(&state.config, &state.sets, &state.review.snapshot())
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    *s.enhance.write().unwrap() = Some(report.clone());
    Ok(Json(report))
}

#[derive(Serialize)]
struct BeforeAfter {
    before: MetricsReport,
    after: MetricsReport,
    accuracy_delta: f64,
    disparities: Vec<DisparityChange>,
    grid_before: audit::GridReport,
    grid_after: audit::GridReport,
    weakspots_before: usize,
    weakspots_after: usize,
}

async fn before_after(State(s): State<Arc<AppState>>) -> ApiResult<BeforeAfter> {
    let e = s
        .enhance
        .read()
        .unwrap()
        .clone()
        .ok_or_else(|| ApiError::not_found("no enhance report"))?;
    Ok(Json(BeforeAfter {
        accuracy_delta: e.accuracy_delta(),
        before: e.before,
        after: e.after,
        disparities: e.disparities,
        grid_before: e.grid_before,
        grid_after: e.grid_after,
        weakspots_before: e.weakspots_before,
        weakspots_after: e.weakspots_after,
    }))
}
