//! JSON API over a [`RunStore`] for the analyst console and scripts.
//!
//! Reads are open. Mutations need the analyst role: the service must not be
//! read-only and, when a token is configured, the request must carry it in
//! `x-analyst-token`. Errors are `{"code", "message"}` bodies.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calendar::{Day, Granularity};
use crate::pipeline::{
    self, AlertLevel, ClusterLabel, Disposition, InvestigateRequest, PipelineError, RunConfig, RunStatus, RunStore,
    ScoredCase,
};

pub const DEFAULT_PORT: u16 = 8750;
pub const MAX_PAGE_SIZE: usize = 10_000;
const DEFAULT_PAGE_SIZE: usize = 1_000;
const TOKEN_HEADER: &str = "x-analyst-token";

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub analyst_token: Option<String>,
    pub read_only: bool,
    /// Directory of console assets served for unmatched paths.
    pub static_dir: Option<PathBuf>,
}

struct AppState {
    store: Arc<RunStore>,
    config: ServiceConfig,
    training: AtomicBool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            PipelineError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "conflict", e.to_string()),
            PipelineError::Io { .. } | PipelineError::Corrupt { .. } => {
                log::error!("{e}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
            }
            _ if e.is_input_error() => ApiError::invalid(e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// `Json` with JSON error bodies: 415 without a JSON content type, 422 for
/// anything unparsable.
struct Body<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(JsonRejection::MissingJsonContentType(e)) => Err(ApiError::new(
                StatusCode::UNSUPPORTED_MEDIA_TYPE,
                "unsupported_media_type",
                e.body_text(),
            )),
            Err(e) => Err(ApiError::invalid(e.body_text())),
        }
    }
}

struct Params<T>(T);

impl<S: Send + Sync, T: DeserializeOwned + Send> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| Params(v))
            .map_err(|e| ApiError::invalid(e.body_text()))
    }
}

/// Clears the training flag however the job ends.
struct TrainingGuard<'a>(&'a AtomicBool);

impl Drop for TrainingGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl AppState {
    fn authorize(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        if self.config.read_only {
            return Err(ApiError::new(StatusCode::FORBIDDEN, "read_only", "service is read-only"));
        }
        if let Some(token) = &self.config.analyst_token {
            let given = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
            if given != Some(token.as_str()) {
                return Err(ApiError::new(
                    StatusCode::UNAUTHORIZED,
                    "unauthorized",
                    format!("missing or wrong {TOKEN_HEADER}"),
                ));
            }
        }
        Ok(())
    }

    fn ensure_not_training(&self) -> Result<(), ApiError> {
        if self.training.load(Ordering::Acquire) {
            Err(ApiError::new(StatusCode::CONFLICT, "training_in_progress", "a training job is running"))
        } else {
            Ok(())
        }
    }
}

/// Runs store work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

pub fn router(store: Arc<RunStore>, config: ServiceConfig) -> Router {
    let static_dir = config.static_dir.clone();
    let state = Arc::new(AppState {
        store,
        config,
        training: AtomicBool::new(false),
    });
    let api = Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/points", get(get_points))
        .route("/runs/{id}/clusters", get(get_clusters))
        .route("/runs/{id}/clusters/{idx}/label", post(label_cluster))
        .route("/runs/{id}/train", post(train))
        .route("/runs/{id}/cases", get(list_cases))
        .route("/runs/{id}/cases/{case_id}", get(get_case))
        .route("/runs/{id}/cases/{case_id}/disposition", post(dispose))
        .route("/runs/{id}/investigate", post(investigate))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") }),
    }
}

/// Serves until ctrl-c.
pub async fn serve(store: Arc<RunStore>, config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub status: RunStatus,
    pub started_at: String,
    pub as_of: Day,
    pub record_count: usize,
    pub granularities: Vec<Granularity>,
}

fn summarize(store: &RunStore, config: &RunConfig) -> Result<RunSummary, PipelineError> {
    Ok(RunSummary {
        run_id: config.run_id.clone(),
        status: store.status(&config.run_id)?,
        started_at: config.started_at.clone(),
        as_of: config.as_of,
        record_count: config.record_count,
        granularities: config.profile.granularities.clone(),
    })
}

async fn list_runs(State(st): State<Arc<AppState>>) -> ApiResult<Vec<RunSummary>> {
    blocking(move || {
        let mut out = Vec::new();
        for id in st.store.list_runs()? {
            out.push(summarize(&st.store, &st.store.config(&id)?)?);
        }
        Ok(Json(out))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunDetail {
    #[serde(flatten)]
    pub summary: RunSummary,
    pub config: RunConfig,
    pub model_fingerprints: BTreeMap<Granularity, String>,
}

async fn get_run(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<RunDetail> {
    blocking(move || {
        let config = st.store.config(&id)?;
        let mut model_fingerprints = BTreeMap::new();
        for &g in &config.profile.granularities {
            if let Ok(m) = st.store.model(&id, g) {
                model_fingerprints.insert(g, m.fingerprint());
            }
        }
        Ok(Json(RunDetail {
            summary: summarize(&st.store, &config)?,
            config,
            model_fingerprints,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct PointsQuery {
    granularity: Granularity,
    screened: Option<bool>,
    page: Option<usize>,
    page_size: Option<usize>,
    sample: Option<usize>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointView {
    /// Row position in the run's points file.
    pub point_id: usize,
    pub customer_id: String,
    pub fund_id: String,
    pub period_index: i64,
    pub period_start: Day,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub flag: bool,
    pub screened: bool,
    pub cluster: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Page<T> {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub items: Vec<T>,
}

fn paginate<T>(items: Vec<T>, page: Option<usize>, page_size: Option<usize>) -> Result<Page<T>, ApiError> {
    let page = page.unwrap_or(1);
    let page_size = page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page == 0 {
        return Err(ApiError::invalid("page starts at 1"));
    }
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::invalid(format!("page_size must be in 1..={MAX_PAGE_SIZE}")));
    }
    let total = items.len();
    let items = items.into_iter().skip((page - 1) * page_size).take(page_size).collect();
    Ok(Page { total, page, page_size, items })
}

async fn get_points(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Params(q): Params<PointsQuery>,
) -> ApiResult<Page<PointView>> {
    blocking(move || {
        let rows = st.store.points(&id, q.granularity)?;
        let mut cluster_of = vec![None; rows.len()];
        if let Ok(artifact) = st.store.clusters(&id, q.granularity) {
            for (&m, &c) in artifact.members.iter().zip(&artifact.assignments) {
                cluster_of[m] = Some(c);
            }
        }
        let mut ids: Vec<usize> = (0..rows.len())
            .filter(|&i| q.screened.is_none_or(|s| rows[i].screened.unwrap_or(false) == s))
            .collect();
        if let Some(n) = q.sample.filter(|&n| n < ids.len()) {
            let mut rng = ChaCha8Rng::seed_from_u64(q.seed);
            let mut picked = rand::seq::index::sample(&mut rng, ids.len(), n).into_vec();
            picked.sort_unstable();
            ids = picked.into_iter().map(|i| ids[i]).collect();
        }
        let views = ids
            .into_iter()
            .map(|i| {
                let r = &rows[i];
                PointView {
                    point_id: i,
                    customer_id: r.point.key.customer_id.clone(),
                    fund_id: r.point.key.fund_id.clone(),
                    period_index: r.point.key.period_index,
                    period_start: r.point.key.period_start(),
                    alpha: r.aggregate.alpha,
                    beta: r.aggregate.beta,
                    theta: r.aggregate.theta,
                    delta1: r.point.delta1,
                    delta2: r.point.delta2,
                    flag: r.point.data_quality_flag,
                    screened: r.screened.unwrap_or(false),
                    cluster: cluster_of[i],
                }
            })
            .collect();
        Ok(Json(paginate(views, q.page, q.page_size)?))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct GranularityQuery {
    granularity: Granularity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersView {
    pub granularity: Granularity,
    pub centroids: Vec<[f64; 2]>,
    pub sizes: Vec<usize>,
    pub inertia: f64,
    /// Cluster indices, most suspicious first.
    pub ranking: Vec<usize>,
    pub iterations_run: usize,
    pub converged: bool,
    pub seed: u64,
    pub labels: BTreeMap<usize, ClusterLabel>,
    /// Clusters the next training will take positives from.
    pub suspicious_clusters: Vec<usize>,
}

fn clusters_view(store: &RunStore, id: &str, g: Granularity) -> Result<ClustersView, PipelineError> {
    let artifact = store.clusters(id, g)?;
    let labels = store.cluster_labels(id, g)?;
    let suspicious_clusters = pipeline::suspicious_clusters(&artifact, &labels).unwrap_or_default();
    let s = artifact.summary;
    Ok(ClustersView {
        granularity: g,
        centroids: s.centroids,
        sizes: s.sizes,
        inertia: s.inertia,
        ranking: s.ranking,
        iterations_run: s.iterations_run,
        converged: s.converged,
        seed: s.seed,
        labels,
        suspicious_clusters,
    })
}

async fn get_clusters(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Params(q): Params<GranularityQuery>,
) -> ApiResult<ClustersView> {
    blocking(move || Ok(Json(clusters_view(&st.store, &id, q.granularity)?))).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    label: ClusterLabel,
    granularity: Option<Granularity>,
}

#[derive(Debug, Deserialize)]
struct OptionalGranularity {
    granularity: Option<Granularity>,
}

async fn label_cluster(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path((id, idx)): Path<(String, String)>,
    Params(q): Params<OptionalGranularity>,
    Body(body): Body<LabelBody>,
) -> ApiResult<ClustersView> {
    st.authorize(&headers)?;
    st.ensure_not_training()?;
    let idx: usize = idx
        .parse()
        .map_err(|_| ApiError::invalid(format!("cluster index {idx:?} is not a number")))?;
    let g = body
        .granularity
        .or(q.granularity)
        .ok_or_else(|| ApiError::invalid("granularity is required"))?;
    blocking(move || {
        pipeline::label_cluster(&st.store, &id, g, idx, body.label)?;
        Ok(Json(clusters_view(&st.store, &id, g)?))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainResponse {
    pub run_id: String,
    pub model_fingerprints: BTreeMap<Granularity, String>,
}

async fn train(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<TrainResponse> {
    st.authorize(&headers)?;
    if st
        .training
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        return Err(ApiError::new(StatusCode::CONFLICT, "training_in_progress", "a training job is running"));
    }
    blocking(move || {
        let _guard = TrainingGuard(&st.training);
        if st.store.status(&id)? == RunStatus::Running {
            return Err(ApiError::new(StatusCode::CONFLICT, "run_in_progress", format!("run {id} is still running")));
        }
        let model_fingerprints = pipeline::retrain(&st.store, &id)?;
        Ok(Json(TrainResponse { run_id: id, model_fingerprints }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct CasesQuery {
    alert: Option<String>,
    disposition: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn list_cases(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Params(q): Params<CasesQuery>,
) -> ApiResult<Page<ScoredCase>> {
    let alert: Option<AlertLevel> = q.alert.as_deref().map(str::parse).transpose().map_err(ApiError::invalid)?;
    let disposition: Option<Disposition> =
        q.disposition.as_deref().map(str::parse).transpose().map_err(ApiError::invalid)?;
    blocking(move || {
        let mut cases: Vec<ScoredCase> = st
            .store
            .cases(&id)?
            .into_iter()
            .filter(|c| alert.is_none_or(|a| c.alert_level == a))
            .filter(|c| disposition.is_none_or(|d| c.disposition == d))
            .collect();
        cases.sort_by(|a, b| {
            b.max_degree()
                .total_cmp(&a.max_degree())
                .then_with(|| a.case_id.cmp(&b.case_id))
        });
        Ok(Json(paginate(cases, q.page, q.page_size)?))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaseDetail {
    #[serde(flatten)]
    pub case: ScoredCase,
    pub timeline: Vec<crate::ingest::RawTransactionRecord>,
}

async fn get_case(
    State(st): State<Arc<AppState>>,
    Path((id, case_id)): Path<(String, String)>,
) -> ApiResult<CaseDetail> {
    blocking(move || {
        let case = st.store.case(&id, &case_id)?;
        let timeline = pipeline::case_timeline(&st.store, &case)?;
        Ok(Json(CaseDetail { case, timeline }))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DispositionBody {
    disposition: Disposition,
    #[serde(default)]
    note: Option<String>,
}

async fn dispose(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path((id, case_id)): Path<(String, String)>,
    Body(body): Body<DispositionBody>,
) -> ApiResult<ScoredCase> {
    st.authorize(&headers)?;
    st.ensure_not_training()?;
    blocking(move || {
        Ok(Json(pipeline::record_disposition(
            &st.store,
            &id,
            &case_id,
            body.disposition,
            body.note,
        )?))
    })
    .await
}

async fn investigate(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Body(req): Body<InvestigateRequest>,
) -> ApiResult<ScoredCase> {
    st.authorize(&headers)?;
    st.ensure_not_training()?;
    blocking(move || Ok(Json(pipeline::investigate(&st.store, &id, &req)?))).await
}
