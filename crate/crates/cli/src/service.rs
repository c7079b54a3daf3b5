//! HTTP service: reference quadrature and surrogate predictions over JSON.
//!
//! Shared state is read-only. Reference integrations run on the blocking
//! pool behind a semaphore so they never starve `/health`. Per-path timings
//! go into the `Server-Timing` header, leaving bodies a pure function of
//! the request.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use plumeshine_core::dataset::Scenario;
use plumeshine_core::dispersion::{ReleaseSpec, StabilityClass};
use plumeshine_core::dose_kernel::{dose_rate, KernelConfig, Receptor};
use plumeshine_core::nuclide_db::NuclideDb;
use plumeshine_core::tree_models::{Family, SurrogateModel};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tracing::{info, warn};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::pipeline::load_model;

/// Upper bound on `/profile` grid length.
pub const MAX_PROFILE_POINTS: usize = 500;

pub struct AppState {
    pub db: NuclideDb,
    pub kernel: KernelConfig,
    pub models: BTreeMap<Family, SurrogateModel>,
    workers: Semaphore,
}

impl AppState {
    pub fn new(db: NuclideDb, kernel: KernelConfig, models: BTreeMap<Family, SurrogateModel>, workers: usize) -> Self {
        Self { db, kernel, models, workers: Semaphore::new(workers.max(1)) }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub radionuclide: String,
    pub stability: String,
    pub release_height_m: f64,
    pub distance_m: f64,
    /// Defaults to every loaded model.
    #[serde(default)]
    pub models: Option<Vec<String>>,
    #[serde(default)]
    pub include_reference: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRequest {
    pub radionuclide: String,
    pub stability: String,
    pub release_height_m: f64,
    pub distances_m: Vec<f64>,
    #[serde(default)]
    pub models: Option<Vec<String>>,
    #[serde(default = "yes")]
    pub include_reference: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioOut {
    pub radionuclide: String,
    pub stability: String,
    pub release_height_m: f64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelPrediction {
    pub model: String,
    #[serde(rename = "dose_uSv_per_hr")]
    pub dose_usv_per_hr: f64,
    /// Present iff the reference was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation_percent: Option<f64>,
    /// Height or distance outside this model's training bounds.
    pub extrapolation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReferenceDose {
    #[serde(rename = "dose_uSv_per_hr")]
    pub dose_usv_per_hr: f64,
    pub abs_error_estimate: f64,
    /// Distance outside the tabulated 25 to 2000 m range.
    pub outside_tabulated_range: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PredictResponse {
    pub scenario: ScenarioOut,
    pub predictions: Vec<ModelPrediction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceDose>,
    pub extrapolation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelCurve {
    pub model: String,
    #[serde(rename = "dose_uSv_per_hr")]
    pub dose_usv_per_hr: Vec<f64>,
    pub extrapolation: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation_percent: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProfileResponse {
    pub radionuclide: String,
    pub stability: String,
    pub release_height_m: f64,
    pub distances_m: Vec<f64>,
    pub models: Vec<ModelCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(rename = "reference_uSv_per_hr")]
    pub reference_usv_per_hr: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    class: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, class: "bad_request", message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, class: "not_found", message: message.into() }
    }

    fn unavailable(message: impl Into<String>) -> Self {
        Self { status: StatusCode::SERVICE_UNAVAILABLE, class: "model_unavailable", message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, class: "internal", message: message.into() }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.class.into(), message: self.message })).into_response()
    }
}

/// A validated request: nuclide known, class parsed, models resolved.
struct Query<'a> {
    nuclide: String,
    stability: StabilityClass,
    height: f64,
    models: Vec<(Family, &'a SurrogateModel)>,
}

fn resolve<'a>(state: &'a AppState, nuclide: &str, stability: &str, height: f64, models: &Option<Vec<String>>) -> Result<Query<'a>, ApiError> {
    let stability: StabilityClass = stability.parse().map_err(|_| ApiError::bad_request(format!("stability `{stability}` is not one of A-F")))?;
    if !(height.is_finite() && height >= 0.0) {
        return Err(ApiError::bad_request(format!("release_height_m must be finite and non-negative, got {height}")));
    }
    let record = state.db.get(nuclide).map_err(|_| ApiError::not_found(format!("unknown radionuclide `{nuclide}`")))?;
    let families: Vec<Family> = match models {
        None => state.models.keys().copied().collect(),
        Some(names) => {
            let mut fams = Vec::with_capacity(names.len());
            for n in names {
                let f: Family = n.parse().map_err(|_| ApiError::bad_request(format!("unknown model `{n}`, expected forest or boosted")))?;
                if !fams.contains(&f) {
                    fams.push(f);
                }
            }
            fams
        }
    };
    let mut out = Vec::with_capacity(families.len());
    for f in families {
        let m = state.models.get(&f).ok_or_else(|| ApiError::unavailable(format!("model `{f}` is not loaded")))?;
        if m.pre.nuclide_code(&record.name).is_err() {
            return Err(ApiError::not_found(format!("radionuclide `{}` is unknown to model `{f}`", record.name)));
        }
        out.push((f, m));
    }
    Ok(Query { nuclide: record.name.clone(), stability, height, models: out })
}

fn check_distance(x: f64) -> Result<(), ApiError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!("distance must be finite and positive, got {x}")))
    }
}

fn deviation(model: f64, reference: f64) -> f64 {
    100.0 * (model - reference) / reference
}

struct Timings(Vec<(String, f64)>);

impl Timings {
    fn header(&self) -> HeaderValue {
        let s = self.0.iter().map(|(k, ms)| format!("{k};dur={ms:.3}")).collect::<Vec<_>>().join(", ");
        HeaderValue::from_str(&s).unwrap_or(HeaderValue::from_static(""))
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Surrogate doses and extrapolation flags for every model at `distances`.
fn run_models(q: &Query, distances: &[f64], timings: &mut Timings) -> Result<Vec<(Family, Vec<f64>, Vec<bool>)>, ApiError> {
    let scenarios: Vec<Scenario> =
        distances.iter().map(|&x| Scenario { nuclide: q.nuclide.clone(), stability: q.stability, height: q.height, distance: x }).collect();
    let mut out = Vec::with_capacity(q.models.len());
    for &(f, m) in &q.models {
        let t = Instant::now();
        let dose = m.predict_dose(&scenarios).map_err(|e| ApiError::internal(e.to_string()))?;
        let flags = scenarios.iter().map(|s| !m.pre.in_bounds(s)).collect();
        timings.0.push((f.to_string(), ms(t)));
        out.push((f, dose, flags));
    }
    Ok(out)
}

/// Reference doses on the blocking pool, holding one worker permit.
async fn reference(state: &Arc<AppState>, q: &Query<'_>, distances: Vec<f64>, timings: &mut Timings) -> Result<Vec<(f64, f64, bool)>, ApiError> {
    let _permit = state.workers.acquire().await.map_err(|_| ApiError::internal("worker pool closed"))?;
    let t = Instant::now();
    let st = Arc::clone(state);
    let (nuclide, stability, height) = (q.nuclide.clone(), q.stability, q.height);
    let res = tokio::task::spawn_blocking(move || {
        let rec = st.db.get(&nuclide).map_err(|e| e.to_string())?;
        let release = ReleaseSpec::unit(stability, height);
        distances
            .iter()
            .map(|&x| {
                dose_rate(&st.db, rec, &release, &Receptor::centerline(x), &st.kernel)
                    .map(|d| (d.dose, d.abs_error, d.out_of_range))
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, String>>()
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(ApiError::bad_request)?;
    timings.0.push(("reference".into(), ms(t)));
    Ok(res)
}

fn with_timing<T: Serialize>(body: T, timings: &Timings) -> Response {
    let mut r = Json(body).into_response();
    r.headers_mut().insert("server-timing", timings.header());
    r
}

async fn predict(State(state): State<Arc<AppState>>, body: Result<Json<PredictRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(req) = body?;
    check_distance(req.distance_m)?;
    let q = resolve(&state, &req.radionuclide, &req.stability, req.release_height_m, &req.models)?;
    let mut timings = Timings(Vec::new());
    let reference = if req.include_reference {
        let r = reference(&state, &q, vec![req.distance_m], &mut timings).await?;
        Some(ReferenceDose { dose_usv_per_hr: r[0].0, abs_error_estimate: r[0].1, outside_tabulated_range: r[0].2 })
    } else {
        None
    };
    let predictions: Vec<ModelPrediction> = run_models(&q, &[req.distance_m], &mut timings)?
        .into_iter()
        .map(|(f, d, e)| ModelPrediction {
            model: f.to_string(),
            dose_usv_per_hr: d[0],
            deviation_percent: reference.as_ref().map(|r| deviation(d[0], r.dose_usv_per_hr)),
            extrapolation: e[0],
        })
        .collect();
    let body = PredictResponse {
        scenario: ScenarioOut {
            radionuclide: q.nuclide.clone(),
            stability: q.stability.to_string(),
            release_height_m: q.height,
            distance_m: req.distance_m,
        },
        extrapolation: predictions.iter().any(|p| p.extrapolation),
        predictions,
        reference,
    };
    Ok(with_timing(body, &timings))
}

async fn profile(State(state): State<Arc<AppState>>, body: Result<Json<ProfileRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let n = req.distances_m.len();
    if n == 0 || n > MAX_PROFILE_POINTS {
        return Err(ApiError::bad_request(format!("distances_m needs 1 to {MAX_PROFILE_POINTS} values, got {n}")));
    }
    for &x in &req.distances_m {
        check_distance(x)?;
    }
    let q = resolve(&state, &req.radionuclide, &req.stability, req.release_height_m, &req.models)?;
    let mut timings = Timings(Vec::new());
    let reference = if req.include_reference {
        Some(reference(&state, &q, req.distances_m.clone(), &mut timings).await?.into_iter().map(|r| r.0).collect::<Vec<f64>>())
    } else {
        None
    };
    let models = run_models(&q, &req.distances_m, &mut timings)?
        .into_iter()
        .map(|(f, d, e)| ModelCurve {
            model: f.to_string(),
            deviation_percent: reference.as_ref().map(|r| d.iter().zip(r).map(|(m, r)| deviation(*m, *r)).collect()),
            dose_usv_per_hr: d,
            extrapolation: e,
        })
        .collect();
    let body = ProfileResponse {
        radionuclide: q.nuclide.clone(),
        stability: q.stability.to_string(),
        release_height_m: q.height,
        distances_m: req.distances_m,
        models,
        reference_usv_per_hr: reference,
    };
    Ok(with_timing(body, &timings))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    models: Vec<String>,
    nuclides: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(Health { status: "ok", models: state.models.keys().map(|f| f.to_string()).collect(), nuclides: state.db.names().count() })
}

#[derive(Serialize)]
struct Nuclides {
    nuclides: Vec<String>,
}

async fn nuclides(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(Nuclides { nuclides: state.db.names().map(String::from).collect() })
}

#[derive(Serialize)]
struct Classes {
    stability_classes: Vec<String>,
}

async fn classes() -> impl IntoResponse {
    Json(Classes { stability_classes: StabilityClass::ALL.iter().map(|c| c.to_string()).collect() })
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/nuclides", get(nuclides))
        .route("/stability-classes", get(classes))
        .route("/predict", post(predict))
        .route("/profile", post(profile))
        .fallback(fallback)
        .layer(axum::middleware::map_response(|mut r: Response| async move {
            r.headers_mut().insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
            r
        }))
        .with_state(state)
}

/// Loads the configured models, skipping any that are missing or corrupt;
/// requests naming them get 503.
pub fn load_state(cfg: &PipelineConfig, out: &Path) -> Result<AppState, CliError> {
    let mut models = BTreeMap::new();
    for p in &cfg.service.models {
        let path = if p.is_absolute() { p.clone() } else { out.join(p) };
        match load_model(&path) {
            Ok(m) => {
                info!(path = %path.display(), family = %m.family(), "loaded model");
                if models.insert(m.family(), m).is_some() {
                    return Err(CliError::Config(format!("two models of the same family configured; second is {}", path.display())));
                }
            }
            Err(e) => warn!(path = %path.display(), error = %e, "model not loaded"),
        }
    }
    Ok(AppState::new(cfg.db()?, cfg.kernel, models, cfg.service.workers))
}

pub async fn serve(state: AppState, addr: SocketAddr) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::Service(format!("bind {addr}: {e}")))?;
    info!(addr = %listener.local_addr().map_err(|e| CliError::Service(e.to_string()))?, "listening");
    axum::serve(listener, router(Arc::new(state))).await.map_err(|e| CliError::Service(e.to_string()))
}
