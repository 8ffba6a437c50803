//! HTTP/JSON front end over `digico-core`: single runs, background experiment
//! jobs, plan listing and result summaries.
//!
//! Simulation work runs on the blocking pool; handlers only parse, validate
//! and hand off.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::Value;
use tokio::net::TcpListener;

use digico_core::api::{
    ConfigRequest, ConfigResponse, ErrorBody, ErrorKind, ExperimentAccepted, ExperimentRequest, ExperimentStatus,
    Health, JobState, PlanInfo, PlanSource, RunResponse, SummarizeRequest,
};
use digico_core::experiment::{self, ExperimentPlan, SummaryDocument, BUILTIN_PLANS};
use digico_core::{ecosystem, ConfigError, EcosystemConfig};

pub const OUT_ENV: &str = "DIGICO_OUT";
pub const ADDR_ENV: &str = "DIGICO_ADDR";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] digico_core::Error),
    #[error("no experiment with id `{0}`")]
    UnknownJob(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("background task failed: {0}")]
    Task(#[from] tokio::task::JoinError),
}

impl From<ConfigError> for ServiceError {
    fn from(e: ConfigError) -> Self {
        ServiceError::Core(e.into())
    }
}

impl ServiceError {
    fn kind(&self) -> ErrorKind {
        match self {
            ServiceError::Core(e) if e.is_config() => ErrorKind::Config,
            ServiceError::BadRequest(_) => ErrorKind::Config,
            ServiceError::UnknownJob(_) => ErrorKind::NotFound,
            _ => ErrorKind::Internal,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let kind = self.kind();
        let status = match kind {
            ErrorKind::Config => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if kind == ErrorKind::Internal {
            tracing::error!("{self}");
        }
        let body = ErrorBody {
            kind,
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type Job = Arc<Mutex<ExperimentStatus>>;

pub struct AppState {
    default_out: PathBuf,
    jobs: Mutex<HashMap<String, Job>>,
}

impl AppState {
    pub fn new(default_out: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(AppState {
            default_out: default_out.into(),
            jobs: Mutex::new(HashMap::new()),
        })
    }

    /// Output root from `DIGICO_OUT`, or `./results`.
    pub fn from_env() -> Arc<Self> {
        Self::new(std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("results"), PathBuf::from))
    }

    pub fn default_out(&self) -> &Path {
        &self.default_out
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/plans", get(list_plans))
        .route("/v1/config/validate", post(validate_config))
        .route("/v1/runs", post(run_once))
        .route("/v1/experiments", post(start_experiment))
        .route("/v1/experiments/{id}", get(experiment_status))
        .route("/v1/summarize", post(summarize))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

fn plan_info(plan: &ExperimentPlan) -> PlanInfo {
    PlanInfo {
        name: plan.name.clone(),
        description: plan.description.clone(),
        conditions: plan.axes.iter().map(|a| a.values.len()).product(),
        seeds: plan.seeds.len(),
    }
}

async fn list_plans() -> Json<Vec<PlanInfo>> {
    Json(
        BUILTIN_PLANS
            .iter()
            .filter_map(|name| experiment::builtin_plan(name))
            .map(|p| plan_info(&p))
            .collect(),
    )
}

fn config_from(overrides: &std::collections::BTreeMap<String, Value>) -> Result<EcosystemConfig, ConfigError> {
    EcosystemConfig::new_config(overrides.iter().map(|(k, v)| (k.as_str(), v)))
}

async fn validate_config(Json(req): Json<ConfigRequest>) -> Result<Json<ConfigResponse>, ServiceError> {
    let config = config_from(&req.overrides)?;
    Ok(Json(ConfigResponse {
        config_hash: config.content_hash(),
        config,
    }))
}

async fn run_once(Json(req): Json<ConfigRequest>) -> Result<Json<RunResponse>, ServiceError> {
    let config = config_from(&req.overrides)?;
    let output = tokio::task::spawn_blocking(move || ecosystem::run(&config)).await??;
    Ok(Json(output))
}

fn resolve_plan(req: &ExperimentRequest) -> Result<ExperimentPlan, ServiceError> {
    let mut plan = match &req.plan {
        PlanSource::Builtin(name) => experiment::builtin_plan(name).ok_or_else(|| {
            ServiceError::BadRequest(format!(
                "unknown plan `{name}` (built-in plans: {})",
                BUILTIN_PLANS.join(", ")
            ))
        })?,
        PlanSource::Toml(doc) => ExperimentPlan::from_toml_str(doc)?,
        PlanSource::Inline(plan) => plan.clone(),
    };
    if let Some(n) = req.seeds {
        if n == 0 {
            return Err(ServiceError::BadRequest("seeds must be at least 1".into()));
        }
        plan = plan.with_seed_count(n);
    }
    for (k, v) in &req.overrides {
        plan = plan.with_override(k, v.clone());
    }
    Ok(plan)
}

async fn start_experiment(
    State(state): State<Arc<AppState>>,
    Json(req): Json<ExperimentRequest>,
) -> Result<(StatusCode, Json<ExperimentAccepted>), ServiceError> {
    if req.workers == 0 {
        return Err(ServiceError::BadRequest("workers must be at least 1".into()));
    }
    let plan = resolve_plan(&req)?;
    let total = experiment::expand(&plan)?.len();
    let out = req.out.map_or_else(|| state.default_out.clone(), PathBuf::from);
    let id = uuid::Uuid::new_v4().simple().to_string();

    let job: Job = Arc::new(Mutex::new(ExperimentStatus {
        id: id.clone(),
        plan: plan.name.clone(),
        state: JobState::Running,
        total,
        records: Vec::new(),
        report: None,
        error: None,
    }));
    state.jobs.lock().expect("jobs lock").insert(id.clone(), job.clone());
    tracing::info!(%id, plan = %plan.name, total, out = %out.display(), "experiment accepted");

    let accepted = ExperimentAccepted {
        id: id.clone(),
        plan: plan.name.clone(),
        total,
        out: out.display().to_string(),
    };
    let workers = req.workers;
    tokio::spawn(async move {
        let progress = job.clone();
        let result = tokio::task::spawn_blocking(move || {
            experiment::execute(&plan, &out, workers, &|rec| {
                progress.lock().expect("job lock").records.push(rec.clone());
            })
        })
        .await;
        let mut status = job.lock().expect("job lock");
        match result {
            Ok(Ok(report)) => {
                tracing::info!(%id, completed = report.completed, skipped = report.skipped, failed = report.failed, "experiment finished");
                status.state = JobState::Finished;
                status.report = Some(report);
            }
            Ok(Err(e)) => {
                status.state = JobState::Failed;
                status.error = Some(e.to_string());
            }
            Err(e) => {
                status.state = JobState::Failed;
                status.error = Some(e.to_string());
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

async fn experiment_status(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ExperimentStatus>, ServiceError> {
    let job = state
        .jobs
        .lock()
        .expect("jobs lock")
        .get(&id)
        .cloned()
        .ok_or(ServiceError::UnknownJob(id))?;
    let status = job.lock().expect("job lock").clone();
    Ok(Json(status))
}

async fn summarize(Json(req): Json<SummarizeRequest>) -> Result<Json<SummaryDocument>, ServiceError> {
    let input = PathBuf::from(&req.input);
    if !input.is_dir() {
        return Err(ServiceError::BadRequest(format!("`{}` is not a directory", input.display())));
    }
    let out = PathBuf::from(&req.out);
    let doc = tokio::task::spawn_blocking(move || experiment::summarize_to_file(&input, &out)).await??;
    Ok(Json(doc))
}
