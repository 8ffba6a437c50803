//! Async client for the digico HTTP service.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use digico_core::api::{
    ConfigRequest, ConfigResponse, ErrorBody, ErrorKind, ExperimentAccepted, ExperimentRequest, ExperimentStatus,
    Health, JobState, PlanInfo, RunResponse, SummarizeRequest, DEFAULT_PORT,
};
use digico_core::experiment::{RunRecord, SummaryDocument};

pub const URL_ENV: &str = "DIGICO_URL";

pub fn default_url() -> String {
    format!("http://127.0.0.1:{DEFAULT_PORT}")
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach the digico service at {url}: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("service rejected the request ({status}): {message}")]
    Api {
        status: u16,
        kind: ErrorKind,
        message: String,
    },
    #[error("unexpected response from {url}: {source}")]
    Decode {
        url: String,
        #[source]
        source: reqwest::Error,
    },
}

impl ClientError {
    /// True when the service refused the request because of a bad
    /// configuration or plan.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ClientError::Api {
                kind: ErrorKind::Config,
                ..
            }
        )
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        let base = base_url.into().trim_end_matches('/').to_string();
        Client {
            base,
            http: reqwest::Client::new(),
        }
    }

    /// Uses `DIGICO_URL`, or the local default.
    pub fn from_env() -> Self {
        Self::new(std::env::var(URL_ENV).unwrap_or_else(|_| default_url()))
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(&self, url: String, resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return resp.json().await.map_err(|source| ClientError::Decode { url, source });
        }
        let text = resp.text().await.unwrap_or_default();
        let (kind, message) = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => (body.kind, body.message),
            // axum's own extractor rejections are plain text
            Err(_) if status.is_client_error() => (ErrorKind::Config, text),
            Err(_) => (ErrorKind::Internal, text),
        };
        Err(ClientError::Api {
            status: status.as_u16(),
            kind,
            message,
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let resp = self
            .http
            .get(&url)
            .send()
            .await
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        self.decode(url, resp).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let resp = self
            .http
            .post(&url)
            .json(body)
            .send()
            .await
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        self.decode(url, resp).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn plans(&self) -> Result<Vec<PlanInfo>> {
        self.get("/v1/plans").await
    }

    pub async fn validate(&self, overrides: BTreeMap<String, Value>) -> Result<ConfigResponse> {
        self.post("/v1/config/validate", &ConfigRequest { overrides }).await
    }

    /// Runs one simulation to completion on the service.
    pub async fn run(&self, overrides: BTreeMap<String, Value>) -> Result<RunResponse> {
        self.post("/v1/runs", &ConfigRequest { overrides }).await
    }

    pub async fn start_experiment(&self, req: &ExperimentRequest) -> Result<ExperimentAccepted> {
        self.post("/v1/experiments", req).await
    }

    pub async fn experiment(&self, id: &str) -> Result<ExperimentStatus> {
        self.get(&format!("/v1/experiments/{id}")).await
    }

    /// Polls until the experiment leaves the running state, calling
    /// `on_record` once for every run as it finishes.
    pub async fn wait_experiment(
        &self,
        id: &str,
        poll: Duration,
        mut on_record: impl FnMut(usize, &RunRecord),
    ) -> Result<ExperimentStatus> {
        let mut seen = 0;
        loop {
            let status = self.experiment(id).await?;
            for rec in &status.records[seen..] {
                seen += 1;
                on_record(seen, rec);
            }
            if status.state != JobState::Running {
                return Ok(status);
            }
            tokio::time::sleep(poll).await;
        }
    }

    pub async fn summarize(&self, input: &str, out: &str) -> Result<SummaryDocument> {
        self.post(
            "/v1/summarize",
            &SummarizeRequest {
                input: input.to_string(),
                out: out.to_string(),
            },
        )
        .await
    }
}
