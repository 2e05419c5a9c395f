//! Thin async client for the service API, plus the terminal review loop.

pub mod review;

use std::time::Duration;

use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use telewatch_core::agent::{DatasetRef, RunConfig};
use telewatch_core::api::{
    AnomalyItem, AnomalyQuery, ErrorBody, ErrorSeriesResponse, FeedbackResponse, QTableResponse, RunRecord,
    RunStatus, StartRunRequest, StartRunResponse,
};
use telewatch_core::report::DiscrepancyReport;
use telewatch_core::track::TrackKey;
use telewatch_core::verify::{FeedbackSignal, QTable};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{status}: {} ({})", body.error, body.code)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("run {0} did not finish in time")]
    Timeout(String),
}

impl ClientError {
    /// HTTP status of an API error, if the server answered.
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
            ClientError::Timeout(_) => None,
        }
    }
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(resp: Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let body = serde_json::from_str::<ErrorBody>(&text).unwrap_or(ErrorBody {
            error: text,
            code: "http".into(),
        });
        Err(ClientError::Api { status, body })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str, query: &(impl Serialize + ?Sized)) -> Result<T> {
        Self::decode(self.http.get(self.url(path)).query(query).send().await?).await
    }

    async fn post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<T> {
        Self::decode(self.http.post(self.url(path)).json(body).send().await?).await
    }

    pub async fn start_run(&self, dataset: DatasetRef, config: RunConfig) -> Result<String> {
        let r: StartRunResponse = self.post("/api/runs", &StartRunRequest { dataset, config }).await?;
        Ok(r.run_id)
    }

    pub async fn run(&self, id: &str) -> Result<RunRecord> {
        self.get(&format!("/api/runs/{id}"), &()).await
    }

    pub async fn runs(&self) -> Result<Vec<RunRecord>> {
        self.get("/api/runs", &()).await
    }

    /// Polls until the run leaves `running`.
    pub async fn wait_for_run(&self, id: &str, poll: Duration, timeout: Duration) -> Result<RunRecord> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let run = self.run(id).await?;
            if run.status != RunStatus::Running {
                return Ok(run);
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(ClientError::Timeout(id.to_string()));
            }
            tokio::time::sleep(poll).await;
        }
    }

    pub async fn anomalies(&self, query: &AnomalyQuery) -> Result<Vec<AnomalyItem>> {
        self.get("/api/anomalies", query).await
    }

    pub async fn pending(&self, run: Option<&str>) -> Result<Vec<AnomalyItem>> {
        self.anomalies(&AnomalyQuery {
            status: Some("pending".into()),
            run: run.map(str::to_string),
        })
        .await
    }

    pub async fn submit_feedback(&self, event_id: &str, signal: &FeedbackSignal) -> Result<FeedbackResponse> {
        self.post(&format!("/api/anomalies/{event_id}/feedback"), signal).await
    }

    pub async fn report(&self, id: &str) -> Result<DiscrepancyReport> {
        self.get(&format!("/api/reports/{id}"), &()).await
    }

    pub async fn report_markdown(&self, id: &str) -> Result<String> {
        let resp = self
            .http
            .get(self.url(&format!("/api/reports/{id}")))
            .query(&[("format", "markdown")])
            .send()
            .await?;
        if resp.status().is_success() {
            return Ok(resp.text().await?);
        }
        Self::decode::<String>(resp).await
    }

    pub async fn errors(&self, run_id: &str, key: Option<TrackKey>) -> Result<ErrorSeriesResponse> {
        let query: Vec<(&str, u32)> = key.map(|k| vec![("dss", k.dss), ("scid", k.scid)]).unwrap_or_default();
        self.get(&format!("/api/runs/{run_id}/errors"), &query).await
    }

    pub async fn qtable(&self) -> Result<QTable> {
        let r: QTableResponse = self.get("/api/qtable", &()).await?;
        Ok(r.qtable)
    }
}
