//! JSON bodies of the HTTP API, shared by the server and its clients.

use serde::{Deserialize, Serialize};

use crate::agent::{DatasetRef, RunConfig};
use crate::detect::{AnomalyEvent, EventStatus};
use crate::report::DiscrepancyReport;
use crate::track::TrackKey;
use crate::verify::{Action, FeedbackSignal, QTable, QUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

impl RunStatus {
    /// Forward-only lifecycle.
    pub fn can_become(self, to: RunStatus) -> bool {
        matches!(
            (self, to),
            (RunStatus::Running, RunStatus::Completed) | (RunStatus::Running, RunStatus::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRunRequest {
    pub dataset: DatasetRef,
    #[serde(default)]
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartRunResponse {
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub dataset: DatasetRef,
    pub config: RunConfig,
    pub status: RunStatus,
    pub created_us: i64,
    #[serde(default)]
    pub finished_us: Option<i64>,
    #[serde(default)]
    pub decision: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub anomaly_count: usize,
    #[serde(default)]
    pub report_ids: Vec<String>,
}

/// An anomaly event together with the run that flagged it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyItem {
    pub run_id: String,
    #[serde(flatten)]
    pub event: AnomalyEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyQuery {
    /// `pending` (the default) also includes info-requested events; `all`
    /// disables the filter.
    #[serde(default)]
    pub status: Option<String>,
    #[serde(default)]
    pub run: Option<String>,
}

pub type FeedbackRequest = FeedbackSignal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub event_id: String,
    pub status: EventStatus,
    /// Action the verdict was applied to.
    pub action: Action,
    pub update: QUpdate,
    /// Follow-up proposal when the event stays open.
    #[serde(default)]
    pub next_action: Option<Action>,
    #[serde(default)]
    pub report_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeriesResponse {
    pub run_id: String,
    pub key: TrackKey,
    pub errors: Vec<f64>,
    pub timestamps_us: Vec<i64>,
    pub threshold: f64,
    pub flagged: Vec<usize>,
}

pub type ReportResponse = DiscrepancyReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTableResponse {
    pub qtable: QTable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: String,
}
