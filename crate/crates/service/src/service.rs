use std::path::{Path, PathBuf};
use std::sync::Arc;

use tokio::sync::Mutex;
use tracing::{error, info, warn};

use telewatch_core::agent::{build_workflow, run_workflow, Phase, TrackErrors, WorkflowState};
use telewatch_core::api::{AnomalyItem, AnomalyQuery, FeedbackResponse, RunRecord, RunStatus, StartRunRequest};
use telewatch_core::detect::EventStatus;
use telewatch_core::report::{generate_report, DiscrepancyReport};
use telewatch_core::track::TrackKey;
use telewatch_core::verify::{apply_feedback, follow_up_action, resolve_status, FeedbackSignal, QTable};

use crate::error::ServiceError;
use crate::ids::IdGenerator;
use crate::log::{EventLog, Mutation, ServiceState};

struct Core {
    state: ServiceState,
    log: EventLog,
}

/// Shared handle to the service. All mutations go through one lock that
/// also guards the log writer, so they are serialised.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

struct Inner {
    data_dir: PathBuf,
    core: Mutex<Core>,
    ids: IdGenerator,
}

/// Event ids are namespaced by run so repeated runs over one dataset do not
/// collide.
pub fn scoped_event_id(run_id: &str, event_id: &str) -> String {
    format!("{run_id}.{event_id}")
}

impl Service {
    /// Opens the service rooted at `data_dir`, recovering state from its log.
    /// Runs left `running` by a previous process are marked failed.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let data_dir = data_dir.into();
        let (log, state, warning) = EventLog::open(&data_dir)?;
        if let Some(w) = warning {
            warn!("{w}");
        }
        let mut core = Core { state, log };
        let stale: Vec<String> = core
            .state
            .runs
            .values()
            .filter(|r| r.status == RunStatus::Running)
            .map(|r| r.id.clone())
            .collect();
        for run_id in stale {
            core.log.commit(
                &mut core.state,
                Mutation::RunFinished {
                    run_id,
                    status: RunStatus::Failed,
                    finished_us: chrono::Utc::now().timestamp_micros(),
                    decision: None,
                    error: Some("interrupted by service restart".into()),
                    anomaly_count: 0,
                    series: Vec::new(),
                },
            )?;
        }
        Ok(Self {
            inner: Arc::new(Inner {
                data_dir,
                core: Mutex::new(core),
                ids: IdGenerator::default(),
            }),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.inner.data_dir
    }

    pub async fn snapshot(&self) -> ServiceState {
        self.inner.core.lock().await.state.clone()
    }

    pub async fn log_path(&self) -> PathBuf {
        self.inner.core.lock().await.log.path().to_path_buf()
    }

    /// Validates the request, records the run and launches the workflow on
    /// a blocking worker. Returns the run id immediately.
    pub async fn start_run(&self, req: StartRunRequest) -> Result<String, ServiceError> {
        build_workflow(&req.config, false).map_err(|e| ServiceError::BadConfig(e.to_string()))?;
        req.dataset.check().map_err(|e| ServiceError::BadDataset(e.to_string()))?;
        let id = self.inner.ids.next_id();
        let qtable = {
            let mut core = self.inner.core.lock().await;
            let Core { state, log } = &mut *core;
            let run = RunRecord {
                id: id.clone(),
                dataset: req.dataset.clone(),
                config: req.config.clone(),
                status: RunStatus::Running,
                created_us: chrono::Utc::now().timestamp_micros(),
                finished_us: None,
                decision: None,
                error: None,
                anomaly_count: 0,
                report_ids: Vec::new(),
            };
            log.commit(state, Mutation::RunStarted { run })?;
            state.qtable.clone()
        };
        info!(run = %id, "run started");
        let svc = self.clone();
        let run_id = id.clone();
        tokio::spawn(async move {
            let dir = svc.inner.data_dir.join("runs").join(&run_id);
            let rid = run_id.clone();
            let outcome = tokio::task::spawn_blocking(move || {
                run_workflow(&rid, req.dataset, req.config, Some(qtable), Some(dir), None).0
            })
            .await;
            if let Err(e) = svc.finish_run(&run_id, outcome.map_err(|e| e.to_string())).await {
                error!(run = %run_id, error = %e, "could not record run result");
            }
        });
        Ok(id)
    }

    async fn finish_run(&self, run_id: &str, outcome: Result<WorkflowState, String>) -> Result<(), ServiceError> {
        let mut core = self.inner.core.lock().await;
        let Core { state, log } = &mut *core;
        let now = chrono::Utc::now().timestamp_micros();
        let wf = match outcome {
            Ok(wf) => wf,
            Err(e) => {
                log.commit(
                    state,
                    Mutation::RunFinished {
                        run_id: run_id.to_string(),
                        status: RunStatus::Failed,
                        finished_us: now,
                        decision: None,
                        error: Some(format!("worker crashed: {e}")),
                        anomaly_count: 0,
                        series: Vec::new(),
                    },
                )?;
                return Ok(());
            }
        };
        for e in &wf.anomalies {
            let mut event = e.clone();
            event.id = scoped_event_id(run_id, &e.id);
            log.commit(
                state,
                Mutation::AnomalyFlagged {
                    item: AnomalyItem {
                        run_id: run_id.to_string(),
                        event,
                    },
                },
            )?;
        }
        for r in &wf.reports {
            let mut report = r.clone();
            report.event_id = scoped_event_id(run_id, &r.event_id);
            log.commit(
                state,
                Mutation::ReportGenerated {
                    run_id: run_id.to_string(),
                    report,
                },
            )?;
        }
        let status = if wf.phase == Phase::Completed {
            RunStatus::Completed
        } else {
            RunStatus::Failed
        };
        log.commit(
            state,
            Mutation::RunFinished {
                run_id: run_id.to_string(),
                status,
                finished_us: now,
                decision: wf.decision.clone(),
                error: wf.failure.clone(),
                anomaly_count: wf.anomalies.len(),
                series: wf.series,
            },
        )?;
        info!(run = %run_id, ?status, anomalies = wf.anomalies.len(), "run finished");
        Ok(())
    }

    pub async fn run(&self, id: &str) -> Result<RunRecord, ServiceError> {
        let core = self.inner.core.lock().await;
        core.state
            .runs
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownRun(id.to_string()))
    }

    pub async fn runs(&self) -> Vec<RunRecord> {
        self.inner.core.lock().await.state.runs.values().cloned().collect()
    }

    /// Open events by default (`pending` covers info-requested too); sorted
    /// by timestamp, then id.
    pub async fn anomalies(&self, query: &AnomalyQuery) -> Result<Vec<AnomalyItem>, ServiceError> {
        let core = self.inner.core.lock().await;
        if let Some(run) = &query.run {
            if !core.state.runs.contains_key(run) {
                return Err(ServiceError::UnknownRun(run.clone()));
            }
        }
        let filter = query.status.as_deref().unwrap_or("pending").to_ascii_lowercase();
        let keep = |s: EventStatus| -> Result<bool, ServiceError> {
            Ok(match filter.as_str() {
                "pending" | "open" => s.is_open(),
                "all" => true,
                other => s == other.parse::<EventStatus>().map_err(|e| ServiceError::BadRequest(e.to_string()))?,
            })
        };
        let mut out = Vec::new();
        for item in core.state.anomalies.values() {
            if query.run.as_ref().is_some_and(|r| *r != item.run_id) {
                continue;
            }
            if keep(item.event.status)? {
                out.push(item.clone());
            }
        }
        out.sort_by(|a, b| (a.event.timestamp_us, &a.event.id).cmp(&(b.event.timestamp_us, &b.event.id)));
        Ok(out)
    }

    /// Applies an operator verdict to the event's proposed action, updates
    /// the shared table and, for confirmed events, regenerates the report.
    pub async fn submit_feedback(
        &self,
        event_id: &str,
        signal: FeedbackSignal,
    ) -> Result<FeedbackResponse, ServiceError> {
        let mut core = self.inner.core.lock().await;
        let Core { state, log } = &mut *core;
        let item = state
            .anomalies
            .get(event_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownEvent(event_id.to_string()))?;
        if !item.event.status.is_open() {
            return Err(ServiceError::AlreadyResolved {
                id: event_id.to_string(),
                status: item.event.status,
            });
        }
        let run = state
            .runs
            .get(&item.run_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownRun(item.run_id.clone()))?;
        let hyper = run.config.q;
        let severity = item
            .event
            .severity
            .unwrap_or_else(|| telewatch_core::verify::severity_of(&item.event, &run.config.rubric));
        let action = item.event.proposed_action.unwrap_or_else(|| state.qtable.greedy(severity));
        let mut table: QTable = state.qtable.clone();
        let update = apply_feedback(&mut table, severity, action, signal.verdict, &hyper);
        let status = resolve_status(action, signal.verdict);
        let next_action = (status == EventStatus::InfoRequested).then(|| follow_up_action(&table, severity));

        log.commit(
            state,
            Mutation::FeedbackReceived {
                run_id: item.run_id.clone(),
                event_id: event_id.to_string(),
                signal: signal.clone(),
                action,
                status,
                next_action,
            },
        )?;
        log.commit(state, Mutation::QtableUpdated { update, qtable: table })?;

        let mut report_id = None;
        if status == EventStatus::Confirmed {
            let mut event = state.anomalies[event_id].event.clone();
            event.severity = Some(severity);
            let backend = run.config.backend.clone();
            let verdict = signal.verdict;
            let report: DiscrepancyReport =
                tokio::task::spawn_blocking(move || generate_report(&event, Some(verdict), &backend))
                    .await
                    .map_err(|e| ServiceError::Internal(e.to_string()))?;
            report_id = Some(report.event_id.clone());
            log.commit(
                state,
                Mutation::ReportGenerated {
                    run_id: item.run_id.clone(),
                    report,
                },
            )?;
        }
        Ok(FeedbackResponse {
            event_id: event_id.to_string(),
            status,
            action,
            update,
            next_action,
            report_id,
        })
    }

    pub async fn report(&self, id: &str) -> Result<DiscrepancyReport, ServiceError> {
        let core = self.inner.core.lock().await;
        core.state
            .reports
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownReport(id.to_string()))
    }

    /// Error series of one track of a run. The key may be omitted when the
    /// run scored a single track.
    pub async fn errors(&self, run_id: &str, key: Option<TrackKey>) -> Result<TrackErrors, ServiceError> {
        let core = self.inner.core.lock().await;
        if !core.state.runs.contains_key(run_id) {
            return Err(ServiceError::UnknownRun(run_id.to_string()));
        }
        let series = core.state.series.get(run_id).map(Vec::as_slice).unwrap_or(&[]);
        match key {
            Some(k) => series
                .iter()
                .find(|s| s.key == k)
                .cloned()
                .ok_or_else(|| ServiceError::UnknownTrack(k.to_string())),
            None if series.len() == 1 => Ok(series[0].clone()),
            None if series.is_empty() => Err(ServiceError::UnknownTrack(format!("run {run_id} has no scored tracks"))),
            None => Err(ServiceError::BadRequest("run has several tracks; pass dss and scid".into())),
        }
    }

    pub async fn qtable(&self) -> QTable {
        self.inner.core.lock().await.state.qtable.clone()
    }
}
