//! Append-only JSON-lines event log. Service state changes only by applying
//! log events, so replaying a log reproduces the live state exactly.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use telewatch_core::agent::TrackErrors;
use telewatch_core::api::{AnomalyItem, RunRecord, RunStatus};
use telewatch_core::detect::EventStatus;
use telewatch_core::report::DiscrepancyReport;
use telewatch_core::verify::{Action, FeedbackSignal, QHyper, QTable, QUpdate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum Mutation {
    RunStarted {
        run: RunRecord,
    },
    AnomalyFlagged {
        item: AnomalyItem,
    },
    FeedbackReceived {
        run_id: String,
        event_id: String,
        signal: FeedbackSignal,
        action: Action,
        status: EventStatus,
        next_action: Option<Action>,
    },
    QtableUpdated {
        update: QUpdate,
        qtable: QTable,
    },
    ReportGenerated {
        run_id: String,
        report: DiscrepancyReport,
    },
    RunFinished {
        run_id: String,
        status: RunStatus,
        finished_us: i64,
        decision: Option<String>,
        error: Option<String>,
        anomaly_count: usize,
        series: Vec<TrackErrors>,
    },
}

impl Mutation {
    pub fn kind(&self) -> &'static str {
        match self {
            Mutation::RunStarted { .. } => "run-started",
            Mutation::AnomalyFlagged { .. } => "anomaly-flagged",
            Mutation::FeedbackReceived { .. } => "feedback-received",
            Mutation::QtableUpdated { .. } => "qtable-updated",
            Mutation::ReportGenerated { .. } => "report-generated",
            Mutation::RunFinished { .. } => "run-finished",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub seq: u64,
    pub instant_us: i64,
    #[serde(flatten)]
    pub mutation: Mutation,
}

/// Everything the API serves, rebuilt from the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceState {
    pub last_seq: u64,
    pub runs: BTreeMap<String, RunRecord>,
    pub anomalies: BTreeMap<String, AnomalyItem>,
    pub reports: BTreeMap<String, DiscrepancyReport>,
    pub series: BTreeMap<String, Vec<TrackErrors>>,
    pub qtable: QTable,
}

impl Default for ServiceState {
    fn default() -> Self {
        Self {
            last_seq: 0,
            runs: BTreeMap::new(),
            anomalies: BTreeMap::new(),
            reports: BTreeMap::new(),
            series: BTreeMap::new(),
            qtable: QTable::new(&QHyper::default()),
        }
    }
}

impl ServiceState {
    pub fn apply(&mut self, event: &LogEvent) {
        self.last_seq = event.seq;
        match &event.mutation {
            Mutation::RunStarted { run } => {
                self.runs.insert(run.id.clone(), run.clone());
            }
            Mutation::AnomalyFlagged { item } => {
                self.anomalies.insert(item.event.id.clone(), item.clone());
            }
            Mutation::FeedbackReceived {
                event_id,
                status,
                next_action,
                ..
            } => {
                if let Some(item) = self.anomalies.get_mut(event_id) {
                    item.event.status = *status;
                    if next_action.is_some() {
                        item.event.proposed_action = *next_action;
                    }
                }
            }
            Mutation::QtableUpdated { qtable, .. } => self.qtable = qtable.clone(),
            Mutation::ReportGenerated { run_id, report } => {
                if let Some(run) = self.runs.get_mut(run_id) {
                    if !run.report_ids.contains(&report.event_id) {
                        run.report_ids.push(report.event_id.clone());
                    }
                }
                self.reports.insert(report.event_id.clone(), report.clone());
            }
            Mutation::RunFinished {
                run_id,
                status,
                finished_us,
                decision,
                error,
                anomaly_count,
                series,
            } => {
                if let Some(run) = self.runs.get_mut(run_id) {
                    run.status = *status;
                    run.finished_us = Some(*finished_us);
                    run.decision = decision.clone();
                    run.error = error.clone();
                    run.anomaly_count = *anomaly_count;
                }
                self.series.insert(run_id.clone(), series.clone());
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("corrupt log entry at seq {seq}: {reason}")]
    CorruptLog {
        seq: u64,
        reason: String,
        /// State after the last good entry.
        partial: Box<ServiceState>,
        /// Byte length of the intact prefix.
        good_bytes: u64,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T, E = ReplayError> = std::result::Result<T, E>;

/// Applies every entry of `path` to `base` (entries at or below
/// `base.last_seq` are skipped). A missing file replays to `base`.
pub fn replay_from(path: &Path, base: ServiceState) -> Result<ServiceState> {
    let mut state = base;
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(state),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut good_bytes = 0u64;
    let mut expected = None::<u64>;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let seq_guess = expected.unwrap_or(state.last_seq + 1);
        let corrupt = |reason: String, state: &ServiceState| ReplayError::CorruptLog {
            seq: seq_guess,
            reason,
            partial: Box::new(state.clone()),
            good_bytes,
        };
        if !line.ends_with('\n') {
            return Err(corrupt("truncated line".into(), &state));
        }
        if line.trim().is_empty() {
            good_bytes += n as u64;
            continue;
        }
        let event: LogEvent = serde_json::from_str(line.trim_end()).map_err(|e| corrupt(e.to_string(), &state))?;
        if let Some(exp) = expected {
            if event.seq != exp {
                return Err(corrupt(format!("expected seq {exp}, found {}", event.seq), &state));
            }
        }
        expected = Some(event.seq + 1);
        if event.seq > state.last_seq {
            state.apply(&event);
        }
        good_bytes += n as u64;
    }
    Ok(state)
}

/// Rebuilds state from the whole log.
pub fn replay_log(path: &Path) -> Result<ServiceState> {
    replay_from(path, ServiceState::default())
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    state: ServiceState,
}

/// Open log plus its periodic snapshot.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    snapshot_path: PathBuf,
    file: File,
    next_seq: u64,
    snapshot_every: u64,
}

pub const SNAPSHOT_EVERY: u64 = 100;

impl EventLog {
    /// Opens (or creates) `dir/events.jsonl`, recovering state from the
    /// snapshot plus the log tail. A corrupt tail is cut off so appends
    /// continue from the last good entry.
    pub fn open(dir: &Path) -> Result<(Self, ServiceState, Option<String>)> {
        fs::create_dir_all(dir)?;
        let path = dir.join("events.jsonl");
        let snapshot_path = dir.join("snapshot.json");
        let base = match fs::read_to_string(&snapshot_path) {
            Ok(text) => {
                serde_json::from_str::<Snapshot>(&text)
                    .map_err(|e| ReplayError::Snapshot(e.to_string()))?
                    .state
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => ServiceState::default(),
            Err(e) => return Err(e.into()),
        };
        let (state, warning) = match replay_from(&path, base) {
            Ok(s) => (s, None),
            Err(ReplayError::CorruptLog {
                seq,
                reason,
                partial,
                good_bytes,
            }) => {
                let f = OpenOptions::new().write(true).open(&path)?;
                f.set_len(good_bytes)?;
                (*partial, Some(format!("dropped corrupt log tail at seq {seq}: {reason}")))
            }
            Err(e) => return Err(e),
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let log = EventLog {
            path,
            snapshot_path,
            file,
            next_seq: state.last_seq + 1,
            snapshot_every: SNAPSHOT_EVERY,
        };
        Ok((log, state, warning))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one entry, applies it to `state`, and snapshots periodically.
    pub fn commit(&mut self, state: &mut ServiceState, mutation: Mutation) -> Result<LogEvent> {
        let event = LogEvent {
            seq: self.next_seq,
            instant_us: chrono::Utc::now().timestamp_micros(),
            mutation,
        };
        let mut line = serde_json::to_string(&event).map_err(std::io::Error::from)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.next_seq += 1;
        state.apply(&event);
        if event.seq % self.snapshot_every == 0 {
            self.snapshot(state)?;
        }
        Ok(event)
    }

    fn snapshot(&self, state: &ServiceState) -> Result<()> {
        let tmp = self.snapshot_path.with_extension("json.tmp");
        let snap = Snapshot { state: state.clone() };
        fs::write(&tmp, serde_json::to_vec(&snap).map_err(std::io::Error::from)?)?;
        fs::rename(&tmp, &self.snapshot_path)?;
        Ok(())
    }
}
