//! Deterministic workflow graph: ingest, preprocess, score, verify, explain,
//! plan, human feedback and report, with one bounded feedback/verify loop.
//!
//! Node transforms operate on a serialisable [`WorkflowState`] plus a
//! [`Runtime`] holding the bulky intermediates (frames, windows, the model)
//! that do not belong in `state.json`.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::detect::{
    attach_context, compute_threshold, flag_anomalies, AnomalyEvent, ContextColumns, DetectError, ErrorSeries,
    EventStatus, ThresholdMethod,
};
use crate::nn::{feature_errors, save_checkpoint, train, ModelConfig, NnError, OptimHyper, TrainedModel};
use crate::preprocess::{
    apply_minmax, chrono_split, fit_isolation_forest, fit_minmax, iforest_scores, make_windows, outlier_rows,
    Direction, ForestConfig, PreprocessArtifact, PreprocessError, WindowBatch, WindowSpec,
};
use crate::report::{generate_report, render_report_markdown, DiscrepancyReport, ReasoningBackend};
use crate::synthetic::{generate, SyntheticSpec};
use crate::track::{impute_missing, read_frames_csv, ImputePolicy, Provenance, TrackError, TrackFrame, TrackKey};
use crate::verify::{
    apply_feedback, choose_action, follow_up_action, resolve_status, severity_of, Action, FeedbackSignal, QHyper,
    QTable, QUpdate, Severity, SeverityRubric,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("dataset: {0}")]
    BadDataset(String),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("node {node} panicked: {message}")]
    NodePanic { node: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetRef {
    /// Canonical track CSV (`timestamp_us,dss,scid,<features>`).
    Csv { path: PathBuf },
    Synthetic { spec: SyntheticSpec },
}

impl DatasetRef {
    /// Cheap readability check done before a run is launched.
    pub fn check(&self) -> Result<(), AgentError> {
        match self {
            DatasetRef::Csv { path } => {
                let meta = fs::metadata(path).map_err(|e| AgentError::BadDataset(format!("{}: {e}", path.display())))?;
                if !meta.is_file() {
                    return Err(AgentError::BadDataset(format!("{} is not a file", path.display())));
                }
                Ok(())
            }
            DatasetRef::Synthetic { spec } => spec.validate().map_err(AgentError::BadDataset),
        }
    }

    pub fn load(&self) -> Result<BTreeMap<TrackKey, TrackFrame>, AgentError> {
        match self {
            DatasetRef::Csv { path } => {
                let file = fs::File::open(path).map_err(|e| AgentError::BadDataset(format!("{}: {e}", path.display())))?;
                Ok(read_frames_csv(std::io::BufReader::new(file), Provenance::AntennaDataset)?)
            }
            DatasetRef::Synthetic { spec } => {
                let track = generate(spec).map_err(AgentError::BadDataset)?;
                Ok(BTreeMap::from([(track.frame.key, track.frame)]))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdScope {
    #[default]
    PerTrack,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Modelled feature columns; empty selects every non-context column.
    pub features: Vec<String>,
    pub context: ContextColumns,
    pub impute: ImputePolicy,
    pub window: WindowSpec,
    pub train_fraction: f64,
    pub forest: ForestConfig,
    /// Sizes that depend on the data (`input_size`, `output_size`, `seq_len`)
    /// are overwritten from the feature list and window.
    pub model: ModelConfig,
    pub optim: OptimHyper,
    pub threshold: ThresholdMethod,
    pub threshold_scope: ThresholdScope,
    pub rubric: SeverityRubric,
    pub q: QHyper,
    pub backend: ReasoningBackend,
    pub max_feedback_rounds: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            features: Vec::new(),
            context: ContextColumns::default(),
            impute: ImputePolicy::default(),
            window: WindowSpec {
                length: 32,
                stride: 1,
                horizon: 1,
            },
            train_fraction: 0.8,
            forest: ForestConfig::default(),
            model: ModelConfig::default(),
            optim: OptimHyper::default(),
            threshold: ThresholdMethod::default(),
            threshold_scope: ThresholdScope::default(),
            rubric: SeverityRubric::default(),
            q: QHyper::default(),
            backend: ReasoningBackend::Template,
            max_feedback_rounds: 3,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Small network and short schedule for laptop-scale runs and tests.
    pub fn desk() -> Self {
        Self {
            window: WindowSpec {
                length: 16,
                stride: 1,
                horizon: 1,
            },
            model: ModelConfig {
                hidden_size: 16,
                n_layers: 1,
                dropout: 0.0,
                ..ModelConfig::default()
            },
            optim: OptimHyper {
                lr: 1e-2,
                epochs: 20,
                ..OptimHyper::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::BadConfig(m));
        self.window.validate()?;
        self.forest.validate()?;
        self.optim.validate()?;
        self.q.validate().map_err(AgentError::BadConfig)?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        match self.threshold {
            ThresholdMethod::MeanKSigma { k } if !k.is_finite() => return bad("k must be finite".into()),
            ThresholdMethod::Percentile { p } if !(0.0..=100.0).contains(&p) => {
                return bad(format!("percentile must lie in [0, 100], got {p}"))
            }
            _ => {}
        }
        let probe = ModelConfig {
            input_size: self.features.len().max(1),
            output_size: self.features.len().max(1),
            seq_len: self.window.length,
            ..self.model.clone()
        };
        probe.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Ingest,
    Preprocess,
    Score,
    Verify,
    Explain,
    Plan,
    HumanFeedback,
    Report,
}

impl NodeKind {
    pub const ORDER: [NodeKind; 8] = [
        NodeKind::Ingest,
        NodeKind::Preprocess,
        NodeKind::Score,
        NodeKind::Verify,
        NodeKind::Explain,
        NodeKind::Plan,
        NodeKind::HumanFeedback,
        NodeKind::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Ingest => "ingest",
            NodeKind::Preprocess => "preprocess",
            NodeKind::Score => "score",
            NodeKind::Verify => "verify",
            NodeKind::Explain => "explain",
            NodeKind::Plan => "plan",
            NodeKind::HumanFeedback => "human_feedback",
            NodeKind::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub kind: NodeKind,
    pub skippable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workflow {
    pub nodes: Vec<NodeSpec>,
    /// Upper bound on jumps from human feedback back to verify.
    pub max_feedback_rounds: usize,
}

pub fn build_workflow(config: &RunConfig, has_feedback: bool) -> Result<Workflow, AgentError> {
    config.validate()?;
    Ok(Workflow {
        nodes: NodeKind::ORDER
            .iter()
            .map(|&kind| NodeSpec {
                kind,
                skippable: kind == NodeKind::HumanFeedback && !has_feedback,
            })
            .collect(),
        max_feedback_rounds: config.max_feedback_rounds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub instant_us: i64,
    pub node: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub event_id: String,
    pub action: Action,
    pub signal: FeedbackSignal,
    pub update: QUpdate,
    pub status: EventStatus,
}

/// Error series of one scored track, ready for charting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackErrors {
    pub key: TrackKey,
    pub errors: Vec<f64>,
    /// Instant of the last row each window scores.
    pub timestamps_us: Vec<i64>,
    pub threshold: f64,
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub run_id: String,
    pub seed: u64,
    pub dataset: DatasetRef,
    pub config: RunConfig,
    pub cursor: usize,
    pub phase: Phase,
    pub qtable: QTable,
    pub anomalies: Vec<AnomalyEvent>,
    pub series: Vec<TrackErrors>,
    pub logs: Vec<LogLine>,
    pub messages: Vec<Message>,
    pub decision: Option<String>,
    pub feedback: Vec<FeedbackRecord>,
    pub feedback_rounds: usize,
    pub artifacts: BTreeMap<String, String>,
    pub reports: Vec<DiscrepancyReport>,
    pub failure: Option<String>,
}

impl WorkflowState {
    pub fn new(run_id: impl Into<String>, dataset: DatasetRef, mut config: RunConfig, qtable: Option<QTable>) -> Self {
        let qtable = qtable.unwrap_or_else(|| QTable::new(&config.q));
        config.forest.seed = config.seed;
        config.model.seed = config.seed;
        Self {
            run_id: run_id.into(),
            seed: config.seed,
            dataset,
            config,
            cursor: 0,
            phase: Phase::Running,
            qtable,
            anomalies: Vec::new(),
            series: Vec::new(),
            logs: Vec::new(),
            messages: Vec::new(),
            decision: None,
            feedback: Vec::new(),
            feedback_rounds: 0,
            artifacts: BTreeMap::new(),
            reports: Vec::new(),
            failure: None,
        }
    }

    fn log(&mut self, node: &str, text: impl Into<String>) {
        let text = text.into();
        info!(run = %self.run_id, node, "{text}");
        self.logs.push(LogLine {
            instant_us: chrono::Utc::now().timestamp_micros(),
            node: node.to_string(),
            text,
        });
    }

    pub fn event(&self, id: &str) -> Option<&AnomalyEvent> {
        self.anomalies.iter().find(|e| e.id == id)
    }
}

/// Operator verdicts consumed by the human-feedback node.
pub trait FeedbackSource: Send {
    fn next(&mut self, event: &AnomalyEvent) -> Option<FeedbackSignal>;
}

pub struct NoFeedback;

impl FeedbackSource for NoFeedback {
    fn next(&mut self, _: &AnomalyEvent) -> Option<FeedbackSignal> {
        None
    }
}

/// Pre-recorded signals per event id, consumed in order.
#[derive(Debug, Default)]
pub struct QueuedFeedback {
    queue: HashMap<String, VecDeque<FeedbackSignal>>,
}

impl QueuedFeedback {
    pub fn push(&mut self, event_id: impl Into<String>, signal: FeedbackSignal) {
        self.queue.entry(event_id.into()).or_default().push_back(signal);
    }
}

impl FeedbackSource for QueuedFeedback {
    fn next(&mut self, event: &AnomalyEvent) -> Option<FeedbackSignal> {
        self.queue.get_mut(&event.id)?.pop_front()
    }
}

/// Answers from a closure, typically a ground-truth labeller.
pub struct OracleFeedback<F>(pub F);

impl<F> FeedbackSource for OracleFeedback<F>
where
    F: FnMut(&AnomalyEvent) -> Option<FeedbackSignal> + Send,
{
    fn next(&mut self, event: &AnomalyEvent) -> Option<FeedbackSignal> {
        (self.0)(event)
    }
}

struct Prepared {
    key: TrackKey,
    frame: TrackFrame,
    windows: WindowBatch,
}

/// Non-serialised working data of one run.
pub struct Runtime {
    run_dir: Option<PathBuf>,
    feedback: Box<dyn FeedbackSource>,
    rng: ChaCha8Rng,
    frames: BTreeMap<TrackKey, TrackFrame>,
    prepared: Vec<Prepared>,
    train: Vec<WindowBatch>,
    val: Vec<WindowBatch>,
    model: Option<TrainedModel>,
}

impl Runtime {
    pub fn new(seed: u64, run_dir: Option<PathBuf>, feedback: Box<dyn FeedbackSource>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Self {
            run_dir,
            feedback,
            rng,
            frames: BTreeMap::new(),
            prepared: Vec::new(),
            train: Vec::new(),
            val: Vec::new(),
            model: None,
        }
    }

    pub fn model(&self) -> Option<&TrainedModel> {
        self.model.as_ref()
    }

    fn write(&self, state: &mut WorkflowState, name: &str, rel: &str, contents: &str) -> Result<(), AgentError> {
        if let Some(dir) = &self.run_dir {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, contents)?;
            state.artifacts.insert(name.to_string(), rel.to_string());
        }
        Ok(())
    }
}

fn concat(batches: &[WindowBatch]) -> Option<WindowBatch> {
    let first = batches.first()?;
    let data = concatenate(Axis(0), &batches.iter().map(|b| b.data.view()).collect::<Vec<_>>()).ok()?;
    let targets = match first.targets {
        Some(_) => Some(
            concatenate(
                Axis(0),
                &batches.iter().filter_map(|b| b.targets.as_ref().map(|t| t.view())).collect::<Vec<_>>(),
            )
            .ok()?,
        ),
        None => None,
    };
    Some(WindowBatch {
        data,
        targets,
        index_map: batches.iter().flat_map(|b| b.index_map.iter().cloned()).collect(),
        features: first.features.clone(),
    })
}

fn node_ingest(state: &mut WorkflowState, rt: &mut Runtime) -> Result<(), AgentError> {
    let frames = state.dataset.load()?;
    if frames.is_empty() {
        return Err(AgentError::BadDataset("dataset holds no tracks".into()));
    }
    let rows: usize = frames.values().map(TrackFrame::n_rows).sum();
    state.log("ingest", format!("loaded {} tracks, {rows} rows", frames.len()));
    let csv = crate::track::frames_to_csv_string(frames.values());
    rt.write(state, "frames", "frames.csv", &csv)?;
    rt.frames = frames;
    Ok(())
}

fn feature_list(config: &RunConfig, frames: &BTreeMap<TrackKey, TrackFrame>) -> Vec<String> {
    if !config.features.is_empty() {
        return config.features.clone();
    }
    let ctx = &config.context;
    let context: Vec<&str> = [&ctx.wind, &ctx.rain, &ctx.temperature, &ctx.humidity]
        .into_iter()
        .filter_map(|c| c.as_deref())
        .collect();
    let mut out: Vec<String> = Vec::new();
    for f in frames.values() {
        for c in &f.columns {
            if !context.contains(&c.name.as_str()) && !out.contains(&c.name) {
                out.push(c.name.clone());
            }
        }
    }
    out
}

fn node_preprocess(state: &mut WorkflowState, rt: &mut Runtime) -> Result<(), AgentError> {
    let features = feature_list(&state.config, &rt.frames);
    if features.is_empty() {
        return Err(AgentError::BadDataset("no feature columns to model".into()));
    }
    state.config.features = features.clone();
    state.config.model.input_size = features.len();
    state.config.model.output_size = features.len();
    state.config.model.seq_len = state.config.window.length;
    state.config.model.validate()?;
    let cfg = state.config.clone();

    let frames = std::mem::take(&mut rt.frames);
    for (key, raw) in &frames {
        if let Some(missing) = features.iter().find(|f| raw.column(f).is_none()) {
            state.log("preprocess", format!("{key}: skipped, column {missing} absent"));
            continue;
        }
        let frame = impute_missing(raw, cfg.impute);
        if cfg.window.count(frame.n_rows()) < 2 {
            state.log("preprocess", format!("{key}: skipped, {} rows are too few for windows", frame.n_rows()));
            continue;
        }
        let scaler = fit_minmax(&frame, &features)?;
        let scaled = apply_minmax(&frame, &scaler, Direction::Forward)?;
        let rows = scaled.dense_rows(&features)?;
        let forest = fit_isolation_forest(&rows, &cfg.forest)?;
        let mut outliers = outlier_rows(&iforest_scores(&forest, &rows), cfg.forest.contamination);
        outliers.sort_unstable();
        let windows = make_windows(&scaled, &features, &cfg.window)?;
        let clean = windows.without_rows(&outliers);
        state.log(
            "preprocess",
            format!(
                "{key}: {} rows, {} outlier rows, {} windows ({} clean)",
                frame.n_rows(),
                outliers.len(),
                windows.len(),
                clean.len()
            ),
        );
        if clean.len() >= 2 {
            let (tr, va) = chrono_split(&clean, cfg.train_fraction)?;
            rt.train.push(tr);
            rt.val.push(va);
        }
        let artifact = PreprocessArtifact::new(Some(scaler), None);
        rt.write(
            state,
            &format!("preprocess/{}-{}", key.dss, key.scid),
            &format!("checkpoints/preprocess-{}-{}.json", key.dss, key.scid),
            &artifact.to_json(),
        )?;
        rt.prepared.push(Prepared {
            key: *key,
            frame,
            windows,
        });
    }
    rt.frames = frames;
    if rt.train.is_empty() {
        return Err(AgentError::BadDataset("no track yields enough clean windows to train".into()));
    }
    Ok(())
}

fn node_score(state: &mut WorkflowState, rt: &mut Runtime) -> Result<(), AgentError> {
    let cfg = state.config.clone();
    let train_set = concat(&rt.train).ok_or(NnError::EmptyBatch)?;
    let val_set = concat(&rt.val).ok_or(NnError::EmptyBatch)?;
    let model = train(&cfg.model, &cfg.optim, &train_set, &val_set)?;
    if let (Some(first), Some(last)) = (model.history.first(), model.history.last()) {
        state.log(
            "score",
            format!(
                "trained {} on {} windows for {} epochs, validation loss {:.6} -> {:.6}",
                cfg.model.kind,
                train_set.len(),
                model.history.len(),
                first.val,
                last.val
            ),
        );
    }
    rt.write(state, "checkpoint", "checkpoints/model.json", &save_checkpoint(&model))?;

    let horizon = cfg.window.horizon;
    let mut scored = Vec::with_capacity(rt.prepared.len());
    for p in &rt.prepared {
        let fe = feature_errors(&model, &p.windows)?;
        let errors: Vec<f64> = fe.iter().map(|f| f.iter().sum::<f64>() / f.len() as f64).collect();
        let series = ErrorSeries {
            model: cfg.model.kind,
            errors,
            feature_errors: fe,
            features: cfg.features.clone(),
            index_map: p.windows.index_map.iter().map(|r| r.start..r.end + horizon).collect(),
        };
        scored.push(series);
    }
    let global = match cfg.threshold_scope {
        ThresholdScope::Global => {
            let all: Vec<f64> = scored.iter().flat_map(|s| s.errors.iter().copied()).collect();
            Some(compute_threshold(&all, cfg.threshold)?)
        }
        ThresholdScope::PerTrack => None,
    };

    let mut events = Vec::new();
    for (p, series) in rt.prepared.iter().zip(&scored) {
        let threshold = match global {
            Some(t) => t,
            None => compute_threshold(&series.errors, cfg.threshold)?,
        };
        let flagged_events = flag_anomalies(series, threshold, &p.frame);
        let flagged: Vec<usize> = flagged_events.iter().map(|e| e.window).collect();
        state.log(
            "score",
            format!("{}: threshold {threshold:.6}, {} of {} windows flagged", p.key, flagged.len(), series.errors.len()),
        );
        for e in flagged_events {
            events.push(attach_context(&e, &p.frame, &cfg.context)?);
        }
        state.series.push(TrackErrors {
            key: p.key,
            timestamps_us: series.index_map.iter().map(|r| p.frame.timestamps[r.end - 1]).collect(),
            errors: series.errors.clone(),
            threshold,
            flagged,
        });
    }
    events.sort_by(|a, b| (a.timestamp_us, &a.id).cmp(&(b.timestamp_us, &b.id)));
    state.anomalies = events;
    rt.model = Some(model);
    Ok(())
}

fn node_verify(state: &mut WorkflowState, rt: &mut Runtime) -> Result<(), AgentError> {
    let rubric = state.config.rubric;
    let (mut fresh, mut follow) = (0, 0);
    for i in 0..state.anomalies.len() {
        let e = &state.anomalies[i];
        match e.status {
            EventStatus::Pending if e.proposed_action.is_none() => {
                let sev = severity_of(e, &rubric);
                let action = choose_action(&state.qtable, sev, &mut rt.rng);
                let e = &mut state.anomalies[i];
                e.severity = Some(sev);
                e.proposed_action = Some(action);
                fresh += 1;
            }
            EventStatus::InfoRequested if e.proposed_action == Some(Action::RequestInfo) => {
                let sev = e.severity.unwrap_or_else(|| severity_of(e, &rubric));
                let action = follow_up_action(&state.qtable, sev);
                state.anomalies[i].proposed_action = Some(action);
                follow += 1;
            }
            _ => {}
        }
    }
    state.log("verify", format!("rated {fresh} new events, re-proposed {follow} after information requests"));
    Ok(())
}

fn node_explain(state: &mut WorkflowState, _: &mut Runtime) -> Result<(), AgentError> {
    let text = if state.anomalies.is_empty() {
        "No window exceeded its threshold.".to_string()
    } else {
        state
            .anomalies
            .iter()
            .map(|e| {
                format!(
                    "{} {}: error {:.6} vs threshold {:.6} ({:.2}x), severity {}, proposed {}",
                    e.id,
                    e.key,
                    e.error,
                    e.threshold,
                    e.error / e.threshold,
                    e.severity.map(Severity::as_str).unwrap_or("unrated"),
                    e.proposed_action.map(|a| a.as_str()).unwrap_or("none"),
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    state.messages.push(Message {
        role: "assistant".into(),
        text,
    });
    let n = state.anomalies.len();
    state.log("explain", format!("explained {n} anomalies"));
    Ok(())
}

fn count<T>(items: &[T], pred: impl Fn(&T) -> bool) -> usize {
    items.iter().filter(|x| pred(x)).count()
}

fn node_plan(state: &mut WorkflowState, _: &mut Runtime) -> Result<(), AgentError> {
    let a = &state.anomalies;
    let decision = if a.is_empty() {
        "no anomalies detected".to_string()
    } else {
        let tracks: std::collections::BTreeSet<TrackKey> = a.iter().map(|e| e.key).collect();
        format!(
            "{} anomalies on {} tracks; proposed {} confirm, {} reject, {} request-info; severity {} high, {} medium, {} low",
            a.len(),
            tracks.len(),
            count(a, |e| e.proposed_action == Some(Action::Confirm)),
            count(a, |e| e.proposed_action == Some(Action::Reject)),
            count(a, |e| e.proposed_action == Some(Action::RequestInfo)),
            count(a, |e| e.severity == Some(Severity::High)),
            count(a, |e| e.severity == Some(Severity::Medium)),
            count(a, |e| e.severity == Some(Severity::Low)),
        )
    };
    state.log("plan", format!("decision: {decision}"));
    state.decision = Some(decision);
    Ok(())
}

fn node_feedback(state: &mut WorkflowState, rt: &mut Runtime) -> Result<(), AgentError> {
    state.feedback_rounds += 1;
    let hyper = state.config.q;
    let mut applied = 0;
    for i in 0..state.anomalies.len() {
        let e = &state.anomalies[i];
        let (Some(action), Some(sev)) = (e.proposed_action, e.severity) else {
            continue;
        };
        if !e.status.is_open() {
            continue;
        }
        // An information request stays open until the follow-up proposal.
        if e.status == EventStatus::InfoRequested && action == Action::RequestInfo {
            continue;
        }
        let Some(signal) = rt.feedback.next(e) else {
            continue;
        };
        let update = apply_feedback(&mut state.qtable, sev, action, signal.verdict, &hyper);
        let status = resolve_status(action, signal.verdict);
        let e = &mut state.anomalies[i];
        if e.status != status {
            e.transition(status)?;
        }
        state.feedback.push(FeedbackRecord {
            event_id: e.id.clone(),
            action,
            signal,
            update,
            status,
        });
        applied += 1;
    }
    let round = state.feedback_rounds;
    state.log("human_feedback", format!("round {round}: applied {applied} verdicts"));
    Ok(())
}

fn node_report(state: &mut WorkflowState, rt: &mut Runtime) -> Result<(), AgentError> {
    let backend = state.config.backend.clone();
    let verdicts: HashMap<&str, _> = state
        .feedback
        .iter()
        .map(|f| (f.event_id.as_str(), f.signal.verdict))
        .collect();
    let reports: Vec<DiscrepancyReport> = state
        .anomalies
        .iter()
        .filter(|e| matches!(e.status, EventStatus::Pending | EventStatus::Confirmed))
        .map(|e| generate_report(e, verdicts.get(e.id.as_str()).copied(), &backend))
        .collect();
    for r in &reports {
        let json = serde_json::to_string_pretty(r)?;
        rt.write(state, &format!("report/{}", r.event_id), &format!("reports/{}.json", r.event_id), &json)?;
        rt.write(
            state,
            &format!("report-md/{}", r.event_id),
            &format!("reports/{}.md", r.event_id),
            &render_report_markdown(r),
        )?;
    }
    let a = &state.anomalies;
    let summary = format!(
        "resolved {} confirmed, {} rejected, {} open; {} reports",
        count(a, |e| e.status == EventStatus::Confirmed),
        count(a, |e| e.status == EventStatus::Rejected),
        count(a, |e| e.status.is_open()),
        reports.len()
    );
    if let Some(d) = &mut state.decision {
        if !state.anomalies.is_empty() {
            d.push_str("; ");
            d.push_str(&summary);
        }
    }
    state.log("report", summary);
    state.reports = reports;
    Ok(())
}

fn apply(kind: NodeKind, state: &mut WorkflowState, rt: &mut Runtime) -> Result<(), AgentError> {
    match kind {
        NodeKind::Ingest => node_ingest(state, rt),
        NodeKind::Preprocess => node_preprocess(state, rt),
        NodeKind::Score => node_score(state, rt),
        NodeKind::Verify => node_verify(state, rt),
        NodeKind::Explain => node_explain(state, rt),
        NodeKind::Plan => node_plan(state, rt),
        NodeKind::HumanFeedback => node_feedback(state, rt),
        NodeKind::Report => node_report(state, rt),
    }
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

impl Workflow {
    fn position(&self, kind: NodeKind) -> Option<usize> {
        self.nodes.iter().position(|n| n.kind == kind)
    }

    /// Applies the node under the cursor and advances it. A failing or
    /// panicking node turns the state into a terminal failure.
    pub fn step(&self, state: &mut WorkflowState, rt: &mut Runtime) {
        if state.phase != Phase::Running {
            return;
        }
        let Some(spec) = self.nodes.get(state.cursor).copied() else {
            state.phase = Phase::Completed;
            return;
        };
        let name = spec.kind.name();
        if spec.skippable {
            state.log(name, "skipped: no feedback source");
            state.cursor += 1;
            return;
        }
        let outcome = catch_unwind(AssertUnwindSafe(|| apply(spec.kind, state, rt)));
        let err = match outcome {
            Ok(Ok(())) => None,
            Ok(Err(e)) => Some(e),
            Err(p) => Some(AgentError::NodePanic {
                node: name,
                message: panic_text(p),
            }),
        };
        if let Some(e) = err {
            warn!(run = %state.run_id, node = name, error = %e, "workflow node failed");
            state.log(name, format!("failed: {e}"));
            state.failure = Some(e.to_string());
            state.decision = None;
            state.phase = Phase::Failed;
            return;
        }
        state.cursor += 1;
        // Loops taken so far is rounds - 1, so at most `max_feedback_rounds`.
        let retry = spec.kind == NodeKind::HumanFeedback
            && state.feedback_rounds <= self.max_feedback_rounds
            && state.anomalies.iter().any(|e| e.status == EventStatus::InfoRequested);
        if let (true, Some(v)) = (retry, self.position(NodeKind::Verify)) {
            state.log(name, "information requested: looping back to verify");
            state.cursor = v;
        }
        if state.cursor >= self.nodes.len() {
            state.phase = Phase::Completed;
        }
    }

    pub fn run(&self, mut state: WorkflowState, rt: &mut Runtime) -> WorkflowState {
        while state.phase == Phase::Running {
            self.step(&mut state, rt);
        }
        if let Err(e) = persist(&state, rt.run_dir.as_deref()) {
            warn!(run = %state.run_id, error = %e, "could not persist run state");
        }
        state
    }
}

/// Writes `state.json` and `logs.txt` into the run directory.
pub fn persist(state: &WorkflowState, run_dir: Option<&Path>) -> Result<(), AgentError> {
    let Some(dir) = run_dir else {
        return Ok(());
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join("state.json"), serde_json::to_string_pretty(state)?)?;
    let logs: String = state
        .logs
        .iter()
        .map(|l| format!("{} [{}] {}\n", l.instant_us, l.node, l.text))
        .collect();
    fs::write(dir.join("logs.txt"), logs)?;
    Ok(())
}

/// Builds the graph and runs it to a terminal state.
pub fn run_workflow(
    run_id: &str,
    dataset: DatasetRef,
    config: RunConfig,
    qtable: Option<QTable>,
    run_dir: Option<PathBuf>,
    feedback: Option<Box<dyn FeedbackSource>>,
) -> (WorkflowState, Option<TrainedModel>) {
    let has_feedback = feedback.is_some();
    let seed = config.seed;
    let mut state = WorkflowState::new(run_id, dataset, config, qtable);
    let mut rt = Runtime::new(seed, run_dir, feedback.unwrap_or_else(|| Box::new(NoFeedback)));
    let wf = match build_workflow(&state.config, has_feedback) {
        Ok(wf) => wf,
        Err(e) => {
            state.log("build", format!("failed: {e}"));
            state.failure = Some(e.to_string());
            state.phase = Phase::Failed;
            let _ = persist(&state, rt.run_dir.as_deref());
            return (state, None);
        }
    };
    let state = wf.run(state, &mut rt);
    (state, rt.model)
}
