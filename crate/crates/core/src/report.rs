//! Discrepancy records, prompt wrapping, prompt/response datasets and report
//! generation through a pluggable text-completion backend.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::detect::{AnomalyEvent, EventContext, EventStatus};
use crate::nn::ModelKind;
use crate::track::TrackKey;
use crate::verify::{Severity, Verdict};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row of the discrepancy-report dataset. Identifiers are stored as reals
/// because the source exports them that way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRecord {
    pub spacecraft_id: f64,
    pub ground_antenna_orig_num: Option<f64>,
    pub ground_antenna_clean_num: Option<f64>,
    pub ground_antenna_id: Option<f64>,
    pub description_txt: String,
    pub corrective_action_txt: Option<String>,
}

pub const RECORD_COLUMNS: [&str; 6] = [
    "SPACECRAFT_ID",
    "GROUND_ANTENNA_ORIG_NUM",
    "GROUND_ANTENNA_CLEAN_NUM",
    "GROUND_ANTENNA_ID",
    "DESCRIPTION_TXT",
    "CORRECTIVE_ACTION_TXT",
];

fn null_text(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null")
}

/// Reads the CSV form of the dataset. Columns are found by header name, so a
/// leading index column is ignored. `None`, `NaN` and empty cells are null.
pub fn read_discrepancy_csv<R: Read>(reader: R) -> Result<Vec<DiscrepancyRecord>, ReportError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or(ReportError::MissingField(name))
    };
    let idx: Vec<usize> = RECORD_COLUMNS.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |i: usize| rec.get(idx[i]).unwrap_or("");
        let num = |i: usize| -> Result<Option<f64>, ReportError> {
            let s = cell(i);
            if null_text(s) {
                return Ok(None);
            }
            s.trim().parse::<f64>().map(Some).map_err(|e| ReportError::BadRow {
                row,
                message: format!("{}: {e}", RECORD_COLUMNS[i]),
            })
        };
        let spacecraft_id = num(0)?.ok_or(ReportError::BadRow {
            row,
            message: "SPACECRAFT_ID is empty".into(),
        })?;
        let action = cell(5);
        out.push(DiscrepancyRecord {
            spacecraft_id,
            ground_antenna_orig_num: num(1)?,
            ground_antenna_clean_num: num(2)?,
            ground_antenna_id: num(3)?,
            description_txt: cell(4).to_string(),
            corrective_action_txt: (!null_text(action)).then(|| action.to_string()),
        });
    }
    Ok(out)
}

/// Integral reals print without a fractional part.
fn fmt_id(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub const PROMPT_INSTRUCTION: &str =
    "Based on the discrepancy above, recommend the corrective action the station operator should take.";

/// Labelled-line prompt for one record, byte-stable for identical input.
pub fn wrap_prompt(record: &DiscrepancyRecord) -> Result<String, ReportError> {
    if record.description_txt.trim().is_empty() {
        return Err(ReportError::MissingField("DESCRIPTION_TXT"));
    }
    let opt = |v: Option<f64>| v.map(fmt_id).unwrap_or_else(|| "None".to_string());
    let mut s = String::new();
    let _ = writeln!(s, "SPACECRAFT_ID: {}", fmt_id(record.spacecraft_id));
    let _ = writeln!(s, "GROUND_ANTENNA_ORIG_NUM: {}", opt(record.ground_antenna_orig_num));
    let _ = writeln!(s, "GROUND_ANTENNA_CLEAN_NUM: {}", opt(record.ground_antenna_clean_num));
    let _ = writeln!(s, "GROUND_ANTENNA_ID: {}", opt(record.ground_antenna_id));
    let _ = writeln!(s, "DESCRIPTION: {}", record.description_txt.trim());
    s.push_str(PROMPT_INSTRUCTION);
    Ok(s)
}

fn verdict_phrase(verdict: Option<Verdict>) -> &'static str {
    match verdict {
        Some(Verdict::Agree) => "operator agreed with the proposed action",
        Some(Verdict::Disagree) => "operator disagreed with the proposed action",
        None => "awaiting operator review",
    }
}

fn utc(ts_us: i64) -> String {
    chrono::DateTime::from_timestamp_micros(ts_us)
        .map(|t| t.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string())
        .unwrap_or_else(|| ts_us.to_string())
}

fn feature_label(event: &AnomalyEvent) -> &str {
    event.top_feature.as_deref().unwrap_or("telemetry")
}

/// Event description used in prompts and reports.
pub fn describe_event(event: &AnomalyEvent, verdict: Option<Verdict>) -> String {
    let severity = event.severity.map(|s| s.as_str()).unwrap_or("unrated");
    format!(
        "{} reconstruction error {:.6} exceeded threshold {:.6} on DSS-{} SCID {} at {} (window {}, dominant feature {}, severity {}, {}).",
        event.model,
        event.error,
        event.threshold,
        event.key.dss,
        event.key.scid,
        utc(event.timestamp_us),
        event.window,
        feature_label(event),
        severity,
        verdict_phrase(verdict),
    )
}

/// Maps a detected event onto the record layout: the spacecraft id is the
/// track's SCID and the antenna fields are its DSS.
pub fn event_record(event: &AnomalyEvent, verdict: Option<Verdict>) -> DiscrepancyRecord {
    let dss = f64::from(event.key.dss);
    DiscrepancyRecord {
        spacecraft_id: f64::from(event.key.scid),
        ground_antenna_orig_num: Some(dss),
        ground_antenna_clean_num: Some(dss),
        ground_antenna_id: Some(dss),
        description_txt: describe_event(event, verdict),
        corrective_action_txt: None,
    }
}

pub fn wrap_event_prompt(event: &AnomalyEvent, verdict: Option<Verdict>) -> String {
    wrap_prompt(&event_record(event, verdict)).expect("event descriptions are never empty")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptResponsePair {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub written: usize,
    pub skipped: usize,
}

/// Pairs for every record with a corrective action; the rest are counted as
/// skipped. Records that cannot be wrapped are skipped too.
pub fn build_pairs(records: &[DiscrepancyRecord]) -> (Vec<PromptResponsePair>, PairStats) {
    let mut pairs = Vec::new();
    let mut stats = PairStats::default();
    for r in records {
        match (&r.corrective_action_txt, wrap_prompt(r)) {
            (Some(resp), Ok(prompt)) if !resp.trim().is_empty() => {
                pairs.push(PromptResponsePair {
                    prompt,
                    response: resp.clone(),
                });
                stats.written += 1;
            }
            _ => stats.skipped += 1,
        }
    }
    (pairs, stats)
}

/// Writes the pair dataset as JSON lines.
pub fn write_pair_dataset<W: Write>(records: &[DiscrepancyRecord], mut out: W) -> Result<PairStats, ReportError> {
    let (pairs, stats) = build_pairs(records);
    for p in &pairs {
        serde_json::to_writer(&mut out, p).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(stats)
}

pub const DEFAULT_REMOTE_PATH: &str = "/api/generate";
pub const DEFAULT_REMOTE_TIMEOUT_MS: u64 = 10_000;

fn default_path() -> String {
    DEFAULT_REMOTE_PATH.to_string()
}

fn default_timeout() -> u64 {
    DEFAULT_REMOTE_TIMEOUT_MS
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReasoningBackend {
    #[default]
    Template,
    Remote {
        base_url: String,
        model: String,
        #[serde(default = "default_path")]
        path: String,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
}

impl ReasoningBackend {
    pub fn remote(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        ReasoningBackend::Remote {
            base_url: base_url.into(),
            model: model.into(),
            path: default_path(),
            timeout_ms: default_timeout(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendTag {
    Template,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub event_id: String,
    pub key: TrackKey,
    pub timestamp_us: i64,
    pub model: ModelKind,
    pub error: f64,
    pub threshold: f64,
    pub top_feature: Option<String>,
    pub context: EventContext,
    pub severity: Severity,
    pub status: EventStatus,
    pub verdict: Option<Verdict>,
    pub description: String,
    pub suggested_action: String,
    pub backend: BackendTag,
    pub generation_log: Vec<String>,
}

/// Fixed corrective-action skeleton keyed by severity, model and feature.
pub fn template_action(severity: Severity, model: ModelKind, feature: &str, key: TrackKey) -> String {
    let station = format!("DSS-{} (SCID {})", key.dss, key.scid);
    match severity {
        Severity::High => format!(
            "Severity High: {feature} on {station} is far outside the {model} envelope. \
             Switch to the backup receiver chain, confirm {feature} recovers, and file a discrepancy report."
        ),
        Severity::Medium => format!(
            "Severity Medium: {feature} on {station} exceeded the {model} threshold. \
             Check receiver lock and weather conditions, then re-run detection on the next pass."
        ),
        Severity::Low => format!(
            "Severity Low: minor {feature} excursion on {station} flagged by {model}. \
             Log it and take no corrective action unless it recurs."
        ),
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    stream: bool,
}

#[derive(Deserialize)]
struct CompletionResponse {
    response: String,
}

fn remote_completion(url: &str, model: &str, prompt: &str, timeout: Duration) -> Result<String, String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into();
    let mut resp = agent
        .post(url)
        .send_json(CompletionRequest {
            model,
            prompt,
            stream: false,
        })
        .map_err(|e| e.to_string())?;
    let body: CompletionResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
    if body.response.trim().is_empty() {
        return Err("empty completion".into());
    }
    Ok(body.response)
}

/// Always yields a report: remote failures fall back to the template and are
/// noted in the generation log.
pub fn generate_report(event: &AnomalyEvent, verdict: Option<Verdict>, backend: &ReasoningBackend) -> DiscrepancyReport {
    let severity = event.severity.unwrap_or(Severity::Low);
    let template = || template_action(severity, event.model, feature_label(event), event.key);
    let mut log = Vec::new();
    let (suggested_action, tag) = match backend {
        ReasoningBackend::Template => {
            log.push("backend template".to_string());
            (template(), BackendTag::Template)
        }
        ReasoningBackend::Remote {
            base_url,
            model,
            path,
            timeout_ms,
        } => {
            let url = format!("{}{}", base_url.trim_end_matches('/'), path);
            let prompt = wrap_event_prompt(event, verdict);
            match remote_completion(&url, model, &prompt, Duration::from_millis(*timeout_ms)) {
                Ok(text) => {
                    log.push(format!("backend remote {url} model {model}"));
                    (text, BackendTag::Remote)
                }
                Err(e) => {
                    warn!(url = %url, error = %e, "remote backend failed, using template");
                    log.push(format!("warning: remote backend {url} failed ({e}); fell back to template"));
                    (template(), BackendTag::Template)
                }
            }
        }
    };
    DiscrepancyReport {
        event_id: event.id.clone(),
        key: event.key,
        timestamp_us: event.timestamp_us,
        model: event.model,
        error: event.error,
        threshold: event.threshold,
        top_feature: event.top_feature.clone(),
        context: event.context.clone(),
        severity,
        status: event.status,
        verdict,
        description: describe_event(event, verdict),
        suggested_action,
        backend: tag,
        generation_log: log,
    }
}

pub const REPORT_SECTIONS: [&str; 6] = ["Summary", "Data", "Severity", "Verdict", "Suggested Action", "Provenance"];

pub fn render_report_markdown(report: &DiscrepancyReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Discrepancy report {}\n", report.event_id);
    let _ = writeln!(s, "## Summary\n\n{}\n", report.description);

    let _ = writeln!(s, "## Data\n");
    let _ = writeln!(s, "- Track: DSS-{} / SCID {}", report.key.dss, report.key.scid);
    let _ = writeln!(s, "- Time: {}", utc(report.timestamp_us));
    let _ = writeln!(s, "- Model: {}", report.model);
    let _ = writeln!(s, "- Error: {:.6}", report.error);
    let _ = writeln!(s, "- Threshold: {:.6}", report.threshold);
    let _ = writeln!(s, "- Dominant feature: {}", report.top_feature.as_deref().unwrap_or("n/a"));
    if report.context.is_empty() {
        let _ = writeln!(s, "- Weather context: absent");
    } else {
        let show = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
        let c = &report.context;
        let _ = writeln!(
            s,
            "- Weather context: wind {}, rain {}, temperature {}, humidity {}",
            show(c.wind),
            show(c.rain),
            show(c.temperature),
            show(c.humidity)
        );
    }

    let _ = writeln!(s, "\n## Severity\n\n{}\n", report.severity);
    let verdict = match report.verdict {
        Some(Verdict::Agree) => "agree",
        Some(Verdict::Disagree) => "disagree",
        None => "none",
    };
    let _ = writeln!(s, "## Verdict\n\nStatus {}, operator verdict {}\n", report.status, verdict);
    let _ = writeln!(s, "## Suggested Action\n\n{}\n", report.suggested_action);
    let backend = match report.backend {
        BackendTag::Template => "template",
        BackendTag::Remote => "remote",
    };
    let _ = writeln!(s, "## Provenance\n\n- Backend: {backend}");
    for line in &report.generation_log {
        let _ = writeln!(s, "- {line}");
    }
    s
}
