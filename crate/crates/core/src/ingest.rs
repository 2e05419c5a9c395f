//! Transmitter data ingestion from a file-based mailbox.
//!
//! Mailbox layout: a directory of `*.eml` text files. Each file starts with
//! header lines (`Subject:`, `Date:`, `To:`, and zero or more `Attachment:`),
//! then a blank line, then the body. `Attachment:` names a sibling file in the
//! same directory. `Date:` is RFC 3339 (RFC 2822 is accepted as well).
//!
//! JPL messages are recognised by their subject line:
//!
//! ```text
//! DSS-<n> <band>-<bandnum> <free text> part <i> of <k>
//! ```
//!
//! where `<band>` is one of `S`, `X`, `I` and `<bandnum>` is `sx20` or `t20k`.
//! Their merged bodies are comma-separated text whose first non-blank line is
//! the header. CEC messages carry a `.tar.gz` attachment holding one CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::track::{self, Provenance, TrackError, TrackFrame, TrackKey, TrackRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed message: {reason}")]
    MalformedMessage { path: PathBuf, reason: String },
    #[error("part {0} is missing")]
    PartMissing(u32),
    #[error("part {0} appears more than once")]
    DuplicatePart(u32),
    #[error("messages do not belong to one multi-part set: {0}")]
    PartMismatch(String),
    #[error("body has no header line")]
    HeaderMissing,
    #[error("not a gzip-compressed tar archive: {0}")]
    NotAnArchive(String),
    #[error("archive must contain exactly one csv member, found {0}")]
    ArchiveShape(usize),
    #[error("selected feature `{0}` has no column")]
    MissingFeature(String),
    #[error(transparent)]
    Track(#[from] TrackError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMessage {
    pub file: PathBuf,
    pub subject: String,
    pub received: DateTime<Utc>,
    pub recipients: Vec<String>,
    pub body: String,
    pub attachments: Vec<Attachment>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MailboxFilter {
    /// Inclusive lower bound on `Date:`.
    pub since: Option<DateTime<Utc>>,
    /// Exclusive upper bound on `Date:`.
    pub until: Option<DateTime<Utc>>,
    /// Case-insensitive match against any `To:` address.
    pub recipient: Option<String>,
    /// Case-insensitive substring of the subject.
    pub subject_contains: Option<String>,
}

impl MailboxFilter {
    pub fn matches(&self, m: &RawMessage) -> bool {
        if self.since.is_some_and(|s| m.received < s) {
            return false;
        }
        if self.until.is_some_and(|u| m.received >= u) {
            return false;
        }
        if let Some(r) = &self.recipient {
            let r = r.to_lowercase();
            if !m.recipients.iter().any(|x| x.to_lowercase() == r) {
                return false;
            }
        }
        if let Some(s) = &self.subject_contains {
            if !m.subject.to_lowercase().contains(&s.to_lowercase()) {
                return false;
            }
        }
        true
    }
}

fn parse_date(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .or_else(|_| DateTime::parse_from_rfc2822(s))
        .map(|d| d.with_timezone(&Utc))
        .ok()
}

/// Parses one message file. Attachments are loaded from `dir`.
pub fn parse_message(path: &Path, text: &str, dir: &Path) -> Result<RawMessage, IngestError> {
    let malformed = |reason: &str| IngestError::MalformedMessage {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let (head, body) = match text.find("\n\n") {
        Some(i) => (&text[..i], &text[i + 2..]),
        None => match text.find("\r\n\r\n") {
            Some(i) => (&text[..i], &text[i + 4..]),
            None => (text, ""),
        },
    };
    let mut subject = None;
    let mut date = None;
    let mut recipients = Vec::new();
    let mut attachments = Vec::new();
    for line in head.lines() {
        let Some((name, value)) = line.split_once(':') else {
            return Err(malformed(&format!("bad header line {line:?}")));
        };
        let value = value.trim();
        match name.trim().to_ascii_lowercase().as_str() {
            "subject" => subject = Some(value.to_string()),
            "date" => date = Some(parse_date(value).ok_or_else(|| malformed("unparseable Date"))?),
            "to" => recipients.extend(
                value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string),
            ),
            "attachment" => {
                let file = dir.join(value);
                let bytes = fs::read(&file).map_err(|_| malformed(&format!("attachment {value} not readable")))?;
                attachments.push(Attachment {
                    name: value.to_string(),
                    bytes,
                });
            }
            _ => {}
        }
    }
    let subject = subject.filter(|s| !s.is_empty()).ok_or_else(|| malformed("missing Subject"))?;
    let received = date.ok_or_else(|| malformed("missing Date"))?;
    Ok(RawMessage {
        file: path.to_path_buf(),
        subject,
        received,
        recipients,
        body: body.to_string(),
        attachments,
    })
}

/// Reads every `*.eml` file in `dir`, keeping those that pass `filter`.
///
/// Malformed files are skipped with a warning. The result is sorted by
/// received time, then file name.
pub fn scan_mailbox(dir: &Path, filter: &MailboxFilter) -> Result<Vec<RawMessage>, IngestError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "eml"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = match fs::read_to_string(&p) {
            Ok(t) => t,
            Err(e) => {
                warn!(path = %p.display(), error = %e, "skipping unreadable message");
                continue;
            }
        };
        match parse_message(&p, &text, dir) {
            Ok(m) if filter.matches(&m) => out.push(m),
            Ok(_) => {}
            Err(e) => warn!(error = %e, "skipping malformed message"),
        }
    }
    out.sort_by(|a, b| a.received.cmp(&b.received).then_with(|| a.file.cmp(&b.file)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    S,
    X,
    I,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandNumber {
    Sx20,
    T20k,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BandKey {
    pub band: Band,
    pub band_number: BandNumber,
}

impl fmt::Display for BandKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let band = match self.band {
            Band::S => "S",
            Band::X => "X",
            Band::I => "I",
        };
        let num = match self.band_number {
            BandNumber::Sx20 => "sx20",
            BandNumber::T20k => "t20k",
        };
        write!(f, "{band}_{num}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceKind {
    Jpl {
        band: BandKey,
        dss: u32,
        part: u32,
        total_parts: u32,
    },
    /// `dss` comes from the subject or attachment name when present; otherwise
    /// it is resolved from the archive's `dss` column.
    Cec { dss: Option<u32> },
    Unknown,
}

static JPL_SUBJECT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*DSS-(\d+)\s+([SXI])-(sx20|t20k)\b.*\bpart\s+(\d+)\s+of\s+(\d+)\s*$").unwrap()
});
static DSS_ANY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)dss[-_ ]?(\d+)").unwrap());

pub fn classify_message(msg: &RawMessage) -> SourceKind {
    if let Some(c) = JPL_SUBJECT.captures(&msg.subject) {
        let band = match c[2].to_ascii_uppercase().as_str() {
            "S" => Band::S,
            "X" => Band::X,
            _ => Band::I,
        };
        let band_number = if c[3].eq_ignore_ascii_case("sx20") {
            BandNumber::Sx20
        } else {
            BandNumber::T20k
        };
        let parsed = (c[1].parse(), c[4].parse(), c[5].parse());
        if let (Ok(dss), Ok(part), Ok(total_parts)) = parsed {
            if (1..=total_parts).contains(&part) {
                return SourceKind::Jpl {
                    band: BandKey { band, band_number },
                    dss,
                    part,
                    total_parts,
                };
            }
        }
        return SourceKind::Unknown;
    }
    if let Some(att) = msg.attachments.iter().find(|a| a.name.ends_with(".tar.gz")) {
        let dss = DSS_ANY
            .captures(&msg.subject)
            .or_else(|| DSS_ANY.captures(&att.name))
            .and_then(|c| c[1].parse().ok());
        return SourceKind::Cec { dss };
    }
    SourceKind::Unknown
}

/// Concatenates the bodies of a multi-part JPL message set in part order.
pub fn merge_parts(messages: &[&RawMessage]) -> Result<String, IngestError> {
    let mut parts: Vec<(u32, &RawMessage)> = Vec::with_capacity(messages.len());
    let mut set: Option<(BandKey, u32, u32)> = None;
    for m in messages {
        let SourceKind::Jpl {
            band,
            dss,
            part,
            total_parts,
        } = classify_message(m)
        else {
            return Err(IngestError::PartMismatch(format!("`{}` is not a JPL part", m.subject)));
        };
        match set {
            None => set = Some((band, dss, total_parts)),
            Some(s) if s != (band, dss, total_parts) => {
                return Err(IngestError::PartMismatch(format!(
                    "`{}` does not match {:?}",
                    m.subject, s
                )))
            }
            _ => {}
        }
        parts.push((part, m));
    }
    let Some((_, _, total)) = set else {
        return Err(IngestError::PartMismatch("no messages".into()));
    };
    parts.sort_by_key(|(p, _)| *p);
    for w in parts.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(IngestError::DuplicatePart(w[0].0));
        }
    }
    for expected in 1..=total {
        if !parts.iter().any(|(p, _)| *p == expected) {
            return Err(IngestError::PartMissing(expected));
        }
    }
    let mut out = String::new();
    for (i, (_, m)) in parts.iter().enumerate() {
        if i > 0 && !out.is_empty() && !out.ends_with('\n') {
            out.push('\n');
        }
        out.push_str(&m.body);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitterRecord {
    pub timestamp_us: i64,
    pub dss: u32,
    pub values: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    /// 1-based line number within the parsed text.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaReport {
    pub columns_seen: Vec<String>,
    pub columns_extra: Vec<String>,
    pub columns_missing: Vec<String>,
    pub rows_parsed: usize,
    pub rows_rejected: usize,
    /// Rows skipped on purpose (other equipment class); not errors.
    #[serde(default)]
    pub rows_filtered: usize,
    pub rejected: Vec<RejectedLine>,
    /// No data lines at all (header only).
    pub empty_body: bool,
}

impl SchemaReport {
    /// Data lines accounted for: parsed, rejected or filtered out.
    pub fn rows_seen(&self) -> usize {
        self.rows_parsed + self.rows_rejected + self.rows_filtered
    }

    fn reject(&mut self, line: usize, reason: impl Into<String>) {
        let reason = reason.into();
        warn!(line, %reason, "rejected data line");
        self.rows_rejected += 1;
        self.rejected.push(RejectedLine { line, reason });
    }
}

/// Parameter columns expected in every JPL band-pair body.
pub const JPL_PARAMETERS: &[&str] = &[
    "forward_power",
    "reverse_power",
    "drive_power",
    "exciter_power",
    "gain_slope",
    "running_time",
    "load_t_in_raw",
    "load_t_out_raw",
    "coll_t_out_raw",
    "vac_ion_v",
    "vac_ion_on_off",
    "fill_air_tach",
];

const TIMESTAMP_NAMES: &[&str] = &["datetime", "timestamp", "time", "date_time"];

/// Parses an ISO-8601 instant; naive values are taken as UTC.
pub fn parse_instant_us(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.timestamp_micros());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(d) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(d.and_utc().timestamp_micros());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp_micros())
}

fn parse_dss(s: &str) -> Option<u32> {
    let v: f64 = s.trim().parse().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64).then_some(v as u32)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses a merged JPL body into records.
///
/// Lines that fail to parse are counted and reported but never abort the parse.
pub fn parse_jpl_body(
    text: &str,
    band: BandKey,
) -> Result<(Vec<TransmitterRecord>, SchemaReport), IngestError> {
    let mut lines = data_lines(text);
    let (_, header) = lines.next().ok_or(IngestError::HeaderMissing)?;
    let names: Vec<String> = header.split(',').map(|h| h.trim().to_ascii_lowercase()).collect();
    let ts_col = names
        .iter()
        .position(|n| TIMESTAMP_NAMES.contains(&n.as_str()))
        .ok_or(IngestError::HeaderMissing)?;
    let dss_col = names.iter().position(|n| n == "dss").ok_or(IngestError::HeaderMissing)?;

    let mut report = SchemaReport {
        columns_seen: names.clone(),
        ..Default::default()
    };
    report.columns_extra = names
        .iter()
        .enumerate()
        .filter(|(i, n)| *i != ts_col && *i != dss_col && !JPL_PARAMETERS.contains(&n.as_str()))
        .map(|(_, n)| n.clone())
        .collect();
    report.columns_missing = JPL_PARAMETERS
        .iter()
        .filter(|p| !names.iter().any(|n| n == *p))
        .map(|p| p.to_string())
        .collect();

    let mut records = Vec::new();
    'line: for (no, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            report.reject(no, format!("expected {} fields, found {}", names.len(), fields.len()));
            continue;
        }
        let Some(timestamp_us) = parse_instant_us(fields[ts_col]) else {
            report.reject(no, format!("bad timestamp {:?}", fields[ts_col]));
            continue;
        };
        let Some(dss) = parse_dss(fields[dss_col]) else {
            report.reject(no, format!("bad dss {:?}", fields[dss_col]));
            continue;
        };
        let mut values = IndexMap::new();
        for (i, f) in fields.iter().enumerate() {
            if i == ts_col || i == dss_col {
                continue;
            }
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    values.insert(names[i].clone(), v);
                }
                _ => {
                    report.reject(no, format!("non-numeric {} = {f:?}", names[i]));
                    continue 'line;
                }
            }
        }
        report.rows_parsed += 1;
        records.push(TransmitterRecord {
            timestamp_us,
            dss,
            values,
        });
    }
    report.empty_body = report.rows_parsed + report.rows_rejected == 0;
    if report.empty_body {
        warn!(%band, "JPL body has no data lines");
    }
    Ok((records, report))
}

/// Returns the single CSV member of a `.tar.gz` archive.
pub fn extract_cec_archive(bytes: &[u8]) -> Result<(String, String), IngestError> {
    if bytes.len() < 2 || bytes[0] != 0x1f || bytes[1] != 0x8b {
        return Err(IngestError::NotAnArchive("missing gzip magic".into()));
    }
    let gz = flate2::read::GzDecoder::new(bytes);
    let mut archive = tar::Archive::new(gz);
    let entries = archive
        .entries()
        .map_err(|e| IngestError::NotAnArchive(e.to_string()))?;
    let mut found = Vec::new();
    for entry in entries {
        let mut entry = entry.map_err(|e| IngestError::NotAnArchive(e.to_string()))?;
        let name = entry
            .path()
            .map_err(|e| IngestError::NotAnArchive(e.to_string()))?
            .to_string_lossy()
            .into_owned();
        if !entry.header().entry_type().is_file() || !name.to_ascii_lowercase().ends_with(".csv") {
            continue;
        }
        let mut text = String::new();
        entry
            .read_to_string(&mut text)
            .map_err(|e| IngestError::NotAnArchive(e.to_string()))?;
        found.push((name, text));
    }
    if found.len() != 1 {
        return Err(IngestError::ArchiveShape(found.len()));
    }
    Ok(found.pop().unwrap())
}

/// Vendor column names mapped to canonical names.
pub const CEC_ALIASES: &[(&str, &str)] = &[
    ("fwd_pwr_kw", "forward_power_kw"),
    ("fwd_power_kw", "forward_power_kw"),
    ("forward_power", "forward_power_kw"),
    ("refl_pwr_kw", "reflected_power_kw"),
    ("rev_pwr_kw", "reflected_power_kw"),
    ("beam_v_kv", "beam_voltage_kv"),
    ("body_i", "body_current"),
    ("body_curr", "body_current"),
    ("bdy_cur", "body_current"),
    ("coll_temp_c", "collector_temp_c"),
    ("equip_class", "equipment"),
    ("equipment_class", "equipment"),
    ("station", "dss"),
    ("datetime", "timestamp"),
    ("time", "timestamp"),
    ("date_time", "timestamp"),
];

/// Columns every CEC export carries (34 m stations). Larger stations add more.
pub const CEC_BASE_COLUMNS: &[&str] = &[
    "timestamp",
    "dss",
    "forward_power_kw",
    "reflected_power_kw",
    "beam_voltage_kv",
    "collector_temp_c",
];

pub fn canonical_cec_name(raw: &str) -> String {
    let lower = raw.trim().to_ascii_lowercase();
    CEC_ALIASES
        .iter()
        .find(|(alias, _)| *alias == lower)
        .map(|(_, c)| c.to_string())
        .unwrap_or(lower)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSelection {
    /// Every forward-power-like column plus body current, whichever exist.
    #[default]
    Default,
    /// Exactly these canonical columns; each must exist.
    Columns(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CecOptions {
    pub selection: FeatureSelection,
    /// Keep only rows of this equipment class when the column exists.
    pub equipment: Option<String>,
    /// Station used when the CSV has no `dss` column.
    pub default_dss: Option<u32>,
}

pub fn parse_cec_csv(
    text: &str,
    opts: &CecOptions,
) -> Result<(Vec<TransmitterRecord>, SchemaReport), IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = rdr.records();
    let header = loop {
        match rows.next() {
            Some(r) => {
                let r = r.map_err(TrackError::from)?;
                if r.iter().any(|f| !f.trim().is_empty()) {
                    break r;
                }
            }
            None => return Err(IngestError::HeaderMissing),
        }
    };
    let names: Vec<String> = header.iter().map(canonical_cec_name).collect();
    let col = |n: &str| names.iter().position(|x| x == n);
    let ts_col = col("timestamp").ok_or(IngestError::HeaderMissing)?;
    let dss_col = col("dss");
    if dss_col.is_none() && opts.default_dss.is_none() {
        return Err(IngestError::MissingFeature("dss".into()));
    }
    let equipment_col = col("equipment");

    let selected: Vec<usize> = match &opts.selection {
        FeatureSelection::Default => {
            let s: Vec<usize> = names
                .iter()
                .enumerate()
                .filter(|(_, n)| n.contains("forward_power") || n.as_str() == "body_current")
                .map(|(i, _)| i)
                .collect();
            if s.is_empty() {
                return Err(IngestError::MissingFeature("forward_power_kw".into()));
            }
            s
        }
        FeatureSelection::Columns(cols) => cols
            .iter()
            .map(|c| {
                let c = canonical_cec_name(c);
                col(&c).ok_or(IngestError::MissingFeature(c))
            })
            .collect::<Result<_, _>>()?,
    };

    let mut report = SchemaReport {
        columns_seen: names.clone(),
        columns_extra: names
            .iter()
            .filter(|n| !CEC_BASE_COLUMNS.contains(&n.as_str()) && n.as_str() != "equipment")
            .cloned()
            .collect(),
        columns_missing: CEC_BASE_COLUMNS
            .iter()
            .filter(|c| !names.iter().any(|n| n == *c))
            .map(|c| c.to_string())
            .collect(),
        ..Default::default()
    };

    let mut records = Vec::new();
    'row: for rec in rows {
        let rec = rec.map_err(TrackError::from)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if rec.len() != names.len() {
            report.reject(line, format!("expected {} fields, found {}", names.len(), rec.len()));
            continue;
        }
        if let (Some(want), Some(ec)) = (&opts.equipment, equipment_col) {
            if !rec[ec].trim().eq_ignore_ascii_case(want) {
                report.rows_filtered += 1;
                continue;
            }
        }
        let Some(timestamp_us) = parse_instant_us(&rec[ts_col]) else {
            report.reject(line, format!("bad timestamp {:?}", &rec[ts_col]));
            continue;
        };
        let dss = match dss_col {
            Some(c) => match parse_dss(&rec[c]) {
                Some(d) => d,
                None => {
                    report.reject(line, format!("bad dss {:?}", &rec[c]));
                    continue;
                }
            },
            None => opts.default_dss.unwrap(),
        };
        let mut values = IndexMap::new();
        for &i in &selected {
            match rec[i].trim().parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    values.insert(names[i].clone(), v);
                }
                _ => {
                    report.reject(line, format!("non-numeric {} = {:?}", names[i], &rec[i]));
                    continue 'row;
                }
            }
        }
        report.rows_parsed += 1;
        records.push(TransmitterRecord {
            timestamp_us,
            dss,
            values,
        });
    }
    report.empty_body = report.rows_parsed + report.rows_rejected + report.rows_filtered == 0;
    Ok((records, report))
}

/// Transmitter tracks have no spacecraft; they are keyed `(dss, 0)`.
pub const TRANSMITTER_SCID: u32 = 0;

pub fn records_to_frames(
    records: &[TransmitterRecord],
    provenance: Provenance,
) -> BTreeMap<TrackKey, TrackFrame> {
    let recs: Vec<TrackRecord> = records
        .iter()
        .enumerate()
        .map(|(i, r)| TrackRecord {
            seq: i as u64,
            timestamp_us: r.timestamp_us,
            key: TrackKey::new(r.dss, TRANSMITTER_SCID),
            features: r.values.clone(),
        })
        .collect();
    track::build_track_frames(&recs, provenance)
}

/// Canonical CSV text for a set of transmitter records.
pub fn records_to_csv(records: &[TransmitterRecord], provenance: Provenance) -> String {
    let frames = records_to_frames(records, provenance);
    track::frames_to_csv_string(frames.values())
}

/// Inverse of [`records_to_csv`]: records ordered by station, then time.
pub fn records_from_csv(text: &str) -> Result<Vec<TransmitterRecord>, IngestError> {
    let frames = track::read_frames_csv(text.as_bytes(), Provenance::JplTransmitter)?;
    let mut out = Vec::new();
    for f in frames.values() {
        for r in 0..f.n_rows() {
            let mut values = IndexMap::new();
            for c in &f.columns {
                if let Some(v) = c.values[r] {
                    values.insert(c.name.clone(), v);
                }
            }
            out.push(TransmitterRecord {
                timestamp_us: f.timestamps[r],
                dss: f.key.dss,
                values,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestSummary {
    pub messages_scanned: usize,
    pub unknown_messages: usize,
    /// (band pair, station, day) sets that could not be merged.
    pub merge_failures: Vec<String>,
    /// Output file name → schema report of the inputs that fed it.
    pub reports: BTreeMap<String, Vec<SchemaReport>>,
    pub files: Vec<PathBuf>,
}

/// Output file for a JPL band pair.
pub fn jpl_file_name(band: BandKey) -> String {
    format!("jpl_{band}.csv")
}

pub fn cec_file_name(dss: u32) -> String {
    format!("cec_dss{dss}.csv")
}

/// Scans, classifies, merges and parses a mailbox, then writes one canonical
/// CSV per JPL band pair and per CEC station into `out_dir`.
pub fn ingest_mailbox(
    dir: &Path,
    filter: &MailboxFilter,
    cec: &CecOptions,
    out_dir: &Path,
) -> Result<IngestSummary, IngestError> {
    let messages = scan_mailbox(dir, filter)?;
    let mut summary = IngestSummary {
        messages_scanned: messages.len(),
        ..Default::default()
    };

    type SetKey = (BandKey, u32, u32, NaiveDate);
    let mut jpl_sets: BTreeMap<SetKey, Vec<&RawMessage>> = BTreeMap::new();
    let mut cec_msgs = Vec::new();
    for m in &messages {
        match classify_message(m) {
            SourceKind::Jpl {
                band,
                dss,
                total_parts,
                ..
            } => jpl_sets
                .entry((band, dss, total_parts, m.received.date_naive()))
                .or_default()
                .push(m),
            SourceKind::Cec { dss } => cec_msgs.push((m, dss)),
            SourceKind::Unknown => summary.unknown_messages += 1,
        }
    }

    let mut by_band: BTreeMap<BandKey, (Vec<TransmitterRecord>, Vec<SchemaReport>)> = BTreeMap::new();
    for ((band, dss, total, day), msgs) in &jpl_sets {
        let body = match merge_parts(msgs) {
            Ok(b) => b,
            Err(e) => {
                warn!(%band, dss, day = %day, error = %e, "cannot merge message parts");
                summary
                    .merge_failures
                    .push(format!("{band} DSS-{dss} {day} ({total} parts): {e}"));
                continue;
            }
        };
        let entry = by_band.entry(*band).or_default();
        match parse_jpl_body(&body, *band) {
            Ok((recs, report)) => {
                entry.0.extend(recs);
                entry.1.push(report);
            }
            Err(e) => {
                warn!(%band, dss, error = %e, "unparseable JPL body");
                summary.merge_failures.push(format!("{band} DSS-{dss} {day}: {e}"));
            }
        }
    }

    let mut by_dss: BTreeMap<u32, (Vec<TransmitterRecord>, Vec<SchemaReport>)> = BTreeMap::new();
    for (m, dss) in cec_msgs {
        for att in m.attachments.iter().filter(|a| a.name.ends_with(".tar.gz")) {
            let parsed = extract_cec_archive(&att.bytes).and_then(|(_, text)| {
                let opts = CecOptions {
                    default_dss: dss.or(cec.default_dss),
                    ..cec.clone()
                };
                parse_cec_csv(&text, &opts)
            });
            match parsed {
                Ok((recs, report)) => {
                    let mut stations: Vec<u32> = recs.iter().map(|r| r.dss).collect();
                    stations.sort_unstable();
                    stations.dedup();
                    for r in recs {
                        by_dss.entry(r.dss).or_default().0.push(r);
                    }
                    for s in stations {
                        by_dss.entry(s).or_default().1.push(report.clone());
                    }
                }
                Err(e) => {
                    warn!(attachment = %att.name, error = %e, "unusable CEC archive");
                    summary.merge_failures.push(format!("{}: {e}", att.name));
                }
            }
        }
    }

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut write = |name: String, text: String, reports: Vec<SchemaReport>| -> Result<(), IngestError> {
        let path = out_dir.join(&name);
        fs::write(&path, text).map_err(io_err(&path))?;
        summary.files.push(path);
        summary.reports.insert(name, reports);
        Ok(())
    };
    for (band, (recs, reports)) in by_band {
        write(jpl_file_name(band), records_to_csv(&recs, Provenance::JplTransmitter), reports)?;
    }
    for (dss, (recs, reports)) in by_dss {
        write(cec_file_name(dss), records_to_csv(&recs, Provenance::CecTransmitter), reports)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(subject: &str, body: &str) -> RawMessage {
        RawMessage {
            file: PathBuf::from("m.eml"),
            subject: subject.into(),
            received: DateTime::parse_from_rfc3339("2025-02-24T14:00:00Z").unwrap().with_timezone(&Utc),
            recipients: vec!["ops@example.org".into()],
            body: body.into(),
            attachments: vec![],
        }
    }

    const X_SX20: BandKey = BandKey {
        band: Band::X,
        band_number: BandNumber::Sx20,
    };

    #[test]
    fn classify_jpl_subject() {
        let m = msg("DSS-63 X-sx20 transmitter data part 1 of 3", "");
        assert_eq!(
            classify_message(&m),
            SourceKind::Jpl {
                band: X_SX20,
                dss: 63,
                part: 1,
                total_parts: 3
            }
        );
    }

    #[test]
    fn classify_cec_and_unknown() {
        let mut m = msg("daily export", "");
        m.attachments.push(Attachment {
            name: "day055.tar.gz".into(),
            bytes: vec![],
        });
        assert_eq!(classify_message(&m), SourceKind::Cec { dss: None });
        assert_eq!(classify_message(&msg("weekly status", "")), SourceKind::Unknown);
        // part index out of range is not a valid JPL part
        assert_eq!(
            classify_message(&msg("DSS-63 X-sx20 data part 4 of 3", "")),
            SourceKind::Unknown
        );
    }

    #[test]
    fn merge_orders_parts() {
        let p2 = msg("DSS-63 X-sx20 data part 2 of 3", "b\n");
        let p1 = msg("DSS-63 X-sx20 data part 1 of 3", "a\n");
        let p3 = msg("DSS-63 X-sx20 data part 3 of 3", "c\n");
        assert_eq!(merge_parts(&[&p2, &p1, &p3]).unwrap(), "a\nb\nc\n");
        assert!(matches!(merge_parts(&[&p1, &p3]), Err(IngestError::PartMissing(2))));
        assert!(matches!(merge_parts(&[&p1, &p1, &p3]), Err(IngestError::DuplicatePart(1))));
        let single = msg("DSS-63 X-sx20 data part 1 of 1", "a,b\n1,2");
        assert_eq!(merge_parts(&[&single]).unwrap(), "a,b\n1,2");
        // missing trailing newline still separates parts
        let q1 = msg("DSS-63 X-sx20 data part 1 of 2", "a");
        let q2 = msg("DSS-63 X-sx20 data part 2 of 2", "b");
        assert_eq!(merge_parts(&[&q1, &q2]).unwrap(), "a\nb");
    }

    #[test]
    fn merge_rejects_mixed_sets() {
        let a = msg("DSS-63 X-sx20 data part 1 of 2", "a");
        let b = msg("DSS-63 S-sx20 data part 2 of 2", "b");
        assert!(matches!(merge_parts(&[&a, &b]), Err(IngestError::PartMismatch(_))));
    }

    const HEADER: &str = "datetime,dss,forward_power,reverse_power,drive_power,exciter_power,gain_slope,running_time";

    #[test]
    fn jpl_row_zero() {
        let body = format!(
            "{HEADER}\n2025-02-24T13:02:26.003662Z,63,-0.000050,-0.000001,-3.385930e-09,0.000691,0.0,0.0\n"
        );
        let (recs, rep) = parse_jpl_body(&body, X_SX20).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].dss, 63);
        assert_eq!(recs[0].values["forward_power"], -0.000050);
        assert_eq!(recs[0].values["running_time"], 0.0);
        assert_eq!(rep.rows_parsed, 1);
        assert!(rep.columns_missing.contains(&"vac_ion_v".to_string()));
    }

    #[test]
    fn jpl_header_only_and_rejects() {
        let (recs, rep) = parse_jpl_body(&format!("\n{HEADER}\n\n"), X_SX20).unwrap();
        assert!(recs.is_empty());
        assert_eq!(rep.rows_parsed, 0);
        assert!(rep.empty_body);

        let body = format!("{HEADER}\n2025-02-24T13:02:26Z,63,abc,0,0,0,0,0\n");
        let (recs, rep) = parse_jpl_body(&body, X_SX20).unwrap();
        assert!(recs.is_empty());
        assert_eq!(rep.rows_rejected, 1);
        assert_eq!(rep.rejected[0].line, 2);

        assert!(matches!(parse_jpl_body("  \n\n", X_SX20), Err(IngestError::HeaderMissing)));
    }

    #[test]
    fn not_an_archive() {
        assert!(matches!(extract_cec_archive(b"hello"), Err(IngestError::NotAnArchive(_))));
        assert!(matches!(
            extract_cec_archive(&[0x1f, 0x8b, 0, 0, 1, 2, 3]),
            Err(IngestError::NotAnArchive(_))
        ));
    }

    #[test]
    fn cec_aliases_and_selection() {
        let text = "timestamp,dss,fwd_pwr_kw,refl_pwr_kw\n2025-02-24T00:00:00Z,14,0.0,0.1\n2025-02-24T00:00:01Z,14,20.0,0.2\n";
        let (recs, rep) = parse_cec_csv(text, &CecOptions::default()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].values["forward_power_kw"], 0.0);
        assert_eq!(recs[1].values["forward_power_kw"], 20.0);
        assert_eq!(recs[0].values.len(), 1);
        assert!(rep.columns_missing.contains(&"beam_voltage_kv".to_string()));

        let opts = CecOptions {
            selection: FeatureSelection::Columns(vec!["forward_power_kw".into(), "body_current".into()]),
            ..Default::default()
        };
        assert!(matches!(
            parse_cec_csv(text, &opts),
            Err(IngestError::MissingFeature(f)) if f == "body_current"
        ));
    }

    #[test]
    fn cec_equipment_filter() {
        let text = "timestamp,dss,forward_power_kw,equipment\n2025-02-24T00:00:00Z,14,1,Agilent\n2025-02-24T00:00:01Z,14,2,TXC\n";
        let opts = CecOptions {
            equipment: Some("txc".into()),
            ..Default::default()
        };
        let (recs, rep) = parse_cec_csv(text, &opts).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].values["forward_power_kw"], 2.0);
        assert_eq!(rep.rows_parsed, 1);
        assert_eq!(rep.rows_filtered, 1);
    }

    #[test]
    fn filter_fields() {
        let m = msg("DSS-63 X-sx20 data part 1 of 1", "");
        assert!(MailboxFilter::default().matches(&m));
        let f = MailboxFilter {
            recipient: Some("nobody@example.org".into()),
            ..Default::default()
        };
        assert!(!f.matches(&m));
        let f = MailboxFilter {
            subject_contains: Some("SX20".into()),
            since: parse_date("2025-02-24T00:00:00Z"),
            until: parse_date("2025-02-25T00:00:00Z"),
            ..Default::default()
        };
        assert!(f.matches(&m));
    }

    #[test]
    fn instant_formats() {
        let a = parse_instant_us("2025-02-24T13:02:26.003662Z").unwrap();
        let b = parse_instant_us("2025-02-24 13:02:26.003662110").unwrap();
        assert_eq!(a, b);
    }
}
