//! Canonical in-memory model for multivariate telemetry tracks.
//!
//! A [`TrackFrame`] is a column store keyed by a station/spacecraft pair.
//! Every feature value is an `Option<f64>`: `None` is the missing marker and is
//! never conflated with `0.0`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Day number of 1970-01-01 in the spreadsheet serial-day calendar
/// (day 0 = 1899-12-30). Fractional-day timestamps such as `45658.041667`
/// are expressed in this calendar.
pub const SERIAL_DAY_UNIX_EPOCH: f64 = 25_569.0;

const MICROS_PER_DAY: f64 = 86_400_000_000.0;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("line {line}: cannot parse field `{field}`: {value:?}")]
    Parse {
        line: u64,
        field: String,
        value: String,
    },
    #[error("frame {key}: timestamps decrease at row {row}")]
    Unsorted { key: TrackKey, row: usize },
    #[error("column `{0}` is not present")]
    UnknownColumn(String),
    #[error("column `{0}` has missing values")]
    MissingValues(String),
}

/// Station (DSS) and spacecraft (SCID) pair identifying a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrackKey {
    pub dss: u32,
    pub scid: u32,
}

impl TrackKey {
    pub fn new(dss: u32, scid: u32) -> Self {
        Self { dss, scid }
    }
}

impl fmt::Display for TrackKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DSS-{}/SCID-{}", self.dss, self.scid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    AntennaDataset,
    JplTransmitter,
    CecTransmitter,
    Synthetic,
}

/// A named feature series. `None` marks a missing sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

impl Column {
    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub key: TrackKey,
    /// Epoch microseconds, non-decreasing.
    pub timestamps: Vec<i64>,
    pub columns: Vec<Column>,
    pub provenance: Provenance,
}

impl TrackFrame {
    pub fn empty(key: TrackKey, provenance: Provenance) -> Self {
        Self {
            key,
            timestamps: Vec::new(),
            columns: Vec::new(),
            provenance,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Column> {
        self.columns.iter_mut().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Dense values of a column; fails if any sample is missing.
    pub fn dense_column(&self, name: &str) -> Result<Vec<f64>, TrackError> {
        let col = self
            .column(name)
            .ok_or_else(|| TrackError::UnknownColumn(name.to_string()))?;
        col.values
            .iter()
            .map(|v| v.ok_or_else(|| TrackError::MissingValues(name.to_string())))
            .collect()
    }

    pub fn missing_count(&self) -> usize {
        self.columns.iter().map(Column::missing_count).sum()
    }

    /// Value of `name` at `row`, if the column exists and the sample is present.
    pub fn value(&self, name: &str, row: usize) -> Option<f64> {
        self.column(name).and_then(|c| c.values.get(row).copied().flatten())
    }

    /// Last row whose timestamp is `<= ts`.
    pub fn row_at_or_before(&self, ts: i64) -> Option<usize> {
        let idx = self.timestamps.partition_point(|&t| t <= ts);
        idx.checked_sub(1)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), TrackError> {
        for (row, pair) in self.timestamps.windows(2).enumerate() {
            if pair[1] < pair[0] {
                return Err(TrackError::Unsorted {
                    key: self.key,
                    row: row + 1,
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if c.values.len() != self.timestamps.len() {
                return Err(TrackError::Header(format!(
                    "column `{}` has {} values for {} rows",
                    c.name,
                    c.values.len(),
                    self.timestamps.len()
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(TrackError::Header(format!("duplicate column `{}`", c.name)));
            }
        }
        Ok(())
    }

    /// New frame with only the rows for which `keep` is true.
    pub fn filter_rows(&self, keep: &[bool]) -> TrackFrame {
        let pick = |v: &[Option<f64>]| {
            v.iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(x, _)| *x)
                .collect::<Vec<_>>()
        };
        TrackFrame {
            key: self.key,
            timestamps: self
                .timestamps
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(t, _)| *t)
                .collect(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    values: pick(&c.values),
                })
                .collect(),
            provenance: self.provenance,
        }
    }

    /// Row-major dense matrix of the requested columns.
    pub fn dense_rows(&self, names: &[String]) -> Result<Vec<Vec<f64>>, TrackError> {
        let cols = names
            .iter()
            .map(|n| self.dense_column(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((0..self.n_rows())
            .map(|r| cols.iter().map(|c| c[r]).collect())
            .collect())
    }
}

/// One interleaved input observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    /// Arrival sequence number; breaks timestamp ties.
    pub seq: u64,
    pub timestamp_us: i64,
    pub key: TrackKey,
    pub features: IndexMap<String, f64>,
}

impl TrackRecord {
    pub fn new(seq: u64, timestamp_us: i64, key: TrackKey) -> Self {
        Self {
            seq,
            timestamp_us,
            key,
            features: IndexMap::new(),
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.features.insert(name.into(), value);
        self
    }
}

/// Groups interleaved records into one time-sorted frame per key.
///
/// Records are ordered by `(timestamp, seq)` before grouping, so the result
/// (including column order) does not depend on the order of `records`.
pub fn build_track_frames(
    records: &[TrackRecord],
    provenance: Provenance,
) -> BTreeMap<TrackKey, TrackFrame> {
    let mut order: Vec<&TrackRecord> = records.iter().collect();
    order.sort_by_key(|r| (r.timestamp_us, r.seq));

    let mut grouped: BTreeMap<TrackKey, Vec<&TrackRecord>> = BTreeMap::new();
    for r in order {
        grouped.entry(r.key).or_default().push(r);
    }

    grouped
        .into_iter()
        .map(|(key, rows)| {
            let mut names: IndexMap<&str, ()> = IndexMap::new();
            for r in &rows {
                for name in r.features.keys() {
                    names.entry(name.as_str()).or_insert(());
                }
            }
            let columns = names
                .keys()
                .map(|name| Column {
                    name: name.to_string(),
                    values: rows.iter().map(|r| r.features.get(*name).copied()).collect(),
                })
                .collect();
            let frame = TrackFrame {
                key,
                timestamps: rows.iter().map(|r| r.timestamp_us).collect(),
                columns,
                provenance,
            };
            (key, frame)
        })
        .collect()
}

/// Frame for `key`, or an empty frame when the key is absent.
pub fn select_track(frames: &BTreeMap<TrackKey, TrackFrame>, key: TrackKey) -> TrackFrame {
    match frames.get(&key) {
        Some(f) => f.clone(),
        None => {
            let provenance = frames
                .values()
                .next()
                .map(|f| f.provenance)
                .unwrap_or(Provenance::Synthetic);
            TrackFrame::empty(key, provenance)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputePolicy {
    /// Carry each column's last seen value forward, then drop the leading rows
    /// where some column has not been observed yet.
    #[default]
    ForwardFillThenDropLeading,
    DropRowsWithMissing,
    ZeroFill,
}

pub fn impute_missing(frame: &TrackFrame, policy: ImputePolicy) -> TrackFrame {
    match policy {
        ImputePolicy::ZeroFill => {
            let mut out = frame.clone();
            for c in &mut out.columns {
                for v in &mut c.values {
                    v.get_or_insert(0.0);
                }
            }
            out
        }
        ImputePolicy::DropRowsWithMissing => {
            let keep: Vec<bool> = (0..frame.n_rows())
                .map(|r| frame.columns.iter().all(|c| c.values[r].is_some()))
                .collect();
            frame.filter_rows(&keep)
        }
        ImputePolicy::ForwardFillThenDropLeading => {
            let mut out = frame.clone();
            let mut first_complete = 0usize;
            for c in &mut out.columns {
                let mut last = None;
                let mut first_seen = None;
                for (i, v) in c.values.iter_mut().enumerate() {
                    match v {
                        Some(x) => {
                            last = Some(*x);
                            first_seen.get_or_insert(i);
                        }
                        None => *v = last,
                    }
                }
                first_complete = first_complete.max(first_seen.unwrap_or(frame.n_rows()));
            }
            let keep: Vec<bool> = (0..frame.n_rows()).map(|r| r >= first_complete).collect();
            out.filter_rows(&keep)
        }
    }
}

/// Converts a fractional serial day (1899-12-30 epoch) to epoch microseconds.
pub fn serial_day_to_epoch_us(day: f64) -> i64 {
    ((day - SERIAL_DAY_UNIX_EPOCH) * MICROS_PER_DAY).round() as i64
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Writes frames in the canonical CSV form
/// `timestamp_us,dss,scid,<features...>`, missing samples as empty fields.
///
/// The feature header is the union of all frames' columns in first-seen order.
pub fn write_frames_csv<'a, W: Write>(
    frames: impl IntoIterator<Item = &'a TrackFrame>,
    out: W,
) -> Result<(), TrackError> {
    let frames: Vec<&TrackFrame> = frames.into_iter().collect();
    let mut names: IndexMap<&str, ()> = IndexMap::new();
    for f in &frames {
        for c in &f.columns {
            names.entry(c.name.as_str()).or_insert(());
        }
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec!["timestamp_us", "dss", "scid"];
    header.extend(names.keys());
    w.write_record(&header)?;
    for f in frames {
        let idx: Vec<Option<usize>> = names.keys().map(|n| f.column_index(n)).collect();
        for r in 0..f.n_rows() {
            let mut row = vec![
                f.timestamps[r].to_string(),
                f.key.dss.to_string(),
                f.key.scid.to_string(),
            ];
            row.extend(
                idx.iter()
                    .map(|i| fmt_value(i.and_then(|i| f.columns[i].values[r]))),
            );
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn frames_to_csv_string<'a>(frames: impl IntoIterator<Item = &'a TrackFrame>) -> String {
    let mut buf = Vec::new();
    write_frames_csv(frames, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Reads the canonical CSV form back into frames, one per key, preserving
/// row order within each key.
pub fn read_frames_csv<R: Read>(
    input: R,
    provenance: Provenance,
) -> Result<BTreeMap<TrackKey, TrackFrame>, TrackError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    let fixed = ["timestamp_us", "dss", "scid"];
    if header.len() < 3 || header.iter().take(3).ne(fixed.iter().copied()) {
        return Err(TrackError::Header(format!(
            "expected leading columns {fixed:?}, got {:?}",
            header.iter().take(3).collect::<Vec<_>>()
        )));
    }
    let names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let mut frames: BTreeMap<TrackKey, TrackFrame> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parse_int = |i: usize| -> Result<i64, TrackError> {
            let s = rec.get(i).unwrap_or("");
            s.trim().parse().map_err(|_| TrackError::Parse {
                line,
                field: header[i].to_string(),
                value: s.to_string(),
            })
        };
        let ts = parse_int(0)?;
        let key = TrackKey::new(parse_int(1)? as u32, parse_int(2)? as u32);
        let frame = frames.entry(key).or_insert_with(|| TrackFrame {
            key,
            timestamps: Vec::new(),
            columns: names
                .iter()
                .map(|n| Column {
                    name: n.clone(),
                    values: Vec::new(),
                })
                .collect(),
            provenance,
        });
        frame.timestamps.push(ts);
        for (j, col) in frame.columns.iter_mut().enumerate() {
            let s = rec.get(j + 3).unwrap_or("");
            let v = if s.is_empty() {
                None
            } else {
                Some(s.trim().parse::<f64>().map_err(|_| TrackError::Parse {
                    line,
                    field: col.name.clone(),
                    value: s.to_string(),
                })?)
            };
            col.values.push(v);
        }
    }
    for f in frames.values() {
        f.validate()?;
    }
    Ok(frames)
}
