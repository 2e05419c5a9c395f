//! Thresholding of reconstruction-error series into anomaly events.

use std::ops::Range;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::ModelKind;
use crate::track::{TrackFrame, TrackKey};
use crate::verify::{Action, Severity};

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("error series is empty")]
    EmptySeries,
    #[error("invalid threshold method: {0}")]
    BadMethod(String),
    #[error("timestamp {0} precedes the frame")]
    TimestampOutOfRange(i64),
    #[error("status cannot move from {from} to {to}")]
    InvalidTransition { from: EventStatus, to: EventStatus },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum ThresholdMethod {
    /// `mean + k * population std`.
    MeanKSigma { k: f64 },
    /// Nearest-rank percentile, `p` in (0, 100).
    Percentile { p: f64 },
}

impl Default for ThresholdMethod {
    fn default() -> Self {
        ThresholdMethod::MeanKSigma { k: 3.0 }
    }
}

pub fn compute_threshold(errors: &[f64], method: ThresholdMethod) -> Result<f64, DetectError> {
    if errors.is_empty() {
        return Err(DetectError::EmptySeries);
    }
    let n = errors.len() as f64;
    match method {
        ThresholdMethod::MeanKSigma { k } => {
            if !(k > 0.0) {
                return Err(DetectError::BadMethod(format!("k must be positive, got {k}")));
            }
            let mean = errors.iter().sum::<f64>() / n;
            let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
            Ok(mean + k * var.sqrt())
        }
        ThresholdMethod::Percentile { p } => {
            if !(p > 0.0 && p < 100.0) {
                return Err(DetectError::BadMethod(format!("percentile must lie in (0, 100), got {p}")));
            }
            let mut sorted = errors.to_vec();
            sorted.sort_by(f64::total_cmp);
            let rank = ((p / 100.0 * n).ceil() as usize).clamp(1, sorted.len());
            Ok(sorted[rank - 1])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventStatus {
    Pending,
    Confirmed,
    Rejected,
    InfoRequested,
}

impl EventStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EventStatus::Pending => "pending",
            EventStatus::Confirmed => "confirmed",
            EventStatus::Rejected => "rejected",
            EventStatus::InfoRequested => "info-requested",
        }
    }

    /// Pending or waiting on more information.
    pub fn is_open(self) -> bool {
        matches!(self, EventStatus::Pending | EventStatus::InfoRequested)
    }

    pub fn can_become(self, to: EventStatus) -> bool {
        use EventStatus::*;
        matches!(
            (self, to),
            (Pending, Confirmed | Rejected | InfoRequested) | (InfoRequested, Confirmed | Rejected)
        )
    }
}

impl std::fmt::Display for EventStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EventStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pending" => Ok(EventStatus::Pending),
            "confirmed" => Ok(EventStatus::Confirmed),
            "rejected" => Ok(EventStatus::Rejected),
            "info-requested" => Ok(EventStatus::InfoRequested),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventContext {
    pub wind: Option<f64>,
    pub rain: Option<f64>,
    pub temperature: Option<f64>,
    pub humidity: Option<f64>,
}

impl EventContext {
    pub fn is_empty(&self) -> bool {
        self.wind.is_none() && self.rain.is_none() && self.temperature.is_none() && self.humidity.is_none()
    }
}

/// Frame columns that feed [`EventContext`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextColumns {
    pub wind: Option<String>,
    pub rain: Option<String>,
    pub temperature: Option<String>,
    pub humidity: Option<String>,
}

impl Default for ContextColumns {
    fn default() -> Self {
        Self {
            wind: Some("WIND".into()),
            rain: Some("RAIN".into()),
            temperature: Some("TEMP".into()),
            humidity: Some("WX_HUMID".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub id: String,
    pub key: TrackKey,
    pub timestamp_us: i64,
    pub window: usize,
    pub error: f64,
    pub threshold: f64,
    /// Modelled feature values at the event row.
    pub features: IndexMap<String, f64>,
    /// Feature with the largest reconstruction error in the window.
    pub top_feature: Option<String>,
    pub context: EventContext,
    pub status: EventStatus,
    pub model: ModelKind,
    pub severity: Option<Severity>,
    pub proposed_action: Option<Action>,
}

impl AnomalyEvent {
    pub fn transition(&mut self, to: EventStatus) -> Result<(), DetectError> {
        if !self.status.can_become(to) {
            return Err(DetectError::InvalidTransition { from: self.status, to });
        }
        self.status = to;
        Ok(())
    }
}

/// Stable event id from the track, instant, model and window.
pub fn event_id(key: TrackKey, timestamp_us: i64, model: ModelKind, window: usize) -> String {
    let mut h = Sha256::new();
    h.update(format!("{}/{}/{}/{}/{}", key.dss, key.scid, timestamp_us, model.as_str(), window));
    hex::encode(&h.finalize()[..12])
}

/// Reconstruction errors for one scored batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub model: ModelKind,
    pub errors: Vec<f64>,
    /// Per-window, per-feature errors; may be empty.
    pub feature_errors: Vec<Vec<f64>>,
    /// Modelled feature names, matching `feature_errors` columns.
    pub features: Vec<String>,
    pub index_map: Vec<Range<usize>>,
}

/// One pending event per window whose error is strictly above `threshold`,
/// stamped with the window's last row.
pub fn flag_anomalies(series: &ErrorSeries, threshold: f64, frame: &TrackFrame) -> Vec<AnomalyEvent> {
    if threshold.is_nan() {
        return Vec::new();
    }
    series
        .errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > threshold)
        .filter_map(|(w, &error)| {
            let row = series.index_map.get(w)?.end.checked_sub(1)?;
            let timestamp_us = *frame.timestamps.get(row)?;
            let features = series
                .features
                .iter()
                .filter_map(|f| frame.value(f, row).map(|v| (f.clone(), v)))
                .collect();
            let top_feature = series.feature_errors.get(w).and_then(|fe| {
                fe.iter()
                    .enumerate()
                    .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
                        Some((_, b)) if b >= v => best,
                        _ => Some((i, v)),
                    })
                    .and_then(|(i, _)| series.features.get(i).cloned())
            });
            Some(AnomalyEvent {
                id: event_id(frame.key, timestamp_us, series.model, w),
                key: frame.key,
                timestamp_us,
                window: w,
                error,
                threshold,
                features,
                top_feature,
                context: EventContext::default(),
                status: EventStatus::Pending,
                model: series.model,
                severity: None,
                proposed_action: None,
            })
        })
        .collect()
}

/// Fills the context from the row at or before the event instant.
pub fn attach_context(
    event: &AnomalyEvent,
    frame: &TrackFrame,
    columns: &ContextColumns,
) -> Result<AnomalyEvent, DetectError> {
    let row = frame
        .row_at_or_before(event.timestamp_us)
        .ok_or(DetectError::TimestampOutOfRange(event.timestamp_us))?;
    let read = |c: &Option<String>| c.as_deref().and_then(|name| frame.value(name, row));
    let mut out = event.clone();
    out.context = EventContext {
        wind: read(&columns.wind),
        rain: read(&columns.rain),
        temperature: read(&columns.temperature),
        humidity: read(&columns.humidity),
    };
    Ok(out)
}
