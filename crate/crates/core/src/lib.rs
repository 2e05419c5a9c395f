//! Telemetry anomaly detection pipeline for ground-station tracks.
//!
//! The crate is organised bottom-up:
//!
//! * [`track`] holds the canonical multivariate frame model and its CSV form.
//! * [`ingest`] turns a file-based mailbox of transmitter messages into records.
//! * [`preprocess`] scales, filters, analyses and windows frames.
//! * [`nn`] is a small neural-network core with three reconstruction models.
//! * [`detect`] thresholds reconstruction errors into anomaly events.
//! * [`verify`] is the Q-learning severity verifier driven by operator feedback.
//! * [`report`] builds prompts, pair datasets and discrepancy reports.
//! * [`agent`] wires all of the above into a deterministic workflow graph.
//! * [`synthetic`] generates seeded tracks with planted spikes.
//! * [`api`] holds the request and response types shared with the service.

pub mod agent;
pub mod api;
pub mod detect;
pub mod ingest;
pub mod nn;
pub mod preprocess;
pub mod report;
pub mod synthetic;
pub mod track;
pub mod verify;

pub use track::{Provenance, TrackFrame, TrackKey};
