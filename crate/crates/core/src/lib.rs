//! Zero-configuration anomaly detection over method-call sensor traces.
//!
//! The pipeline reads `timestamp,count,SID,value` sensor logs ([`event`]),
//! optionally derives new sensors from existing ones ([`sensor`]), groups
//! events into per-request fingerprints ([`fingerprint`]) and flags periods
//! in which a fingerprint class occurs far more often than its own history
//! suggests ([`detector`]). [`sim`] generates instrumented-application logs
//! with labelled attacks, and [`experiment`] runs the end-to-end checks.

pub mod detector;
pub mod event;
pub mod experiment;
pub mod fingerprint;
pub mod quantile;
pub mod report;
pub mod sensor;
pub mod sim;

pub use detector::{
    detect_stream, DetectOptions, Detection, DetectorConfig, ModelMode, NormalModel, Verdict,
};
pub use event::{parse_event, read_log, write_log, SensorEvent, SensorId, SensorValue};
pub use fingerprint::{ClassKey, Fingerprint, FingerprintConfig, GroupingPolicy};
pub use report::RunReport;
pub use sim::{ScenarioKind, ScenarioSpec, SimOutput, Site};
