//! Request fingerprints.
//!
//! A request's fingerprint is the ordered chain of sensors it triggered,
//! each paired with its duration quantized to a fixed bucket. Two requests
//! belong to the same fingerprint class exactly when their chains are equal.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::event::{SensorEvent, SensorId, SensorValue};

/// Method name of the request-boundary sensor. A `State32` event on a SID
/// with this method opens a new request; its value is the request ordinal.
pub const MARKER_METHOD: &str = "beginRequest";

pub const DEFAULT_BUCKET_MS: u64 = 3;

pub fn is_marker(event: &SensorEvent) -> bool {
    event.sid.method() == MARKER_METHOD && matches!(event.value, SensorValue::State32(_))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("trace contains no events")]
    EmptyTrace,
    #[error("bucket width must be positive")]
    ZeroBucket,
}

/// How events are attributed to requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupingPolicy {
    /// Every marker event starts a new trace.
    #[default]
    Tagged,
    /// A silence of at least this many milliseconds starts a new trace.
    Gap(u64),
}

impl FromStr for GroupingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "tagged" {
            return Ok(GroupingPolicy::Tagged);
        }
        s.strip_prefix("gap:")
            .and_then(|ms| ms.parse().ok())
            .map(GroupingPolicy::Gap)
            .ok_or_else(|| format!("unknown grouping `{s}` (expected `tagged` or `gap:MS`)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RequestId {
    /// Ordinal carried by the request's marker.
    Marker(u32),
    /// Events seen before the first marker.
    Orphan,
    /// n-th trace cut by the gap policy.
    Gap(usize),
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequestId::Marker(n) => write!(f, "req-{n}"),
            RequestId::Orphan => f.write_str("orphan"),
            RequestId::Gap(n) => write!(f, "gap-{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestTrace {
    pub request_id: RequestId,
    pub events: Vec<SensorEvent>,
}

impl RequestTrace {
    pub fn first_timestamp(&self) -> Option<u64> {
        self.events.first().map(|e| e.timestamp)
    }
}

/// Splits an ordered stream into per-request traces.
pub fn group_requests(events: &[SensorEvent], policy: GroupingPolicy) -> Vec<RequestTrace> {
    let mut traces: Vec<RequestTrace> = Vec::new();
    match policy {
        GroupingPolicy::Tagged => {
            for e in events {
                match (&e.value, is_marker(e)) {
                    (SensorValue::State32(ordinal), true) => traces.push(RequestTrace {
                        request_id: RequestId::Marker(*ordinal),
                        events: vec![e.clone()],
                    }),
                    _ => match traces.last_mut() {
                        Some(t) => t.events.push(e.clone()),
                        None => traces.push(RequestTrace {
                            request_id: RequestId::Orphan,
                            events: vec![e.clone()],
                        }),
                    },
                }
            }
        }
        GroupingPolicy::Gap(gap) => {
            let mut last_ts: Option<u64> = None;
            for e in events {
                let split = last_ts.is_none_or(|prev| e.timestamp.saturating_sub(prev) >= gap);
                if split {
                    traces.push(RequestTrace {
                        request_id: RequestId::Gap(traces.len()),
                        events: Vec::new(),
                    });
                }
                traces
                    .last_mut()
                    .expect("pushed above")
                    .events
                    .push(e.clone());
                last_ts = Some(e.timestamp);
            }
        }
    }
    traces
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkValue {
    /// Quantized duration in milliseconds.
    Duration(i64),
    State(u32),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChainLink {
    pub sid: SensorId,
    pub value: LinkValue,
}

impl fmt::Display for ChainLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            LinkValue::Duration(ms) => write!(f, "{}={}ms", self.sid, ms),
            LinkValue::State(s) => write!(f, "{}=#{}", self.sid, s),
            LinkValue::Text(t) => write!(f, "{}={:?}", self.sid, t),
        }
    }
}

/// Stable 64-bit identity of a fingerprint class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassKey(pub u64);

impl ClassKey {
    pub fn of_chain(chain: &[ChainLink]) -> ClassKey {
        let mut h = Sha256::new();
        for link in chain {
            let sid = link.sid.to_string();
            h.update((sid.len() as u64).to_le_bytes());
            h.update(sid.as_bytes());
            match &link.value {
                LinkValue::Duration(ms) => {
                    h.update([0u8]);
                    h.update(ms.to_le_bytes());
                }
                LinkValue::State(s) => {
                    h.update([1u8]);
                    h.update(s.to_le_bytes());
                }
                LinkValue::Text(t) => {
                    h.update([2u8]);
                    h.update((t.len() as u64).to_le_bytes());
                    h.update(t.as_bytes());
                }
            }
        }
        let digest = h.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        ClassKey(u64::from_be_bytes(first))
    }
}

impl fmt::Display for ClassKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for ClassKey {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s, 16).map(ClassKey)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FingerprintConfig {
    pub bucket_ms: u64,
    /// Also chain `State32` and `Text` events (markers excepted).
    pub include_non_durations: bool,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        FingerprintConfig {
            bucket_ms: DEFAULT_BUCKET_MS,
            include_non_durations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub request_id: RequestId,
    /// Timestamp of the trace's first event.
    pub first_ts: u64,
    pub chain: Vec<ChainLink>,
    /// Unquantized durations, one per `Duration` link, in chain order.
    pub raw_durations: Vec<f64>,
    pub class_key: ClassKey,
}

impl Fingerprint {
    /// Sum of the unquantized durations.
    pub fn total_duration(&self) -> f64 {
        self.raw_durations.iter().sum()
    }

    pub fn render_chain(&self) -> String {
        self.chain
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" > ")
    }
}

fn quantize(duration: f64, bucket_ms: u64) -> i64 {
    let b = bucket_ms as f64;
    ((duration / b).floor() * b) as i64
}

pub fn extract_fingerprint(
    trace: &RequestTrace,
    cfg: &FingerprintConfig,
) -> Result<Fingerprint, FingerprintError> {
    if cfg.bucket_ms == 0 {
        return Err(FingerprintError::ZeroBucket);
    }
    let first = trace.events.first().ok_or(FingerprintError::EmptyTrace)?;
    let mut chain = Vec::new();
    let mut raw_durations = Vec::new();
    for e in &trace.events {
        let value = match &e.value {
            // sub-resolution durations are never emitted by a real sensor
            SensorValue::Numeric64(d) if *d < 1.0 => continue,
            SensorValue::Numeric64(d) => {
                raw_durations.push(*d);
                LinkValue::Duration(quantize(*d, cfg.bucket_ms))
            }
            _ if is_marker(e) || !cfg.include_non_durations => continue,
            SensorValue::State32(s) => LinkValue::State(*s),
            SensorValue::Text(t) => LinkValue::Text(t.clone()),
        };
        chain.push(ChainLink {
            sid: e.sid.clone(),
            value,
        });
    }
    Ok(Fingerprint {
        request_id: trace.request_id,
        first_ts: first.timestamp,
        class_key: ClassKey::of_chain(&chain),
        chain,
        raw_durations,
    })
}

/// Groups and fingerprints a whole stream. Empty traces cannot occur.
pub fn fingerprint_stream(
    events: &[SensorEvent],
    policy: GroupingPolicy,
    cfg: &FingerprintConfig,
) -> Result<Vec<Fingerprint>, FingerprintError> {
    group_requests(events, policy)
        .iter()
        .map(|t| extract_fingerprint(t, cfg))
        .collect()
}

/// Period of a timestamp relative to `t0`.
pub fn period_index(ts: u64, t0: u64, period_ms: u64) -> i64 {
    (ts as i64 - t0 as i64).div_euclid(period_ms as i64)
}

/// Occurrences of each class per period, keyed by `(period_index, class)`.
pub fn fingerprint_class_counts(
    fingerprints: &[Fingerprint],
    period_ms: u64,
    t0: u64,
) -> BTreeMap<(i64, ClassKey), u64> {
    assert!(period_ms > 0, "period must be positive");
    let mut counts = BTreeMap::new();
    for fp in fingerprints {
        *counts
            .entry((period_index(fp.first_ts, t0, period_ms), fp.class_key))
            .or_insert(0) += 1;
    }
    counts
}

/// One fingerprint class with its members' statistics.
#[derive(Debug, Clone)]
pub struct ClassSummary {
    pub class_key: ClassKey,
    pub count: usize,
    pub example: Fingerprint,
    /// Per chain position: mean of the unquantized durations.
    pub mean_durations: Vec<f64>,
}

impl ClassSummary {
    /// `class_key<TAB>count<TAB>example_chain`
    pub fn listing_line(&self) -> String {
        format!(
            "{}\t{}\t{}",
            self.class_key,
            self.count,
            self.example.render_chain()
        )
    }

    /// Plot rows `class_key<TAB>position<TAB>sid<TAB>mean_duration_ms`, one
    /// per duration link, positions counted from 0.
    pub fn plot_rows(&self) -> impl Iterator<Item = String> + '_ {
        self.example
            .chain
            .iter()
            .filter(|l| matches!(l.value, LinkValue::Duration(_)))
            .zip(&self.mean_durations)
            .enumerate()
            .map(move |(i, (link, mean))| {
                format!("{}\t{}\t{}\t{}", self.class_key, i, link.sid, mean)
            })
    }
}

/// Header line of the plot data written by [`write_class_plot`].
pub const PLOT_HEADER: &str = "class_key\tposition\tsid\tmean_duration_ms";

pub fn write_class_plot<W: Write>(mut out: W, summaries: &[ClassSummary]) -> io::Result<()> {
    writeln!(out, "{PLOT_HEADER}")?;
    for s in summaries {
        for row in s.plot_rows() {
            writeln!(out, "{row}")?;
        }
    }
    out.flush()
}

/// Summarises fingerprints by class, largest classes first.
pub fn summarize_classes(fingerprints: &[Fingerprint]) -> Vec<ClassSummary> {
    let mut by_class: BTreeMap<ClassKey, Vec<&Fingerprint>> = BTreeMap::new();
    for fp in fingerprints {
        by_class.entry(fp.class_key).or_default().push(fp);
    }
    let mut out: Vec<ClassSummary> = by_class
        .into_iter()
        .map(|(class_key, members)| {
            let width = members[0].raw_durations.len();
            let mean_durations = (0..width)
                .map(|i| {
                    members.iter().map(|m| m.raw_durations[i]).sum::<f64>() / members.len() as f64
                })
                .collect();
            ClassSummary {
                class_key,
                count: members.len(),
                example: members[0].clone(),
                mean_durations,
            }
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then(a.class_key.cmp(&b.class_key)));
    out
}
