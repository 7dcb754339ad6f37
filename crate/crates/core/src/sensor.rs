//! Derived sensors: alert, filter, one-time and continuous aggregation.
//!
//! Each sensor is a deterministic transformer over an ordered event stream.
//! Events whose SID is not one the sensor listens to are ignored.

use std::collections::BTreeMap;

use regex::Regex;
use thiserror::Error;

use crate::event::{CountAssigner, SensorEvent, SensorId, SensorValue, VID_NUMERIC};
use crate::quantile::select_nearest_rank;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("invalid sensor configuration: {0}")]
    Config(String),
    #[error("invalid pattern: {0}")]
    Pattern(#[from] regex::Error),
    #[error("sensor {sid} carries a non-numeric value")]
    TypeMismatch { sid: SensorId },
    #[error("input {sid} missing at t={timestamp}")]
    MissingInput { sid: SensorId, timestamp: u64 },
    #[error("inputs are not aligned on one timestamp")]
    Misaligned,
    #[error("aggregate of {0} is not a finite number")]
    NonFinite(String),
}

fn numeric(event: &SensorEvent) -> Result<f64, SensorError> {
    event
        .value
        .as_f64()
        .ok_or_else(|| SensorError::TypeMismatch {
            sid: event.sid.clone(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alert {
    pub sid: SensorId,
    pub timestamp: u64,
    pub violated: Bound,
    pub observed: f64,
}

/// Raises an alert when a value leaves `[lower, upper]`. Values equal to a
/// bound pass.
#[derive(Debug, Clone)]
pub struct AlertSensor {
    target: SensorId,
    lower: Option<f64>,
    upper: Option<f64>,
}

impl AlertSensor {
    pub fn new(
        target: SensorId,
        lower: Option<f64>,
        upper: Option<f64>,
    ) -> Result<Self, SensorError> {
        match (lower, upper) {
            (None, None) => return Err(SensorError::Config("alert sensor needs a bound".into())),
            (Some(l), Some(u)) if l > u => {
                return Err(SensorError::Config(format!(
                    "lower bound {l} exceeds upper bound {u}"
                )))
            }
            _ => {}
        }
        if lower.is_some_and(f64::is_nan) || upper.is_some_and(f64::is_nan) {
            return Err(SensorError::Config("bounds must be numbers".into()));
        }
        Ok(AlertSensor {
            target,
            lower,
            upper,
        })
    }

    pub fn target(&self) -> &SensorId {
        &self.target
    }

    pub fn evaluate(&self, event: &SensorEvent) -> Result<Option<Alert>, SensorError> {
        if event.sid != self.target {
            return Ok(None);
        }
        let v = numeric(event)?;
        let violated = if self.lower.is_some_and(|l| v < l) {
            Some(Bound::Lower)
        } else if self.upper.is_some_and(|u| v > u) {
            Some(Bound::Upper)
        } else {
            None
        };
        Ok(violated.map(|violated| Alert {
            sid: event.sid.clone(),
            timestamp: event.timestamp,
            violated,
            observed: v,
        }))
    }
}

/// Re-labels events of `target` whose rendered value matches a pattern.
#[derive(Debug, Clone)]
pub struct FilterSensor {
    target: SensorId,
    pattern: Regex,
    output: SensorId,
}

impl FilterSensor {
    /// The output SID must differ from the target but keep its `vid`, so that
    /// re-labeled records still decode.
    pub fn new(target: SensorId, pattern: &str, output: SensorId) -> Result<Self, SensorError> {
        if output == target {
            return Err(SensorError::Config(
                "filter output must differ from its target".into(),
            ));
        }
        if output.vid() != target.vid() {
            return Err(SensorError::Config(format!(
                "filter output vid {} does not match target vid {}",
                output.vid(),
                target.vid()
            )));
        }
        Ok(FilterSensor {
            target,
            pattern: Regex::new(pattern)?,
            output,
        })
    }

    pub fn apply(&self, event: &SensorEvent) -> Option<SensorEvent> {
        if event.sid != self.target || !self.pattern.is_match(&event.value.to_string()) {
            return None;
        }
        Some(SensorEvent {
            sid: self.output.clone(),
            ..event.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineOp {
    Sum,
    Product,
    /// Natural logarithm of a single input.
    LogScale,
}

/// Combines values of several sensors recorded at the same instant.
#[derive(Debug, Clone)]
pub struct OneTimeAggregation {
    inputs: Vec<SensorId>,
    op: CombineOp,
    output: SensorId,
}

impl OneTimeAggregation {
    pub fn new(
        inputs: Vec<SensorId>,
        op: CombineOp,
        output: SensorId,
    ) -> Result<Self, SensorError> {
        match op {
            CombineOp::LogScale if inputs.len() != 1 => {
                return Err(SensorError::Config(
                    "log scaling takes exactly one input".into(),
                ))
            }
            CombineOp::Sum | CombineOp::Product if inputs.len() < 2 => {
                return Err(SensorError::Config(
                    "aggregation needs at least two inputs".into(),
                ))
            }
            _ => {}
        }
        for (i, sid) in inputs.iter().enumerate() {
            if inputs[..i].contains(sid) {
                return Err(SensorError::Config(format!("duplicate input {sid}")));
            }
        }
        if output.vid() != VID_NUMERIC {
            return Err(SensorError::Config(
                "aggregation output must be numeric (vid 0)".into(),
            ));
        }
        Ok(OneTimeAggregation { inputs, op, output })
    }

    pub fn inputs(&self) -> &[SensorId] {
        &self.inputs
    }

    /// Combines one event per input, all at the same timestamp. Events of
    /// other sensors in `events` are ignored. The output has count 0.
    pub fn aggregate(&self, events: &[SensorEvent]) -> Result<SensorEvent, SensorError> {
        let relevant: Vec<&SensorEvent> = events
            .iter()
            .filter(|e| self.inputs.contains(&e.sid))
            .collect();
        let timestamp = match relevant.first() {
            Some(e) => e.timestamp,
            None => {
                return Err(SensorError::MissingInput {
                    sid: self.inputs[0].clone(),
                    timestamp: events.first().map_or(0, |e| e.timestamp),
                })
            }
        };
        if relevant.iter().any(|e| e.timestamp != timestamp) {
            return Err(SensorError::Misaligned);
        }
        let mut values = Vec::with_capacity(self.inputs.len());
        for sid in &self.inputs {
            let event = relevant.iter().find(|e| &e.sid == sid).ok_or_else(|| {
                SensorError::MissingInput {
                    sid: sid.clone(),
                    timestamp,
                }
            })?;
            values.push(numeric(event)?);
        }
        let value = match self.op {
            CombineOp::Sum => values.iter().sum(),
            CombineOp::Product => values.iter().product(),
            CombineOp::LogScale => values[0].ln(),
        };
        if !value.is_finite() {
            return Err(SensorError::NonFinite(format!("{values:?}")));
        }
        Ok(SensorEvent::new(
            timestamp,
            0,
            self.output.clone(),
            SensorValue::Numeric64(value),
        ))
    }

    /// Runs over an ordered stream, emitting one output at every timestamp
    /// where all inputs are present. Instants with only some inputs are
    /// skipped.
    pub fn process(&self, stream: &[SensorEvent]) -> Result<Vec<SensorEvent>, SensorError> {
        let mut by_instant: BTreeMap<u64, Vec<SensorEvent>> = BTreeMap::new();
        for e in stream.iter().filter(|e| self.inputs.contains(&e.sid)) {
            by_instant.entry(e.timestamp).or_default().push(e.clone());
        }
        let mut out = Vec::new();
        for events in by_instant.values() {
            if self
                .inputs
                .iter()
                .all(|sid| events.iter().any(|e| &e.sid == sid))
            {
                out.push(self.aggregate(events)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowOp {
    Mean,
    /// Nearest-rank quantile at level `q` in `(0, 1)`.
    Quantile(f64),
}

/// Mean or quantile of one sensor over tumbling windows aligned to the epoch.
///
/// Window `k` covers `[k * width, (k + 1) * width)` and its output is
/// stamped with the window end.
#[derive(Debug, Clone)]
pub struct ContinuousAggregation {
    input: SensorId,
    window_ms: u64,
    op: WindowOp,
    output: SensorId,
    open: Option<(u64, Vec<f64>)>,
    counts: CountAssigner,
}

impl ContinuousAggregation {
    pub fn new(
        input: SensorId,
        window_ms: u64,
        op: WindowOp,
        output: SensorId,
    ) -> Result<Self, SensorError> {
        if window_ms == 0 {
            return Err(SensorError::Config("window must be positive".into()));
        }
        if let WindowOp::Quantile(q) = op {
            if !(q > 0.0 && q < 1.0) {
                return Err(SensorError::Config(format!(
                    "quantile level {q} outside (0, 1)"
                )));
            }
        }
        if output.vid() != VID_NUMERIC {
            return Err(SensorError::Config(
                "aggregation output must be numeric (vid 0)".into(),
            ));
        }
        Ok(ContinuousAggregation {
            input,
            window_ms,
            op,
            output,
            open: None,
            counts: CountAssigner::new(),
        })
    }

    /// Feeds one event; returns the output of a window closed by it.
    pub fn push(&mut self, event: &SensorEvent) -> Result<Option<SensorEvent>, SensorError> {
        if event.sid != self.input {
            return Ok(None);
        }
        let v = numeric(event)?;
        let window = event.timestamp / self.window_ms;
        let mut closed = None;
        match &mut self.open {
            Some((w, values)) if *w == window => values.push(v),
            _ => {
                closed = self.close()?;
                self.open = Some((window, vec![v]));
            }
        }
        Ok(closed)
    }

    /// Closes the window still open at end of stream.
    pub fn finish(&mut self) -> Result<Option<SensorEvent>, SensorError> {
        self.close()
    }

    fn close(&mut self) -> Result<Option<SensorEvent>, SensorError> {
        let Some((window, mut values)) = self.open.take() else {
            return Ok(None);
        };
        let value = match self.op {
            WindowOp::Mean => values.iter().sum::<f64>() / values.len() as f64,
            WindowOp::Quantile(q) => {
                select_nearest_rank(&mut values, q).expect("window is non-empty")
            }
        };
        if !value.is_finite() {
            return Err(SensorError::NonFinite(format!("window {window}")));
        }
        let end = (window + 1) * self.window_ms;
        Ok(Some(SensorEvent::new(
            end,
            self.counts.next(end),
            self.output.clone(),
            SensorValue::Numeric64(value),
        )))
    }

    /// Runs a fresh copy of this sensor over a whole stream.
    pub fn process(&self, stream: &[SensorEvent]) -> Result<Vec<SensorEvent>, SensorError> {
        let mut agg = ContinuousAggregation::new(
            self.input.clone(),
            self.window_ms,
            self.op,
            self.output.clone(),
        )?;
        let mut out = Vec::new();
        for e in stream {
            out.extend(agg.push(e)?);
        }
        out.extend(agg.finish()?);
        Ok(out)
    }
}
