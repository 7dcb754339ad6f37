//! History-derived normal model and the per-period decision rule.
//!
//! For each fingerprint class the model keeps the counts of the last `n`
//! periods that were not classified as attacks. The class's baseline `α` is
//! the nearest-rank quantile of that history, and a period is an attack for
//! the class when its count reaches `α · p`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::event::SensorEvent;
use crate::fingerprint::{
    fingerprint_stream, period_index, ClassKey, FingerprintConfig, FingerprintError, GroupingPolicy,
};
use crate::quantile::select_nearest_rank;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DetectorError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelMode {
    /// One history per fingerprint class, global totals as fallback.
    #[default]
    PerClass,
    /// A single history of per-period totals over all classes.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub period_ms: u64,
    pub history_periods: usize,
    pub sensitivity: f64,
    pub quantile: f64,
    pub warmup_periods: usize,
    pub mode: ModelMode,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            period_ms: 10_000,
            history_periods: 30,
            sensitivity: 1.5,
            quantile: 0.95,
            warmup_periods: 30,
            mode: ModelMode::PerClass,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: String| Err(DetectorError::Config(m));
        if self.period_ms == 0 {
            return bad("period must be positive".into());
        }
        if self.history_periods == 0 {
            return bad("history must hold at least one period".into());
        }
        if !(self.sensitivity.is_finite() && self.sensitivity > 0.0) {
            return bad(format!("sensitivity {} must be positive", self.sensitivity));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return bad(format!("quantile {} outside (0, 1)", self.quantile));
        }
        if self.warmup_periods == 0 || self.warmup_periods > self.history_periods {
            return bad(format!(
                "warm-up {} must be between 1 and the history length {}",
                self.warmup_periods, self.history_periods
            ));
        }
        Ok(())
    }
}

/// Nearest-rank quantile of a count history.
pub fn alpha(history: &[u64], q: f64) -> Result<u64, DetectorError> {
    let mut sorted = history.to_vec();
    select_nearest_rank(&mut sorted, q).ok_or(DetectorError::EmptyHistory)
}

/// `count >= alpha * p`, evaluated exactly.
///
/// `p` is a finite binary fraction `m · 2^e`, so the comparison is done on
/// integers instead of rounding the product.
pub fn exceeds(count: u64, alpha: u64, p: f64) -> bool {
    debug_assert!(p.is_finite() && p >= 0.0);
    if alpha == 0 || p == 0.0 {
        return true;
    }
    let bits = p.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, exp) = if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp_bits - 1075)
    };
    // alpha * mantissa < 2^117
    let lhs = alpha as u128 * mantissa as u128;
    let count = count as u128;
    if exp >= 0 {
        // count >= lhs * 2^exp
        if lhs.leading_zeros() as i32 <= exp {
            return false;
        }
        count >= lhs << exp
    } else {
        // count * 2^-exp >= lhs
        let shift = -exp;
        if count == 0 {
            return false;
        }
        if count.leading_zeros() as i32 <= shift {
            return true;
        }
        count << shift >= lhs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Attack,
    NotAttack,
}

pub fn classify(count: u64, alpha: u64, p: f64) -> Classification {
    if exceeds(count, alpha, p) {
        Classification::Attack
    } else {
        Classification::NotAttack
    }
}

/// What a verdict is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subject {
    Class(ClassKey),
    /// All fingerprints of the period, in global mode.
    All,
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Class(k) => k.fmt(f),
            Subject::All => f.write_str("*"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub period_index: i64,
    pub subject: Subject,
    pub count: u64,
    /// Baseline used, absent during warm-up or without any baseline.
    pub alpha: Option<u64>,
    pub threshold: Option<f64>,
    pub attack: bool,
}

impl Verdict {
    /// One line of the verdict report.
    pub fn report_line(&self) -> String {
        let alpha = self
            .alpha
            .map_or_else(|| "-".to_string(), |a| a.to_string());
        let threshold = self
            .threshold
            .map_or_else(|| "-".to_string(), |t| t.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.period_index,
            self.subject,
            self.count,
            alpha,
            threshold,
            if self.attack { "ATTACK" } else { "OK" }
        )
    }
}

#[derive(Debug, Clone)]
struct History {
    counts: VecDeque<u64>,
    cap: usize,
}

impl History {
    fn new(cap: usize) -> Self {
        History {
            counts: VecDeque::with_capacity(cap),
            cap,
        }
    }

    fn push(&mut self, count: u64) {
        if self.counts.len() == self.cap {
            self.counts.pop_front();
        }
        self.counts.push_back(count);
    }

    /// Baseline of this history; zero means "normally absent" and gives no
    /// usable baseline.
    fn alpha(&self, q: f64) -> Option<u64> {
        let mut v: Vec<u64> = self.counts.iter().copied().collect();
        select_nearest_rank(&mut v, q).filter(|&a| a > 0)
    }

    fn is_dormant(&self) -> bool {
        self.counts.len() == self.cap && self.counts.iter().all(|&c| c == 0)
    }
}

/// Normal model learned from the detector's own history.
#[derive(Debug, Clone)]
pub struct NormalModel {
    cfg: DetectorConfig,
    classes: BTreeMap<ClassKey, History>,
    global: History,
    completed: usize,
}

impl NormalModel {
    pub fn new(cfg: DetectorConfig) -> Result<Self, DetectorError> {
        cfg.validate()?;
        Ok(NormalModel {
            cfg,
            classes: BTreeMap::new(),
            global: History::new(cfg.history_periods),
            completed: 0,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Periods stepped so far.
    pub fn completed_periods(&self) -> usize {
        self.completed
    }

    pub fn in_warmup(&self) -> bool {
        self.completed < self.cfg.warmup_periods
    }

    /// Retained counts of one class, oldest first.
    pub fn class_history(&self, class: ClassKey) -> Option<Vec<u64>> {
        self.classes
            .get(&class)
            .map(|h| h.counts.iter().copied().collect())
    }

    pub fn global_history(&self) -> Vec<u64> {
        self.global.counts.iter().copied().collect()
    }

    pub fn known_classes(&self) -> impl Iterator<Item = ClassKey> + '_ {
        self.classes.keys().copied()
    }

    /// Closes one period. `counts` holds the classes seen in it; classes the
    /// model knows but that are missing count as zero.
    pub fn step(&mut self, period_index: i64, counts: &BTreeMap<ClassKey, u64>) -> Vec<Verdict> {
        let total: u64 = counts.values().sum();
        let warmup = self.in_warmup();
        let verdicts = match self.cfg.mode {
            ModelMode::Global => {
                let v = self.judge(
                    period_index,
                    Subject::All,
                    total,
                    warmup,
                    self.global.alpha(self.cfg.quantile),
                );
                vec![v]
            }
            ModelMode::PerClass => {
                let mut subjects: Vec<ClassKey> = self.classes.keys().copied().collect();
                subjects.extend(counts.keys().filter(|k| !self.classes.contains_key(k)));
                subjects.sort_unstable();
                let global_alpha = self.global.alpha(self.cfg.quantile);
                let verdicts: Vec<Verdict> = subjects
                    .into_iter()
                    .map(|class| {
                        let count = counts.get(&class).copied().unwrap_or(0);
                        let baseline = self
                            .classes
                            .get(&class)
                            .and_then(|h| h.alpha(self.cfg.quantile))
                            .or(global_alpha);
                        self.judge(period_index, Subject::Class(class), count, warmup, baseline)
                    })
                    .collect();
                for v in &verdicts {
                    if let (Subject::Class(class), false) = (v.subject, v.attack) {
                        self.classes
                            .entry(class)
                            .or_insert_with(|| History::new(self.cfg.history_periods))
                            .push(v.count);
                    }
                }
                self.classes.retain(|_, h| !h.is_dormant());
                verdicts
            }
        };
        if verdicts.iter().all(|v| !v.attack) {
            self.global.push(total);
        }
        self.completed += 1;
        verdicts
    }

    fn judge(
        &self,
        period_index: i64,
        subject: Subject,
        count: u64,
        warmup: bool,
        baseline: Option<u64>,
    ) -> Verdict {
        match baseline {
            Some(alpha) if !warmup => Verdict {
                period_index,
                subject,
                count,
                alpha: Some(alpha),
                threshold: Some(alpha as f64 * self.cfg.sensitivity),
                attack: classify(count, alpha, self.cfg.sensitivity) == Classification::Attack,
            },
            _ => Verdict {
                period_index,
                subject,
                count,
                alpha: None,
                threshold: None,
                attack: false,
            },
        }
    }
}

/// Options for running the full pipeline over a log.
#[derive(Debug, Clone, Copy, Default)]
pub struct DetectOptions {
    pub detector: DetectorConfig,
    pub grouping: GroupingPolicy,
    pub fingerprint: FingerprintConfig,
}

#[derive(Debug, Clone, Default)]
pub struct Detection {
    /// Timestamp of the first event; period 0 starts here.
    pub t0: Option<u64>,
    pub periods: usize,
    pub fingerprints: usize,
    pub verdicts: Vec<Verdict>,
}

impl Detection {
    pub fn attacks(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| v.attack)
    }

    pub fn attack_count(&self) -> usize {
        self.attacks().count()
    }
}

/// Groups, fingerprints, counts and judges a whole stream, one period at a
/// time from the first event's period to the last. Periods without any
/// request are stepped with zero counts.
pub fn detect_stream(
    events: &[SensorEvent],
    opts: &DetectOptions,
) -> Result<Detection, DetectorError> {
    let mut model = NormalModel::new(opts.detector)?;
    let Some(t0) = events.first().map(|e| e.timestamp) else {
        return Ok(Detection::default());
    };
    let fingerprints = fingerprint_stream(events, opts.grouping, &opts.fingerprint)?;
    let period_ms = opts.detector.period_ms;

    let mut per_period: BTreeMap<i64, BTreeMap<ClassKey, u64>> = BTreeMap::new();
    for fp in &fingerprints {
        *per_period
            .entry(period_index(fp.first_ts, t0, period_ms))
            .or_default()
            .entry(fp.class_key)
            .or_insert(0) += 1;
    }
    let last_ts = events.iter().map(|e| e.timestamp).max().unwrap_or(t0);
    let first = per_period.keys().next().copied().unwrap_or(0).min(0);
    let last =
        period_index(last_ts, t0, period_ms).max(per_period.keys().last().copied().unwrap_or(0));

    let empty = BTreeMap::new();
    let mut verdicts = Vec::new();
    for idx in first..=last {
        verdicts.extend(model.step(idx, per_period.get(&idx).unwrap_or(&empty)));
    }
    Ok(Detection {
        t0: Some(t0),
        periods: (last - first + 1) as usize,
        fingerprints: fingerprints.len(),
        verdicts,
    })
}
