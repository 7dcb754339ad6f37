//! Scoring detector output against simulator ground truth.

use std::fmt;

use crate::detector::{Detection, DetectorConfig};
use crate::sim::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Latency {
    /// No attack in the ground truth.
    NotApplicable,
    Missed,
    /// Periods from the onset period to the first attack verdict.
    Periods(i64),
}

impl fmt::Display for Latency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Latency::NotApplicable => f.write_str("-"),
            Latency::Missed => f.write_str("missed"),
            Latency::Periods(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: Option<String>,
    pub config: DetectorConfig,
    pub periods_evaluated: usize,
    /// Distinct periods with at least one attack verdict.
    pub attack_periods: usize,
    pub attack_verdicts: usize,
    pub latency: Latency,
    /// Attack verdicts in periods that overlap no ground-truth interval.
    pub false_positives: usize,
}

impl RunReport {
    pub fn new(
        detection: &Detection,
        truth: &GroundTruth,
        config: DetectorConfig,
        scenario: Option<String>,
    ) -> Self {
        let period = config.period_ms as i64;
        let t0 = detection.t0.unwrap_or(0) as i64;
        let overlaps = |idx: i64| {
            let start = t0 + idx * period;
            let end = start + period; // exclusive
            truth
                .intervals
                .iter()
                .any(|i| (i.onset_ms as i64) < end && (i.end_ms as i64) >= start)
        };

        let mut attack_periods: Vec<i64> = detection.attacks().map(|v| v.period_index).collect();
        attack_periods.dedup();
        let false_positives = detection
            .attacks()
            .filter(|v| !overlaps(v.period_index))
            .count();

        let latency = match truth.first_onset() {
            None => Latency::NotApplicable,
            Some(onset) => {
                let onset_period = (onset as i64 - t0).div_euclid(period);
                detection
                    .attacks()
                    .map(|v| v.period_index)
                    .find(|&p| overlaps(p))
                    .map_or(Latency::Missed, |p| Latency::Periods(p - onset_period))
            }
        };

        RunReport {
            scenario,
            config,
            periods_evaluated: detection.periods,
            attack_periods: attack_periods.len(),
            attack_verdicts: detection.attack_count(),
            latency,
            false_positives,
        }
    }
}

impl fmt::Display for RunReport {
    /// `# key<TAB>value` lines, so the summary can trail a verdict report.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(f, "# scenario\t{}", self.scenario.as_deref().unwrap_or("-"))?;
        writeln!(
            f,
            "# config\tperiod_ms={} history={} sensitivity={} quantile={} warmup={} mode={:?}",
            c.period_ms, c.history_periods, c.sensitivity, c.quantile, c.warmup_periods, c.mode
        )?;
        writeln!(f, "# periods_evaluated\t{}", self.periods_evaluated)?;
        writeln!(f, "# attack_periods\t{}", self.attack_periods)?;
        writeln!(f, "# attack_verdicts\t{}", self.attack_verdicts)?;
        writeln!(f, "# detection_latency_periods\t{}", self.latency)?;
        write!(f, "# false_positives\t{}", self.false_positives)
    }
}
