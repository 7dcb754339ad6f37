//! Reproducible end-to-end experiments over simulated workloads.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::detector::{detect_stream, DetectOptions, DetectorError};
use crate::event::{read_log, write_log, LogError, SensorEvent, SensorValue};
use crate::fingerprint::{
    fingerprint_stream, group_requests, FingerprintConfig, FingerprintError, GroupingPolicy,
};
use crate::report::{Latency, RunReport};
use crate::sim::{
    simulate, simulate_crawl, Budget, ScenarioKind, ScenarioSpec, SimError, SimOutput, Site,
    AUTH_STATE_SID, LOGIN_ENTRY_SID, START_ENTRY_SID,
};

/// Largest accepted delay, in periods, between attack onset and first alarm.
pub const MAX_LATENCY_PERIODS: i64 = 2;
pub const STABILITY_REQUESTS_PER_PAGE: usize = 100;
/// Expected logged-in minus anonymous start-page time.
pub const TIMING_GAP_MS: f64 = 51.0;
pub const TIMING_GAP_TOLERANCE_MS: f64 = 5.0;
pub const LOGIN_OUTCOME_CLASSES: usize = 3;
pub const OVERHEAD_REQUESTS: usize = 10_000;
pub const OVERHEAD_BUDGET: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentName {
    FingerprintStability,
    ProbeDetection,
    TimingDetection,
    Overhead,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 4] = [
        ExperimentName::FingerprintStability,
        ExperimentName::ProbeDetection,
        ExperimentName::TimingDetection,
        ExperimentName::Overhead,
    ];
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentName::FingerprintStability => "fingerprint-stability",
            ExperimentName::ProbeDetection => "probe-detection",
            ExperimentName::TimingDetection => "timing-detection",
            ExperimentName::Overhead => "overhead",
        })
    }
}

impl FromStr for ExperimentName {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentName::ALL
            .into_iter()
            .find(|n| n.to_string() == s)
            .ok_or_else(|| ExperimentError::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub latency: Latency,
    pub false_positives: usize,
    pub passed: bool,
    /// Free-form measurements, `key=value` separated by spaces.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub name: ExperimentName,
    pub outcomes: Vec<SeedOutcome>,
    pub passed: bool,
}

impl ExperimentResult {
    pub fn seeds(&self) -> Vec<u64> {
        self.outcomes.iter().map(|o| o.seed).collect()
    }

    /// Tab-separated summary: a header, one row per seed, a verdict row.
    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("experiment\tseed\tlatency_periods\tfalse_positives\tresult\tdetail\n");
        for o in &self.outcomes {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                self.name,
                o.seed,
                o.latency,
                o.false_positives,
                if o.passed { "pass" } else { "FAIL" },
                o.detail
            ));
        }
        out.push_str(&format!(
            "{}\tall\t-\t-\t{}\t{} seeds\n",
            self.name,
            if self.passed { "pass" } else { "FAIL" },
            self.outcomes.len()
        ));
        out
    }
}

pub fn run_experiment(
    name: ExperimentName,
    seeds: &[u64],
) -> Result<ExperimentResult, ExperimentError> {
    let site = Site::cms();
    let outcomes = seeds
        .iter()
        .map(|&seed| match name {
            ExperimentName::FingerprintStability => fingerprint_stability(&site, seed),
            ExperimentName::ProbeDetection => attack_detection(&site, ScenarioKind::Probe, seed),
            ExperimentName::TimingDetection => attack_detection(&site, ScenarioKind::Timing, seed),
            ExperimentName::Overhead => overhead(seed),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let passed = !outcomes.is_empty() && outcomes.iter().all(|o| o.passed);
    Ok(ExperimentResult {
        name,
        outcomes,
        passed,
    })
}

fn distinct_classes(out: &SimOutput) -> Result<BTreeSet<u64>, FingerprintError> {
    Ok(fingerprint_stream(
        &out.events,
        GroupingPolicy::Tagged,
        &FingerprintConfig::default(),
    )?
    .iter()
    .map(|f| f.class_key.0)
    .collect())
}

fn fingerprint_stability(site: &Site, seed: u64) -> Result<SeedOutcome, ExperimentError> {
    let mut per_page = Vec::new();
    let mut all = BTreeSet::new();
    for page in site.pages() {
        let out = simulate_crawl(site, &[&page.name], STABILITY_REQUESTS_PER_PAGE, 1000, seed)?;
        let classes = distinct_classes(&out)?;
        per_page.push(classes.len());
        all.extend(classes);
    }
    let passed = per_page.iter().all(|&n| n == 1) && all.len() == site.pages().len();
    Ok(SeedOutcome {
        seed,
        latency: Latency::NotApplicable,
        false_positives: 0,
        passed,
        detail: format!(
            "pages={} classes_per_page={:?} distinct_classes={}",
            site.pages().len(),
            per_page,
            all.len()
        ),
    })
}

/// Detection of one attack scenario plus the matched-seed normal run.
fn attack_detection(
    site: &Site,
    kind: ScenarioKind,
    seed: u64,
) -> Result<SeedOutcome, ExperimentError> {
    let opts = DetectOptions::default();
    let attacked = simulate(site, &ScenarioSpec::new(kind, seed))?;
    let detection = detect_stream(&attacked.events, &opts)?;
    let report = RunReport::new(
        &detection,
        &attacked.truth,
        opts.detector,
        Some(kind.to_string()),
    );

    let normal = simulate(site, &ScenarioSpec::new(ScenarioKind::Normal, seed))?;
    let normal_alarms = detect_stream(&normal.events, &opts)?.attack_count();

    let in_time =
        matches!(report.latency, Latency::Periods(p) if (0..=MAX_LATENCY_PERIODS).contains(&p));
    let mut passed = in_time && report.false_positives == 0 && normal_alarms == 0;
    let mut detail = format!(
        "attack_verdicts={} normal_alarms={}",
        report.attack_verdicts, normal_alarms
    );
    if kind == ScenarioKind::Timing {
        let classes = login_outcome_classes(&attacked)?;
        let gap = start_page_gap(&attacked.events);
        let gap_ok = gap.is_some_and(|g| (g - TIMING_GAP_MS).abs() <= TIMING_GAP_TOLERANCE_MS);
        passed &= classes == LOGIN_OUTCOME_CLASSES && gap_ok;
        detail.push_str(&format!(
            " login_classes={} start_page_gap_ms={}",
            classes,
            gap.map_or("-".to_string(), |g| format!("{g:.2}"))
        ));
    }
    Ok(SeedOutcome {
        seed,
        latency: report.latency,
        false_positives: report.false_positives,
        passed,
        detail,
    })
}

fn overhead(seed: u64) -> Result<SeedOutcome, ExperimentError> {
    let stats = bench(OVERHEAD_REQUESTS, 1, seed)?;
    let run = &stats.runs[0];
    let passed = run.wall < OVERHEAD_BUDGET && run.events_read == run.events_generated;
    Ok(SeedOutcome {
        seed,
        latency: Latency::NotApplicable,
        false_positives: 0,
        passed,
        detail: format!(
            "requests={} events={} wall_ms={} events_per_s={:.0}",
            run.requests,
            run.events_generated,
            run.wall.as_millis(),
            run.events_per_second()
        ),
    })
}

/// Distinct fingerprint classes among login requests inside the attack
/// interval.
pub fn login_outcome_classes(out: &SimOutput) -> Result<usize, FingerprintError> {
    let login = LOGIN_ENTRY_SID.parse().expect("built-in sensor id");
    let fps = fingerprint_stream(
        &out.events,
        GroupingPolicy::Tagged,
        &FingerprintConfig::default(),
    )?;
    Ok(fps
        .iter()
        .filter(|f| out.truth.intervals.iter().any(|i| i.contains(f.first_ts)))
        .filter(|f| f.chain.iter().any(|l| l.sid == login))
        .map(|f| f.class_key)
        .collect::<BTreeSet<_>>()
        .len())
}

/// Mean start-page time of authenticated requests minus that of anonymous
/// ones, measured from the log alone.
pub fn start_page_gap(events: &[SensorEvent]) -> Option<f64> {
    let entry = START_ENTRY_SID.parse().expect("built-in sensor id");
    let auth = AUTH_STATE_SID.parse().expect("built-in sensor id");
    let mut sums = [(0.0, 0usize); 2];
    for trace in group_requests(events, GroupingPolicy::Tagged) {
        if !trace.events.iter().any(|e| e.sid == entry) {
            continue;
        }
        let state = trace.events.iter().find_map(|e| match e.value {
            SensorValue::State32(s) if e.sid == auth => Some(s.min(1) as usize),
            _ => None,
        });
        let Some(state) = state else { continue };
        let total: f64 = trace
            .events
            .iter()
            .filter_map(|e| match e.value {
                SensorValue::Numeric64(d) => Some(d),
                _ => None,
            })
            .sum();
        sums[state].0 += total;
        sums[state].1 += 1;
    }
    let [(anon, na), (member, nm)] = sums;
    (na > 0 && nm > 0).then(|| member / nm as f64 - anon / na as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub requests: usize,
    pub events_generated: usize,
    /// Events recovered by parsing the serialized log.
    pub events_read: usize,
    pub fingerprints: usize,
    pub verdicts: usize,
    pub wall: Duration,
}

impl BenchRun {
    pub fn events_per_second(&self) -> f64 {
        self.events_generated as f64 / self.wall.as_secs_f64().max(1e-9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchStats {
    pub runs: Vec<BenchRun>,
}

impl BenchStats {
    pub fn total_wall(&self) -> Duration {
        self.runs.iter().map(|r| r.wall).sum()
    }
}

/// Generates `requests` background requests, writes them as a log, parses
/// the log back and runs detection on it; repeated `runs` times.
pub fn bench(requests: usize, runs: usize, seed: u64) -> Result<BenchStats, ExperimentError> {
    let site = Site::cms();
    let spec =
        ScenarioSpec::new(ScenarioKind::Normal, seed).with_budget(Budget::Requests(requests));
    let opts = DetectOptions::default();
    let mut out = Vec::with_capacity(runs);
    for _ in 0..runs {
        let started = Instant::now();
        let sim = simulate(&site, &spec)?;
        let mut buf = Vec::new();
        write_log(&mut buf, &sim.events).map_err(LogError::from)?;
        let log = read_log(buf.as_slice())?;
        let detection = detect_stream(&log.events, &opts)?;
        out.push(BenchRun {
            requests: sim.requests.len(),
            events_generated: sim.events.len(),
            events_read: log.events.len(),
            fingerprints: detection.fingerprints,
            verdicts: detection.verdicts.len(),
            wall: started.elapsed(),
        });
    }
    Ok(BenchStats { runs: out })
}
