//! `tracewatch`: simulate request traces, fingerprint them and detect
//! attacks from per-period fingerprint counts.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tracewatch::event::{read_log, write_log, Log};
use tracewatch::experiment::bench;
use tracewatch::fingerprint::{fingerprint_stream, summarize_classes, write_class_plot};
use tracewatch::sim::{read_truth, simulate, write_truth, Budget};
use tracewatch::{
    detect_stream, DetectOptions, DetectorConfig, FingerprintConfig, GroupingPolicy, ModelMode,
    RunReport, ScenarioKind, ScenarioSpec, Site,
};

const EXIT_ATTACK: u8 = 2;

#[derive(Parser)]
#[command(
    name = "tracewatch",
    version,
    about = "Fingerprint-count intrusion detection over sensor logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic log and its ground-truth sidecar (`<out>.truth`).
    Simulate {
        #[arg(long)]
        scenario: ScenarioKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Total background requests.
        #[arg(long, conflicts_with = "duration_ms")]
        requests: Option<usize>,
        /// Background traffic duration.
        #[arg(long)]
        duration_ms: Option<u64>,
    },
    /// Run the detector over a log. Exits 2 if any period is flagged.
    Detect {
        #[arg(long = "in")]
        input: PathBuf,
        /// Ground truth to score against.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        period_ms: u64,
        /// Periods kept in each history window.
        #[arg(long, default_value_t = 30)]
        history: usize,
        #[arg(long, default_value_t = 1.5)]
        sensitivity: f64,
        #[arg(long, default_value_t = 0.95)]
        quantile: f64,
        /// Silent initial periods [default: --history].
        #[arg(long)]
        warmup: Option<usize>,
        /// `tagged` or `gap:MS`.
        #[arg(long, default_value = "tagged")]
        grouping: GroupingPolicy,
        /// Count all requests together instead of per class.
        #[arg(long)]
        global_model: bool,
        #[arg(long, default_value_t = 3)]
        bucket_ms: u64,
    },
    /// List fingerprint classes and write per-class plot data.
    Fingerprint {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        bucket_ms: u64,
        #[arg(long, default_value = "tagged")]
        grouping: GroupingPolicy,
        /// Plot data path [default: `<in>.plot.tsv`].
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Time simulate, write, parse and detect end to end.
    Bench {
        #[arg(long, default_value_t = 10_000)]
        requests: usize,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate {
            scenario,
            seed,
            out,
            requests,
            duration_ms,
        } => {
            let mut spec = ScenarioSpec::new(scenario, seed);
            if let Some(n) = requests {
                spec = spec.with_budget(Budget::Requests(n));
            } else if let Some(ms) = duration_ms {
                spec = spec.with_budget(Budget::DurationMs(ms));
            }
            let sim = simulate(&Site::cms(), &spec)?;
            write_log(create(&out)?, &sim.events)
                .with_context(|| format!("writing {}", out.display()))?;
            let truth_path = sidecar(&out, ".truth");
            write_truth(create(&truth_path)?, &sim.truth)
                .with_context(|| format!("writing {}", truth_path.display()))?;
            eprintln!(
                "{} requests, {} events, {} attack interval(s)",
                sim.requests.len(),
                sim.events.len(),
                sim.truth.intervals.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Detect {
            input,
            truth,
            period_ms,
            history,
            sensitivity,
            quantile,
            warmup,
            grouping,
            global_model,
            bucket_ms,
        } => {
            let detector = DetectorConfig {
                period_ms,
                history_periods: history,
                sensitivity,
                quantile,
                warmup_periods: warmup.unwrap_or(history),
                mode: if global_model {
                    ModelMode::Global
                } else {
                    ModelMode::PerClass
                },
            };
            detector.validate()?;
            let opts = DetectOptions {
                detector,
                grouping,
                fingerprint: FingerprintConfig {
                    bucket_ms,
                    ..Default::default()
                },
            };
            let truth = truth
                .map(|p| {
                    let f = open(&p)?;
                    read_truth(f).with_context(|| format!("reading {}", p.display()))
                })
                .transpose()?;
            let log = load(&input)?;
            let detection = detect_stream(&log.events, &opts)?;

            let mut stdout = BufWriter::new(io::stdout().lock());
            for v in &detection.verdicts {
                writeln!(stdout, "{}", v.report_line())?;
            }
            if let Some(truth) = truth {
                let scenario = truth
                    .intervals
                    .first()
                    .map_or_else(|| "normal".to_string(), |i| i.kind.to_string());
                let report = RunReport::new(&detection, &truth, detector, Some(scenario));
                writeln!(stdout, "{report}")?;
            }
            stdout.flush()?;
            Ok(if detection.attack_count() > 0 {
                ExitCode::from(EXIT_ATTACK)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Fingerprint {
            input,
            bucket_ms,
            grouping,
            plot,
        } => {
            let cfg = FingerprintConfig {
                bucket_ms,
                ..Default::default()
            };
            let log = load(&input)?;
            let summaries = summarize_classes(&fingerprint_stream(&log.events, grouping, &cfg)?);
            let mut stdout = BufWriter::new(io::stdout().lock());
            for s in &summaries {
                writeln!(stdout, "{}", s.listing_line())?;
            }
            stdout.flush()?;
            let plot = plot.unwrap_or_else(|| sidecar(&input, ".plot.tsv"));
            write_class_plot(create(&plot)?, &summaries)
                .with_context(|| format!("writing {}", plot.display()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench {
            requests,
            runs,
            seed,
        } => {
            let stats = bench(requests, runs, seed)?;
            println!("run\trequests\tevents_generated\tevents_read\tfingerprints\tverdicts\twall_ms\tevents_per_s");
            for (i, r) in stats.runs.iter().enumerate() {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{:.1}\t{:.0}",
                    i + 1,
                    r.requests,
                    r.events_generated,
                    r.events_read,
                    r.fingerprints,
                    r.verdicts,
                    r.wall.as_secs_f64() * 1e3,
                    r.events_per_second()
                );
            }
            println!(
                "# total_wall_ms\t{:.1}",
                stats.total_wall().as_secs_f64() * 1e3
            );
            println!("# memory\tnot measured");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load(path: &Path) -> Result<Log> {
    let log = read_log(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    for w in &log.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(log)
}
