//! `bench-harness`: runs the named experiments over a set of seeds and
//! prints a tab-separated summary. Exits 2 when an experiment fails.

use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tracewatch::experiment::{run_experiment, ExperimentName};

#[derive(Parser)]
#[command(name = "bench-harness", version, about = "Seeded experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment, or `all` of them.
    Run {
        /// fingerprint-stability, probe-detection, timing-detection, overhead or all
        name: String,
        /// `A..B` (inclusive), `A,B,C` or a single seed.
        #[arg(long, default_value = "1..10", value_parser = parse_seeds)]
        seeds: Seeds,
    },
    /// List experiment names.
    List,
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a
            .trim()
            .parse()
            .with_context(|| format!("bad seed `{a}`"))?;
        let b: u64 = b
            .trim()
            .parse()
            .with_context(|| format!("bad seed `{b}`"))?;
        if a > b {
            bail!("empty seed range {s}");
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().with_context(|| format!("bad seed `{x}`")))
            .collect::<Result<_>>()?
    };
    Ok(Seeds(seeds))
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
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::List => {
            for name in ExperimentName::ALL {
                println!("{name}");
            }
            Ok(true)
        }
        Command::Run { name, seeds } => {
            let names = if name == "all" {
                ExperimentName::ALL.to_vec()
            } else {
                vec![name.parse::<ExperimentName>()?]
            };
            let mut passed = true;
            for (i, name) in names.into_iter().enumerate() {
                let result = run_experiment(name, &seeds.0)?;
                let tsv = result.to_tsv();
                // one header for the whole table
                let body = if i == 0 {
                    &tsv[..]
                } else {
                    tsv.split_once('\n').map_or("", |(_, b)| b)
                };
                print!("{body}");
                passed &= result.passed;
            }
            Ok(passed)
        }
    }
}
