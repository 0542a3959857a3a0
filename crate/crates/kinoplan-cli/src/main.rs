//! `kinoplan`: run and compare motion-planning benchmarks from scenario
//! files. Exit codes: 0 success, 1 validation failure, 2 I/O or parse error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use kinoplan::bench::{
    builtin_scenario, compare, load_scenario, run, run_with, save_scenario, validate_builtin,
    write_compare_csv, write_record, write_records_header, BenchError, ConvergenceRecord,
};
use kinoplan::Mode;

#[derive(Parser)]
#[command(name = "kinoplan", version, about = "Kinodynamic motion-planning benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one planning trial and emit its convergence stream as CSV.
    Plan {
        /// Scenario file to run.
        scenario: PathBuf,
        /// Planner variant: kino, baseline, kino_delayed, baseline_delayed.
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        /// Random seed for the trial.
        #[arg(long)]
        seed: u64,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a mode-by-seed grid of trials and emit the comparison table.
    Compare {
        /// Scenario file to run.
        scenario: PathBuf,
        /// Comma-separated modes; defaults to the scenario's trial list.
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        modes: Option<Vec<Mode>>,
        /// Seeds as a comma list or inclusive range, e.g. `1,2,5` or `1..10`;
        /// defaults to the scenario's trial list.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<SeedList>,
        /// Comparison-table destination.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the numeric oracle checks for a built-in system.
    Validate {
        /// Built-in name: double_integrator or quadrotor.
        system: String,
    },
    /// Scenario file utilities.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Write a built-in benchmark scenario to a file.
    Init {
        /// Built-in name: double_integrator or quadrotor.
        builtin: String,
        /// Destination path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::from_str(s)
}

/// A parsed `--seeds` list. Wrapped so clap treats the whole list as one
/// value instead of special-casing the Vec as repeated items.
#[derive(Clone)]
struct SeedList(Vec<u64>);

/// `1,2,5` and `1..10` (inclusive) and any comma mix of the two.
fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let mut seeds = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err("empty seed entry".into());
        }
        match part.split_once("..") {
            Some((a, b)) => {
                let lo: u64 = a.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
                let hi: u64 = b.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
                if lo > hi {
                    return Err(format!("descending seed range `{part}`"));
                }
                seeds.extend(lo..=hi);
            }
            None => seeds.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?),
        }
    }
    Ok(SeedList(seeds))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, BenchError> {
    match command {
        Command::Plan { scenario, mode, seed, out } => cmd_plan(scenario, mode, seed, out),
        Command::Compare { scenario, modes, seeds, out } => {
            cmd_compare(scenario, modes, seeds, out)
        }
        Command::Validate { system } => cmd_validate(&system),
        Command::Scenario { command: ScenarioCommand::Init { builtin, out } } => {
            let scenario = builtin_scenario(&builtin)?;
            save_scenario(&out, &scenario)?;
            eprintln!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn io_err(path: &std::path::Path, source: io::Error) -> BenchError {
    BenchError::Io { path: path.display().to_string(), source }
}

fn cmd_plan(
    scenario_path: PathBuf,
    mode: Mode,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<ExitCode, BenchError> {
    let scenario = load_scenario(&scenario_path)?;
    let stdout = io::stdout();
    let mut sink: Box<dyn Write> = match &out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| io_err(path, e))?,
        )),
        None => Box::new(stdout.lock()),
    };
    let report_path = || out.as_deref().unwrap_or_else(|| "stdout".as_ref()).to_path_buf();

    write_records_header(&mut sink).map_err(|e| io_err(&report_path(), e))?;
    let mut stream_err: Option<io::Error> = None;
    let result = run_with(&scenario, mode, seed, None, &mut |r: &ConvergenceRecord| {
        if stream_err.is_none() {
            // flush per row so consumers can follow the run live
            stream_err = write_record(&mut sink, r).and_then(|_| sink.flush()).err();
        }
    })?;
    if let Some(e) = stream_err {
        return Err(io_err(&report_path(), e));
    }
    sink.flush().map_err(|e| io_err(&report_path(), e))?;
    eprintln!("{}", result.summary(mode, seed));
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(
    scenario_path: PathBuf,
    modes: Option<Vec<Mode>>,
    seeds: Option<SeedList>,
    out: PathBuf,
) -> Result<ExitCode, BenchError> {
    let scenario = load_scenario(&scenario_path)?;
    let modes = modes.unwrap_or_else(|| scenario.trials.modes.clone());
    let seeds = seeds.map(|s| s.0).unwrap_or_else(|| scenario.trials.seeds.clone());
    if modes.is_empty() || seeds.is_empty() {
        return Err(BenchError::Invalid {
            what: "compare needs at least one mode and one seed".into(),
        });
    }
    let mut records = Vec::new();
    for &mode in &modes {
        for &seed in &seeds {
            let result = run(&scenario, mode, seed)?;
            eprintln!("{}", result.summary(mode, seed));
            records.extend(result.records);
        }
    }
    let table = compare(&records);
    let mut sink =
        BufWriter::new(File::create(&out).map_err(|e| io_err(&out, e))?);
    write_compare_csv(&mut sink, &table).map_err(|e| io_err(&out, e))?;
    sink.flush().map_err(|e| io_err(&out, e))?;
    eprintln!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(system: &str) -> Result<ExitCode, BenchError> {
    let report = validate_builtin(system)?;
    for check in &report.checks {
        let tag = if check.passed { "pass" } else { "FAIL" };
        println!("[{tag}] {}: {}", check.name, check.detail);
    }
    if report.passed() {
        println!("{}: all {} checks passed", report.system, report.checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{}: checks failed", report.system);
        Ok(ExitCode::FAILURE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges_parse() {
        assert_eq!(parse_seeds("1,2,5").unwrap().0, vec![1, 2, 5]);
        assert_eq!(parse_seeds("1..10").unwrap().0, (1..=10).collect::<Vec<_>>());
        assert_eq!(parse_seeds("3..3").unwrap().0, vec![3]);
        assert_eq!(parse_seeds("1..3,9").unwrap().0, vec![1, 2, 3, 9]);
        assert!(parse_seeds("9..1").is_err());
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn cli_structure_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
