//! Trial execution and convergence-data aggregation. A trial is one
//! (scenario, mode, seed) planning run; its convergence log becomes a
//! stream of [`ConvergenceRecord`]s, and [`compare`] aligns many streams
//! on common node-count and elapsed-time grids.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::BenchError;
use crate::planner::{best_solution, Mode, Planner};
use crate::steering::SteeringSolution;
use crate::world::Environment;

/// One row of a convergence stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    /// Planner variant of the producing trial.
    pub mode: Mode,
    /// Seed of the producing trial.
    pub seed: u64,
    /// Sampling iteration the row was recorded at.
    pub iteration: usize,
    /// Tree size at that iteration.
    pub nodes: usize,
    /// Wall-clock seconds since the trial started.
    pub elapsed_s: f64,
    /// Cheapest goal-reaching cost so far; absent before the first solution.
    pub best_cost: Option<f64>,
}

/// Everything a finished trial produced.
pub struct RunResult {
    /// Convergence stream, ordered by iteration.
    pub records: Vec<ConvergenceRecord>,
    /// The final tree.
    pub tree: crate::planner::Tree,
    /// Cheapest goal-reaching path, if one exists.
    pub best: Option<(Vec<SteeringSolution>, f64)>,
    /// Total trial wall time in seconds.
    pub elapsed_s: f64,
}

impl RunResult {
    /// One-line human summary.
    pub fn summary(&self, mode: Mode, seed: u64) -> String {
        let best = match &self.best {
            Some((chain, cost)) => format!("best_cost={cost:.6} edges={}", chain.len()),
            None => "best_cost=none".to_string(),
        };
        format!(
            "mode={mode} seed={seed} nodes={} {best} elapsed_s={:.3}",
            self.tree.len(),
            self.elapsed_s
        )
    }
}

/// Runs one trial to completion.
pub fn run(scenario: &Scenario, mode: Mode, seed: u64) -> Result<RunResult, BenchError> {
    run_with(scenario, mode, seed, None, &mut |_| {})
}

/// Runs one trial, optionally asserting tree consistency every
/// `check_every` iterations, and handing each record to `on_record` as soon
/// as it exists so callers can stream output incrementally.
pub fn run_with(
    scenario: &Scenario,
    mode: Mode,
    seed: u64,
    check_every: Option<usize>,
    on_record: &mut dyn FnMut(&ConvergenceRecord),
) -> Result<RunResult, BenchError> {
    let (sys, penalty, env, start) = scenario.build()?;
    let mut cfg = scenario.planner.clone();
    cfg.mode = mode;
    cfg.seed = seed;
    let iterations = cfg.iterations;
    let mut planner = Planner::new(&sys, &env, penalty.as_ref(), start, cfg)?;

    let mut records: Vec<ConvergenceRecord> = Vec::new();
    let drain =
        |planner: &Planner, records: &mut Vec<ConvergenceRecord>,
         on_record: &mut dyn FnMut(&ConvergenceRecord)| {
            for entry in &planner.log()[records.len()..] {
                let record = ConvergenceRecord {
                    mode,
                    seed,
                    iteration: entry.iteration,
                    nodes: entry.nodes,
                    elapsed_s: entry.elapsed_s,
                    best_cost: entry.best_cost,
                };
                on_record(&record);
                records.push(record);
            }
        };

    while planner.iteration() < iterations {
        planner.step();
        if let Some(every) = check_every {
            if every > 0 && planner.iteration() % every == 0 {
                planner
                    .tree()
                    .check_consistency()
                    .map_err(|what| BenchError::Invalid { what })?;
            }
        }
        drain(&planner, &mut records, on_record);
    }
    planner.run(); // closes the log with a final row when needed
    drain(&planner, &mut records, on_record);

    let elapsed_s = records.last().map(|r| r.elapsed_s).unwrap_or(0.0);
    let outcome = planner.into_outcome();
    let best = best_solution(&outcome.tree, &env);
    Ok(RunResult { records, tree: outcome.tree, best, elapsed_s })
}

/// Resolves the environment a scenario plans in; trials share it read-only.
pub fn scenario_environment(scenario: &Scenario) -> Result<Environment, BenchError> {
    scenario.environment.build()
}

/// Cheapest cost in the stream's final row.
pub fn final_best_cost(stream: &[ConvergenceRecord]) -> Option<f64> {
    stream.last().and_then(|r| r.best_cost)
}

/// Cost of the first recorded solution.
pub fn first_solution_cost(stream: &[ConvergenceRecord]) -> Option<f64> {
    stream.iter().find_map(|r| r.best_cost)
}

/// Writes the stream header: `mode,seed,iteration,nodes,elapsed_s,best_cost`.
pub fn write_records_header<W: Write>(w: &mut W) -> io::Result<()> {
    writeln!(w, "mode,seed,iteration,nodes,elapsed_s,best_cost")
}

/// Writes one stream row; `best_cost` stays empty before the first solution.
pub fn write_record<W: Write>(w: &mut W, r: &ConvergenceRecord) -> io::Result<()> {
    let best = r.best_cost.map(|c| c.to_string()).unwrap_or_default();
    writeln!(
        w,
        "{},{},{},{},{:.6},{}",
        r.mode, r.seed, r.iteration, r.nodes, r.elapsed_s, best
    )
}

/// Writes a whole stream with its header.
pub fn write_records_csv<W: Write>(w: &mut W, records: &[ConvergenceRecord]) -> io::Result<()> {
    write_records_header(w)?;
    for r in records {
        write_record(w, r)?;
    }
    Ok(())
}

/// Which axis a comparison row aggregates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareAxis {
    /// Tree size.
    Nodes,
    /// Wall-clock seconds.
    ElapsedS,
}

impl CompareAxis {
    /// Column value used in the emitted table.
    pub fn as_str(self) -> &'static str {
        match self {
            CompareAxis::Nodes => "nodes",
            CompareAxis::ElapsedS => "elapsed_s",
        }
    }
}

/// One aggregated comparison cell: the quartiles of best cost across seeds
/// of one mode at one grid point. Seeds without a solution yet are not
/// counted in `samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    /// Aggregation axis.
    pub axis: CompareAxis,
    /// Planner variant.
    pub mode: Mode,
    /// Grid coordinate (a node count or a time in seconds).
    pub grid_value: f64,
    /// Seeds contributing a cost at this point.
    pub samples: usize,
    /// Lower quartile.
    pub q1: Option<f64>,
    /// Median.
    pub median: Option<f64>,
    /// Upper quartile.
    pub q3: Option<f64>,
}

const ELAPSED_GRID_POINTS: usize = 64;

/// Aggregates convergence streams into per-mode quartile curves over a
/// common node-count grid (every node count observed anywhere) and a common
/// elapsed-time grid (evenly spaced over the observed range). A pure
/// function of the input records: order does not matter.
pub fn compare(records: &[ConvergenceRecord]) -> Vec<CompareRow> {
    if records.is_empty() {
        return Vec::new();
    }
    // group into per-(mode, seed) streams ordered by iteration
    let mut streams: Vec<((usize, u64), Vec<&ConvergenceRecord>)> = Vec::new();
    for r in records {
        let mode_idx = Mode::ALL.iter().position(|&m| m == r.mode).unwrap();
        let key = (mode_idx, r.seed);
        match streams.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => streams.push((key, vec![r])),
        }
    }
    streams.sort_by_key(|(k, _)| *k);
    for (_, stream) in &mut streams {
        stream.sort_by_key(|r| r.iteration);
    }
    let modes: Vec<Mode> = {
        let mut idxs: Vec<usize> = streams.iter().map(|((m, _), _)| *m).collect();
        idxs.sort_unstable();
        idxs.dedup();
        idxs.into_iter().map(|i| Mode::ALL[i]).collect()
    };

    let mut node_grid: Vec<usize> = records.iter().map(|r| r.nodes).collect();
    node_grid.sort_unstable();
    node_grid.dedup();

    let t_lo = records.iter().map(|r| r.elapsed_s).fold(f64::INFINITY, f64::min);
    let t_hi = records.iter().map(|r| r.elapsed_s).fold(f64::NEG_INFINITY, f64::max);
    let elapsed_grid: Vec<f64> = if t_hi > t_lo {
        (0..ELAPSED_GRID_POINTS)
            .map(|i| t_lo + (t_hi - t_lo) * i as f64 / (ELAPSED_GRID_POINTS - 1) as f64)
            .collect()
    } else {
        vec![t_lo]
    };

    let mut rows = Vec::new();
    for &mode in &modes {
        for &g in &node_grid {
            rows.push(aggregate(&streams, mode, CompareAxis::Nodes, g as f64));
        }
    }
    for &mode in &modes {
        for &g in &elapsed_grid {
            rows.push(aggregate(&streams, mode, CompareAxis::ElapsedS, g));
        }
    }
    rows
}

fn aggregate(
    streams: &[((usize, u64), Vec<&ConvergenceRecord>)],
    mode: Mode,
    axis: CompareAxis,
    grid_value: f64,
) -> CompareRow {
    let mode_idx = Mode::ALL.iter().position(|&m| m == mode).unwrap();
    let mut values: Vec<f64> = Vec::new();
    for ((m, _), stream) in streams {
        if *m != mode_idx {
            continue;
        }
        // step-function evaluation: the last record at or before the point
        let at = stream
            .iter()
            .take_while(|r| match axis {
                CompareAxis::Nodes => (r.nodes as f64) <= grid_value,
                CompareAxis::ElapsedS => r.elapsed_s <= grid_value,
            })
            .last();
        if let Some(cost) = at.and_then(|r| r.best_cost) {
            values.push(cost);
        }
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| quantile(&values, p);
    CompareRow {
        axis,
        mode,
        grid_value,
        samples: values.len(),
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
    }
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Writes the comparison table:
/// `axis,mode,grid_value,samples,q1,median,q3` with empty quartile cells
/// where no seed has a solution yet.
pub fn write_compare_csv<W: Write>(w: &mut W, rows: &[CompareRow]) -> io::Result<()> {
    writeln!(w, "axis,mode,grid_value,samples,q1,median,q3")?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            row.axis.as_str(),
            row.mode,
            row.grid_value,
            row.samples,
            cell(row.q1),
            cell(row.median),
            cell(row.q3),
        )?;
    }
    Ok(())
}
