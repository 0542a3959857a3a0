//! Benchmark harness: scenario files, trial execution, convergence-data
//! emission, comparison aggregation, and numeric validation of the
//! built-in systems.

mod runner;
mod scenario;
mod validate;

use thiserror::Error;

use crate::lti::LtiError;
use crate::planner::PlanError;
use crate::steering::SteerError;
use crate::world::WorldError;

pub use runner::{
    compare, final_best_cost, first_solution_cost, run, run_with, scenario_environment,
    write_compare_csv, write_record, write_records_csv, write_records_header, CompareAxis,
    CompareRow, ConvergenceRecord, RunResult,
};
pub use scenario::{
    build_builtin_system, builtin_scenario, load_scenario, save_scenario, EnvironmentSpec,
    Scenario, SystemSpec, TrialSpec, BUILTIN_NAMES,
};
pub use validate::{gramian_by_quadrature, validate_builtin, CheckReport, CheckResult};

/// Everything that can go wrong while loading or running a benchmark.
#[derive(Debug, Error)]
pub enum BenchError {
    /// Filesystem access failed.
    #[error("cannot access {path}: {source}")]
    Io {
        /// Offending path.
        path: String,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },
    /// The file is not valid JSON; the message carries line and column.
    #[error("parse error in {path}: {source}")]
    Parse {
        /// Offending path.
        path: String,
        /// Underlying error, including the location.
        #[source]
        source: serde_json::Error,
    },
    /// Two scenario parts disagree about a dimension.
    #[error("{field}: expected {expected}, got {got}")]
    Dim {
        /// Which field is malformed.
        field: String,
        /// Required shape.
        expected: String,
        /// Actual shape.
        got: String,
    },
    /// No built-in with that name exists.
    #[error("unknown built-in `{name}` (available: double_integrator, quadrotor)")]
    UnknownBuiltin {
        /// The requested name.
        name: String,
    },
    /// A cross-field validation failed.
    #[error("invalid scenario: {what}")]
    Invalid {
        /// What failed.
        what: String,
    },
    /// Propagated system-construction error.
    #[error(transparent)]
    System(#[from] LtiError),
    /// Propagated steering error.
    #[error(transparent)]
    Steer(#[from] SteerError),
    /// Propagated environment error.
    #[error(transparent)]
    World(#[from] WorldError),
    /// Propagated planner error.
    #[error(transparent)]
    Plan(#[from] PlanError),
}

impl BenchError {
    /// Process exit code this error maps to: 2 for I/O and parse problems,
    /// 1 for everything else (validation failures).
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Io { .. } | BenchError::Parse { .. } => 2,
            _ => 1,
        }
    }
}
