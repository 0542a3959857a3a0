//! Scenario files: a JSON description of one benchmark problem bundling the
//! system, the environment, the start state, the planner configuration, and
//! the trial matrix. See `docs/scenario-format.md` for the schema.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::lti::{
    build_double_integrator_2d, build_quadrotor_10d, LinearSystem, QuadrotorParams,
    TerminalPenalty,
};
use crate::planner::{Mode, PlannerConfig};
use crate::world::{Aabb, Environment};

/// Names accepted wherever a built-in system or scenario is requested.
pub const BUILTIN_NAMES: [&str; 2] = ["double_integrator", "quadrotor"];

/// System description: either a built-in by name or explicit matrices.
/// Matrices are row-major nested arrays; `s` is the optional terminal
/// penalty over the free block and `n1` the sampled-block width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    /// Built-in name; mutually exclusive with the matrix fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// Physical parameters for the quadrotor built-in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<QuadrotorParams>,
    /// Dynamics matrix, n x n.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    /// Input matrix, n x m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    /// Constant drift, length n.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    /// Control weight, m x m symmetric positive definite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    /// Terminal penalty over the free block, n2 x n2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<Vec<f64>>>,
    /// Sampled-block width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<usize>,
}

impl SystemSpec {
    /// A spec naming a built-in.
    pub fn builtin(name: &str) -> Self {
        Self {
            builtin: Some(name.to_string()),
            params: None,
            a: None,
            b: None,
            c: None,
            r: None,
            s: None,
            n1: None,
        }
    }

    /// Resolves the spec into a system and its optional terminal penalty.
    pub fn build(&self) -> Result<(LinearSystem, Option<TerminalPenalty>), BenchError> {
        if let Some(name) = &self.builtin {
            if self.a.is_some()
                || self.b.is_some()
                || self.c.is_some()
                || self.r.is_some()
                || self.s.is_some()
                || self.n1.is_some()
            {
                return Err(BenchError::Invalid {
                    what: "system: explicit matrices conflict with `builtin`".into(),
                });
            }
            return build_builtin_system(name, self.params.as_ref());
        }
        if self.params.is_some() {
            return Err(BenchError::Invalid {
                what: "system: `params` requires `builtin: quadrotor`".into(),
            });
        }
        let a = to_matrix("A", self.a.as_ref().ok_or_else(|| missing("A"))?)?;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(dim_err("A", format!("{n}x{n}"), format!("{}x{}", n, a.ncols())));
        }
        let b = to_matrix("B", self.b.as_ref().ok_or_else(|| missing("B"))?)?;
        if b.nrows() != n {
            return Err(dim_err("B", format!("{n} rows"), format!("{} rows", b.nrows())));
        }
        let m = b.ncols();
        let c = match &self.c {
            Some(v) => {
                if v.len() != n {
                    return Err(dim_err("c", format!("length {n}"), format!("length {}", v.len())));
                }
                DVector::from_column_slice(v)
            }
            None => DVector::zeros(n),
        };
        let r = to_matrix("R", self.r.as_ref().ok_or_else(|| missing("R"))?)?;
        if r.nrows() != m || r.ncols() != m {
            return Err(dim_err("R", format!("{m}x{m}"), format!("{}x{}", r.nrows(), r.ncols())));
        }
        let n1 = self.n1.ok_or_else(|| missing("n1"))?;
        let sys = LinearSystem::new(a, b, c, r, n1)?;
        let penalty = match &self.s {
            None => None,
            Some(rows) => {
                let s = to_matrix("S", rows)?;
                let n2 = sys.n2();
                if s.nrows() != n2 || s.ncols() != n2 {
                    return Err(dim_err(
                        "S",
                        format!("{n2}x{n2}"),
                        format!("{}x{}", s.nrows(), s.ncols()),
                    ));
                }
                Some(TerminalPenalty::new(s)?)
            }
        };
        Ok((sys, penalty))
    }
}

/// Builds a built-in system by name. `params` applies to the quadrotor only.
pub fn build_builtin_system(
    name: &str,
    params: Option<&QuadrotorParams>,
) -> Result<(LinearSystem, Option<TerminalPenalty>), BenchError> {
    match name {
        "double_integrator" => {
            if params.is_some() {
                return Err(BenchError::Invalid {
                    what: "system: `params` requires `builtin: quadrotor`".into(),
                });
            }
            Ok((build_double_integrator_2d()?, None))
        }
        "quadrotor" => {
            let p = params.copied().unwrap_or_default();
            let (sys, penalty) = build_quadrotor_10d(&p)?;
            Ok((sys, Some(penalty)))
        }
        other => Err(BenchError::UnknownBuiltin { name: other.to_string() }),
    }
}

fn missing(field: &str) -> BenchError {
    BenchError::Invalid { what: format!("system: explicit form requires field {field}") }
}

fn dim_err(field: &str, expected: String, got: String) -> BenchError {
    BenchError::Dim { field: field.to_string(), expected, got }
}

fn to_matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, BenchError> {
    if rows.is_empty() {
        return Err(dim_err(field, "at least one row".into(), "0 rows".into()));
    }
    let ncols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(dim_err(
                field,
                format!("row {i} of length {ncols}"),
                format!("length {}", row.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Environment fragment of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    /// Sampling box over the position block.
    pub position_bounds: Aabb,
    /// Sampling box over the remaining state components (may be empty;
    /// required by the full-state sampling modes).
    #[serde(default = "empty_box")]
    pub full_sample_bounds: Aabb,
    /// Axis-aligned obstacles over the position block.
    #[serde(default)]
    pub obstacles: Vec<Aabb>,
    /// Goal region over the position block.
    pub goal: Aabb,
}

fn empty_box() -> Aabb {
    Aabb::new(Vec::new(), Vec::new()).expect("the empty box is valid")
}

impl EnvironmentSpec {
    /// Resolves the spec into a validated environment.
    pub fn build(&self) -> Result<Environment, BenchError> {
        Ok(Environment::new(
            self.position_bounds.clone(),
            self.full_sample_bounds.clone(),
            self.obstacles.clone(),
            self.goal.clone(),
        )?)
    }
}

/// The trial matrix of a comparison run: every mode crossed with every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSpec {
    /// Planner variants to run.
    pub modes: Vec<Mode>,
    /// Seeds each mode runs with.
    pub seeds: Vec<u64>,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self { modes: vec![Mode::Kino], seeds: vec![1] }
    }
}

/// One benchmark problem, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Free-form label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// System under test.
    pub system: SystemSpec,
    /// World the planner samples in.
    pub environment: EnvironmentSpec,
    /// Initial full state, length n.
    pub start: Vec<f64>,
    /// Planner configuration; `mode` and `seed` act as defaults that the
    /// runner overrides per trial.
    #[serde(default)]
    pub planner: PlannerConfig,
    /// Trial matrix for `compare`.
    #[serde(default)]
    pub trials: TrialSpec,
}

impl Scenario {
    /// Resolves and cross-validates every part, returning the pieces a
    /// planner run needs.
    pub fn build(
        &self,
    ) -> Result<(LinearSystem, Option<TerminalPenalty>, Environment, DVector<f64>), BenchError>
    {
        let (sys, penalty) = self.system.build()?;
        let env = self.environment.build()?;
        if env.position_dim() != sys.n1() {
            return Err(dim_err(
                "environment.position_bounds",
                format!("dimension {}", sys.n1()),
                format!("dimension {}", env.position_dim()),
            ));
        }
        let tail = env.full_sample_dim() - env.position_dim();
        if tail != 0 && tail != sys.n2() {
            return Err(dim_err(
                "environment.full_sample_bounds",
                format!("dimension {} (or empty)", sys.n2()),
                format!("dimension {tail}"),
            ));
        }
        if self.start.len() != sys.dim() {
            return Err(dim_err(
                "start",
                format!("length {}", sys.dim()),
                format!("length {}", self.start.len()),
            ));
        }
        self.planner.validate().map_err(|e| BenchError::Invalid { what: e.to_string() })?;
        if self.trials.modes.is_empty() || self.trials.seeds.is_empty() {
            return Err(BenchError::Invalid {
                what: "trials: at least one mode and one seed required".into(),
            });
        }
        Ok((sys, penalty, env, DVector::from_column_slice(&self.start)))
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, BenchError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|source| BenchError::Parse {
            path: path.display().to_string(),
            source,
        })?;
    scenario.build()?;
    Ok(scenario)
}

/// Writes a scenario as pretty-printed JSON.
pub fn save_scenario(path: impl AsRef<Path>, scenario: &Scenario) -> Result<(), BenchError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(scenario)
        .expect("scenario serialization cannot fail");
    fs::write(path, text + "\n").map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The shipped benchmark problem for a built-in name: the planar double
/// integrator threads three wall gaps, the quadrotor flies a pillar field.
pub fn builtin_scenario(name: &str) -> Result<Scenario, BenchError> {
    match name {
        "double_integrator" => Ok(double_integrator_scenario()),
        "quadrotor" => Ok(quadrotor_scenario()),
        other => Err(BenchError::UnknownBuiltin { name: other.to_string() }),
    }
}

fn double_integrator_scenario() -> Scenario {
    let obstacles = vec![
        Aabb::new(vec![4.0, 0.0], vec![6.0, 14.0]).unwrap(),
        Aabb::new(vec![9.0, 6.0], vec![11.0, 20.0]).unwrap(),
        Aabb::new(vec![14.0, 0.0], vec![16.0, 14.0]).unwrap(),
    ];
    Scenario {
        name: Some("planar double integrator, three-wall slalom".into()),
        system: SystemSpec::builtin("double_integrator"),
        environment: EnvironmentSpec {
            position_bounds: Aabb::new(vec![0.0, 0.0], vec![20.0, 20.0]).unwrap(),
            full_sample_bounds: Aabb::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(),
            obstacles,
            goal: Aabb::new(vec![17.0, 17.0], vec![20.0, 20.0]).unwrap(),
        },
        start: vec![1.0, 1.0, 0.0, 0.0],
        planner: PlannerConfig {
            iterations: 4000,
            max_segment_length: 5.0,
            neighbor_radius: 1.5,
            v_des: 1.5,
            delayed_update_period: 500,
            collision_delta: 0.05,
            t_bounds: (0.05, 40.0),
            seed: 1,
            mode: Mode::Kino,
        },
        trials: TrialSpec {
            modes: vec![Mode::Kino, Mode::Baseline],
            seeds: (1..=10).collect(),
        },
    }
}

fn quadrotor_scenario() -> Scenario {
    let pillar = |x0: f64, y0: f64| {
        Aabb::new(vec![x0, y0, 0.0], vec![x0 + 2.0, y0 + 2.0, 10.0]).unwrap()
    };
    let obstacles = vec![
        pillar(2.0, 2.0),
        pillar(6.0, 2.0),
        pillar(2.0, 6.0),
        pillar(6.0, 6.0),
        Aabb::new(vec![4.2, 4.2, 0.0], vec![5.8, 5.8, 10.0]).unwrap(),
    ];
    Scenario {
        name: Some("linearized quadrotor, pillar field".into()),
        system: SystemSpec::builtin("quadrotor"),
        environment: EnvironmentSpec {
            position_bounds: Aabb::new(vec![0.0, 0.0, 0.0], vec![10.0, 10.0, 10.0]).unwrap(),
            full_sample_bounds: Aabb::new(
                vec![-2.0, -2.0, -2.0, -1.0, -1.0, -4.0, -4.0],
                vec![2.0, 2.0, 2.0, 1.0, 1.0, 4.0, 4.0],
            )
            .unwrap(),
            obstacles,
            goal: Aabb::new(vec![7.0, 7.0, 7.0], vec![10.0, 10.0, 10.0]).unwrap(),
        },
        start: vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        planner: PlannerConfig {
            iterations: 1000,
            max_segment_length: 5.0,
            neighbor_radius: 2.0,
            v_des: 1.5,
            delayed_update_period: 500,
            collision_delta: 0.05,
            t_bounds: (0.05, 30.0),
            seed: 1,
            mode: Mode::Kino,
        },
        trials: TrialSpec {
            modes: vec![Mode::Kino, Mode::KinoDelayed],
            seeds: (1..=5).collect(),
        },
    }
}
