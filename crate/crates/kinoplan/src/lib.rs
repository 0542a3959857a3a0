//! Kinodynamic motion planning for linear systems.
//!
//! The crate is organized as a small stack:
//!
//! - [`lti`]: linear time-invariant system descriptions plus the numerical
//!   kernels everything else relies on (matrix exponentials, drift responses,
//!   weighted controllability Gramians).
//! - [`steering`]: closed-form optimal two-point steering between states, in
//!   several flavors: partial-final-state-free (PFF), PFF with a quadratic
//!   terminal penalty, and fixed-final-state, each with fixed or free arrival
//!   time.
//! - [`world`]: axis-aligned-box environments, reduced- and full-state
//!   sampling, and collision checking for points and trajectories.
//! - [`planner`]: the RRT*-style tree search that composes the pieces above,
//!   in four modes (`kino`, `baseline`, and their delayed-arrival-time
//!   variants).
//! - [`bench`]: scenario files, deterministic benchmark runs, mode
//!   comparisons, and the self-check oracle suite behind the CLI.
//!
//! # Example
//!
//! ```
//! use kinoplan::lti::build_double_integrator_2d;
//! use kinoplan::steering::solve_pff_free_time;
//! use nalgebra::DVector;
//!
//! let sys = build_double_integrator_2d().unwrap();
//! let from = DVector::from_column_slice(&[0.0, 0.0, 0.0, 0.0]);
//! let target = DVector::from_column_slice(&[3.0, 0.0]);
//! let sol = solve_pff_free_time(&sys, &from, &target, (0.05, 20.0)).unwrap();
//! assert!((sol.cost - 4.0).abs() < 1e-6);
//! ```

#![forbid(unsafe_code)]
#![warn(missing_docs)]

pub mod bench;
pub mod lti;
pub mod planner;
pub mod steering;
pub mod world;

pub use lti::{
    build_double_integrator_2d, build_quadrotor_10d, LinearSystem, QuadrotorParams,
    TerminalPenalty,
};
pub use planner::{plan, Mode, PlanOutcome, Planner, PlannerConfig, Tree, TreeNode};
pub use steering::{SteeringSolution, Trajectory};
pub use world::{Aabb, Environment};
