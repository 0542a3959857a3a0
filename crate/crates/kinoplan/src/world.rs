//! Box-obstacle environments: sampling the reduced and full state spaces,
//! point and trajectory collision checking, goal membership.
//!
//! Obstacles, the goal, and the sampling bounds are axis-aligned boxes over
//! the position block (the leading `n1` state components). Obstacles are
//! closed sets, so touching a face already counts as a collision; that keeps
//! verdicts conservative and deterministic.

use nalgebra::DVector;
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::steering::Trajectory;

/// Rejection-sampling attempts before giving up on an environment.
const SAMPLE_ATTEMPT_CAP: usize = 10_000;
/// Coarsest trajectory discretization; also used to estimate arc length.
const MIN_TRAJECTORY_INTERVALS: usize = 32;
/// Spacing-refinement doublings before a trajectory is conservatively
/// rejected as uncheckable.
const MAX_REFINE_DOUBLINGS: usize = 20;

/// Failure modes of environment construction and sampling.
#[derive(Debug, Error)]
pub enum WorldError {
    /// A box or point has the wrong dimension.
    #[error("{field} has dimension {got}, expected {expected}")]
    Dim {
        /// Which input is malformed.
        field: &'static str,
        /// Required dimension.
        expected: usize,
        /// Actual dimension.
        got: usize,
    },
    /// A box axis has `min >= max`.
    #[error("{field} axis {axis} has an empty interval (min >= max)")]
    EmptyInterval {
        /// Which box is malformed.
        field: &'static str,
        /// Offending axis.
        axis: usize,
    },
    /// A box contains NaN or infinity.
    #[error("{field} contains non-finite entries")]
    NonFinite {
        /// Which input is malformed.
        field: &'static str,
    },
    /// The goal box is not contained in the position bounds.
    #[error("goal box extends outside the position bounds")]
    GoalOutsideBounds,
    /// Rejection sampling failed too many consecutive draws.
    #[error("rejection sampling failed {attempts} consecutive draws; free space is too small")]
    SampleSaturated {
        /// Attempts made before giving up.
        attempts: usize,
    },
}

/// Closed axis-aligned box, one `[min, max]` interval per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    /// Per-axis lower corner.
    pub min: Vec<f64>,
    /// Per-axis upper corner.
    pub max: Vec<f64>,
}

impl Aabb {
    /// Builds a box after validating the corner vectors.
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self, WorldError> {
        let aabb = Self { min, max };
        aabb.validate("box")?;
        Ok(aabb)
    }

    pub(crate) fn validate(&self, field: &'static str) -> Result<(), WorldError> {
        if self.min.len() != self.max.len() {
            return Err(WorldError::Dim {
                field,
                expected: self.min.len(),
                got: self.max.len(),
            });
        }
        if self.min.iter().chain(&self.max).any(|v| !v.is_finite()) {
            return Err(WorldError::NonFinite { field });
        }
        for axis in 0..self.min.len() {
            if !(self.min[axis] < self.max[axis]) {
                return Err(WorldError::EmptyInterval { field, axis });
            }
        }
        Ok(())
    }

    /// Number of axes.
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// True iff the leading components of `p` lie inside the closed box.
    pub fn contains(&self, p: &[f64]) -> bool {
        assert!(p.len() >= self.dim(), "point has fewer axes than the box");
        self.min
            .iter()
            .zip(&self.max)
            .zip(p)
            .all(|((lo, hi), v)| *lo <= *v && *v <= *hi)
    }

    /// Box midpoint.
    pub fn center(&self) -> Vec<f64> {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }
}

/// The planning domain: sampling bounds, obstacles, and the goal region.
///
/// Positions are the leading components of the state. `full_sample_bounds`
/// covers only the remaining tail components and is consumed by planners
/// that must sample complete states.
#[derive(Debug, Clone)]
pub struct Environment {
    position_bounds: Aabb,
    full_sample_bounds: Aabb,
    obstacles: Vec<Aabb>,
    goal: Aabb,
}

impl Environment {
    /// Builds and validates an environment. Obstacles and the goal must
    /// share the position dimension, and the goal must lie inside the
    /// position bounds. Obstacles may poke outside the bounds.
    pub fn new(
        position_bounds: Aabb,
        full_sample_bounds: Aabb,
        obstacles: Vec<Aabb>,
        goal: Aabb,
    ) -> Result<Self, WorldError> {
        position_bounds.validate("position_bounds")?;
        full_sample_bounds.validate("full_sample_bounds")?;
        goal.validate("goal")?;
        let d = position_bounds.dim();
        if goal.dim() != d {
            return Err(WorldError::Dim { field: "goal", expected: d, got: goal.dim() });
        }
        for obstacle in &obstacles {
            obstacle.validate("obstacle")?;
            if obstacle.dim() != d {
                return Err(WorldError::Dim {
                    field: "obstacle",
                    expected: d,
                    got: obstacle.dim(),
                });
            }
        }
        for axis in 0..d {
            if goal.min[axis] < position_bounds.min[axis]
                || goal.max[axis] > position_bounds.max[axis]
            {
                return Err(WorldError::GoalOutsideBounds);
            }
        }
        Ok(Self { position_bounds, full_sample_bounds, obstacles, goal })
    }

    /// Dimension of the position block.
    pub fn position_dim(&self) -> usize {
        self.position_bounds.dim()
    }

    /// Dimension of full-state samples: positions plus the sampled tail.
    pub fn full_sample_dim(&self) -> usize {
        self.position_bounds.dim() + self.full_sample_bounds.dim()
    }

    /// Sampling box over positions.
    pub fn position_bounds(&self) -> &Aabb {
        &self.position_bounds
    }

    /// Sampling box over the non-position tail.
    pub fn full_sample_bounds(&self) -> &Aabb {
        &self.full_sample_bounds
    }

    /// Obstacle boxes in position space.
    pub fn obstacles(&self) -> &[Aabb] {
        &self.obstacles
    }

    /// Goal box in position space.
    pub fn goal(&self) -> &Aabb {
        &self.goal
    }

    /// Uniform draw over the free positions: rejection-samples the position
    /// bounds until [`Self::collision_point`] passes.
    pub fn sample_pff<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>, WorldError> {
        let p = self.sample_position(rng)?;
        Ok(DVector::from_vec(p))
    }

    /// Uniform draw over free positions times the tail sampling box. The
    /// position components consume the generator exactly as
    /// [`Self::sample_pff`] does; the tail components are drawn afterwards,
    /// one per axis.
    pub fn sample_full<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>, WorldError> {
        let mut x = self.sample_position(rng)?;
        for (lo, hi) in self.full_sample_bounds.min.iter().zip(&self.full_sample_bounds.max) {
            x.push(rng.random_range(*lo..*hi));
        }
        Ok(DVector::from_vec(x))
    }

    fn sample_position<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>, WorldError> {
        for _ in 0..SAMPLE_ATTEMPT_CAP {
            let p: Vec<f64> = self
                .position_bounds
                .min
                .iter()
                .zip(&self.position_bounds.max)
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect();
            if self.position_free(&p) {
                return Ok(p);
            }
        }
        Err(WorldError::SampleSaturated { attempts: SAMPLE_ATTEMPT_CAP })
    }

    /// Point clearance in the classical primitive sense: true iff the
    /// position projection of `state` lies inside the position bounds and
    /// strictly outside every obstacle. A `true` verdict clears the point;
    /// touching an obstacle face fails.
    ///
    /// `state` may be a bare position or any longer state vector; only the
    /// leading position components are inspected.
    pub fn collision_point(&self, state: &DVector<f64>) -> bool {
        let d = self.position_dim();
        assert!(state.len() >= d, "state has fewer components than the position block");
        self.position_free(&state.as_slice()[..d])
    }

    fn position_free(&self, p: &[f64]) -> bool {
        self.position_bounds.contains(p) && !self.obstacles.iter().any(|ob| ob.contains(p))
    }

    /// Trajectory clearance by dense sampling: positions are sampled
    /// uniformly in time, refined until consecutive samples are at most
    /// `delta` apart, and every sample must clear [`Self::collision_point`].
    ///
    /// The interval count starts from an arc-length estimate, rounded up to
    /// a power of two so that tighter `delta` values sample supersets of the
    /// times a looser check used. A trajectory whose spacing cannot be
    /// verified within the refinement budget is conservatively rejected.
    pub fn collision_free_trajectory(&self, traj: &Trajectory, delta: f64) -> bool {
        assert!(delta > 0.0 && delta.is_finite(), "delta must be a positive spacing");
        let d = self.position_dim();

        let coarse = traj.states(MIN_TRAJECTORY_INTERVALS);
        assert!(coarse[0].len() >= d, "trajectory states are shorter than the position block");
        let length = polyline_length(&coarse, d);
        if !length.is_finite() {
            return false;
        }
        let needed = ((length / delta).ceil() as usize).clamp(1, 1 << 30);
        let mut intervals = needed.next_power_of_two().max(MIN_TRAJECTORY_INTERVALS);

        for refine in 0..=MAX_REFINE_DOUBLINGS {
            let states =
                if refine == 0 && intervals == MIN_TRAJECTORY_INTERVALS {
                    coarse.clone()
                } else {
                    traj.states(intervals)
                };
            if states.iter().any(|x| !self.collision_point(x)) {
                return false;
            }
            if max_spacing(&states, d) <= delta {
                return true;
            }
            intervals *= 2;
        }
        false
    }

    /// Goal membership is decided by the position block alone; the free
    /// tail components never disqualify a state.
    pub fn in_goal(&self, state: &DVector<f64>) -> bool {
        let d = self.position_dim();
        assert!(state.len() >= d, "state has fewer components than the position block");
        self.goal.contains(&state.as_slice()[..d])
    }
}

fn polyline_length(states: &[DVector<f64>], d: usize) -> f64 {
    states
        .windows(2)
        .map(|w| position_distance(&w[0], &w[1], d))
        .sum()
}

fn max_spacing(states: &[DVector<f64>], d: usize) -> f64 {
    states
        .windows(2)
        .map(|w| position_distance(&w[0], &w[1], d))
        .fold(0.0, f64::max)
}

fn position_distance(a: &DVector<f64>, b: &DVector<f64>, d: usize) -> f64 {
    (0..d).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}
