//! Optimal point-to-point steering for the systems in [`crate::lti`].
//!
//! Every solver minimizes `J = tf + integral_0^tf u^T R u dt` along
//! `xdot = A x + B u + c`, differing only in the terminal condition:
//!
//! - [`solve_fixed_state_fixed_time`] pins the whole final state,
//! - [`solve_pff_fixed_time`] pins the leading `n1` components and leaves the
//!   tail exactly free (its costate vanishes at arrival),
//! - [`solve_pff_penalty`] pins the leading components and charges the tail
//!   `0.5 x2^T S x2` at arrival, interpolating between the two above.
//!
//! Each family also comes in a free-arrival-time form that scans a log-spaced
//! grid over the allowed horizon for sign changes of the arrival-time
//! stationarity residual (the Hamiltonian at `tf`) and bisects each bracket.
//! Closed-form ingredients per arrival time (state transition, weighted
//! Gramian, drift response) come from a single matrix exponential and can be
//! memoized across calls with a [`HorizonCache`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::lti::{self, LinearSystem, LtiError, TerminalPenalty};

/// Grid resolution of the free-arrival-time scan.
const GRID_POINTS: usize = 64;
/// Bisection stops when the bracket width falls below this times the midpoint.
const BISECT_REL_WIDTH: f64 = 1e-9;
/// Hard cap on bisection steps per bracket.
const BISECT_MAX_STEPS: usize = 200;
/// Floor on [`heuristic_arrival_time`], so coincident positions still get a
/// usable horizon.
const MIN_HEURISTIC_TIME: f64 = 1e-3;
/// Entries kept by a [`HorizonCache`] before it stops inserting.
const HORIZON_CACHE_CAP: usize = 4096;

/// Failure modes of the steering solvers.
#[derive(Debug, Error)]
pub enum SteerError {
    /// A system-level validation failed.
    #[error(transparent)]
    System(#[from] LtiError),
    /// A state vector has the wrong length.
    #[error("{field} has length {got}, expected {expected}")]
    Dim {
        /// Which argument is malformed.
        field: &'static str,
        /// Required length.
        expected: usize,
        /// Actual length.
        got: usize,
    },
    /// A state vector contains NaN or infinity.
    #[error("{field} contains non-finite entries")]
    NonFinite {
        /// Which argument is malformed.
        field: &'static str,
    },
    /// The penalty weight does not match the free tail dimension.
    #[error("terminal penalty is {got}x{got}, expected {expected}x{expected}")]
    PenaltyDim {
        /// Free tail dimension `n - n1`.
        expected: usize,
        /// Penalty dimension supplied.
        got: usize,
    },
    /// Free-time bounds are not `0 < t_min <= t_max < inf`.
    #[error("arrival-time bounds ({t_min}, {t_max}) are invalid")]
    BadBounds {
        /// Lower bound supplied.
        t_min: f64,
        /// Upper bound supplied.
        t_max: f64,
    },
    /// A trajectory was evaluated outside `[0, tf]`.
    #[error("time {t} is outside the trajectory span [0, {tf}]")]
    TimeOutOfRange {
        /// Requested time.
        t: f64,
        /// Trajectory arrival time.
        tf: f64,
    },
    /// The Gramian (or penalty system) is numerically singular at this
    /// arrival time, typically because the horizon is far too short.
    #[error("steering system is numerically singular at tf = {tf}")]
    DegenerateHorizon {
        /// Arrival time that failed.
        tf: f64,
    },
    /// No arrival time in the bounds produced a usable solution.
    #[error("no usable arrival time in ({t_min}, {t_max})")]
    NoConnection {
        /// Lower bound scanned.
        t_min: f64,
        /// Upper bound scanned.
        t_max: f64,
    },
}

/// Which terminal condition produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteerVariant {
    /// Leading block pinned, tail exactly free.
    PartialFree,
    /// Leading block pinned, tail charged through a quadratic penalty.
    Penalty,
    /// Whole final state pinned.
    FixedState,
}

/// Arrival-time handling for [`solve_pff_penalty`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Steer in exactly this long.
    Fixed(f64),
    /// Search arrival times in `(t_min, t_max)`.
    Free(f64, f64),
}

/// One solved steering problem.
///
/// `cost` is the full objective `tf + integral u^T R u dt` plus, for the
/// penalty variant, the terminal charge. `lambda_tf` is the arrival costate;
/// together with `x_end` it determines the whole trajectory (see
/// [`Trajectory`]).
#[derive(Debug, Clone)]
pub struct SteeringSolution {
    /// Terminal condition used.
    pub variant: SteerVariant,
    /// Departure state (length `n`).
    pub x_start: DVector<f64>,
    /// Arrival state (length `n`); the tail components are solver outputs
    /// for the partially free variants.
    pub x_end: DVector<f64>,
    /// Arrival time.
    pub tf: f64,
    /// Objective value.
    pub cost: f64,
    /// Costate at arrival.
    pub lambda_tf: DVector<f64>,
    /// True when a free-time search found no interior stationary arrival
    /// time and fell back to the best scanned grid point.
    pub boundary_solution: bool,
}

/// Per-arrival-time ingredients shared by every solver family.
pub(crate) struct HorizonData {
    tf: f64,
    e_at: DMatrix<f64>,
    g: DMatrix<f64>,
    drift: DVector<f64>,
    g11_chol: Option<Cholesky<f64, Dyn>>,
    g_chol: Option<Cholesky<f64, Dyn>>,
}

impl HorizonData {
    fn compute(sys: &LinearSystem, tf: f64) -> Rc<Self> {
        let kernels = lti::horizon_kernels(sys, tf);
        let n1 = sys.n1();
        let g11_chol = kernels.g.view((0, 0), (n1, n1)).clone_owned().cholesky();
        let g_chol = kernels.g.clone().cholesky();
        Rc::new(Self {
            tf,
            e_at: kernels.e_at,
            g: kernels.g,
            drift: kernels.drift,
            g11_chol,
            g_chol,
        })
    }

    /// Zero-control response `e^{A tf} x_a + drift`.
    fn xbar(&self, x_a: &DVector<f64>) -> DVector<f64> {
        &self.e_at * x_a + &self.drift
    }
}

/// Memo of [`HorizonData`] keyed by arrival-time bits.
///
/// A planner run steers thousands of times over one fixed bound pair, so the
/// scan grid repeats exactly; caching its bundles removes most matrix
/// exponentials. The cache must only ever be used with the system it was
/// populated from.
pub(crate) struct HorizonCache {
    map: RefCell<HashMap<u64, Rc<HorizonData>>>,
}

impl HorizonCache {
    pub(crate) fn new() -> Self {
        Self { map: RefCell::new(HashMap::new()) }
    }

    fn get(&self, sys: &LinearSystem, tf: f64) -> Rc<HorizonData> {
        if let Some(hit) = self.map.borrow().get(&tf.to_bits()) {
            return hit.clone();
        }
        let data = HorizonData::compute(sys, tf);
        let mut map = self.map.borrow_mut();
        if map.len() < HORIZON_CACHE_CAP {
            map.insert(tf.to_bits(), data.clone());
        }
        data
    }
}

fn horizon_at(sys: &LinearSystem, tf: f64, cache: Option<&HorizonCache>) -> Rc<HorizonData> {
    match cache {
        Some(cache) => cache.get(sys, tf),
        None => HorizonData::compute(sys, tf),
    }
}

/// Terminal condition selector for [`steer`].
#[derive(Clone, Copy)]
pub(crate) enum SteerKind<'a> {
    Pff,
    Penalty(&'a TerminalPenalty),
    FixedState,
}

/// Steers `x_a` toward `target` under the given terminal condition.
///
/// `target` has length `n1` for [`SteerKind::Pff`] and
/// [`SteerKind::Penalty`], and length `n` for [`SteerKind::FixedState`].
/// This is the single entry point behind all public solver functions; the
/// planner calls it directly to share a [`HorizonCache`] across a run.
pub(crate) fn steer(
    sys: &LinearSystem,
    kind: SteerKind<'_>,
    x_a: &DVector<f64>,
    target: &DVector<f64>,
    horizon: Horizon,
    cache: Option<&HorizonCache>,
) -> Result<SteeringSolution, SteerError> {
    check_vec("x_a", x_a, sys.dim())?;
    let target_field = match kind {
        SteerKind::FixedState => "x_b",
        _ => "x_c",
    };
    let target_len = match kind {
        SteerKind::FixedState => sys.dim(),
        _ => sys.n1(),
    };
    check_vec(target_field, target, target_len)?;
    if let SteerKind::Penalty(penalty) = kind {
        if penalty.dim() != sys.n2() {
            return Err(SteerError::PenaltyDim { expected: sys.n2(), got: penalty.dim() });
        }
    }
    match horizon {
        Horizon::Fixed(tf) => {
            if !(tf > 0.0) || !tf.is_finite() {
                return Err(LtiError::InvalidTime { what: "tf must be > 0", t: tf }.into());
            }
            let data = horizon_at(sys, tf, cache);
            solve_at(sys, kind, x_a, target, &data).map(|(sol, _)| sol)
        }
        Horizon::Free(t_min, t_max) => free_time_search(sys, kind, x_a, target, t_min, t_max, cache),
    }
}

/// One fixed-arrival-time solve; returns the solution and the arrival-time
/// stationarity residual used by the free-time search.
fn solve_at(
    sys: &LinearSystem,
    kind: SteerKind<'_>,
    x_a: &DVector<f64>,
    target: &DVector<f64>,
    data: &HorizonData,
) -> Result<(SteeringSolution, f64), SteerError> {
    let (sol, residual) = match kind {
        SteerKind::Pff => {
            let chol = data
                .g11_chol
                .as_ref()
                .ok_or(SteerError::DegenerateHorizon { tf: data.tf })?;
            block_solution(sys, SteerVariant::PartialFree, data, chol, sys.n1(), x_a, target)
        }
        SteerKind::FixedState => {
            let chol = data
                .g_chol
                .as_ref()
                .ok_or(SteerError::DegenerateHorizon { tf: data.tf })?;
            block_solution(sys, SteerVariant::FixedState, data, chol, sys.dim(), x_a, target)
        }
        SteerKind::Penalty(penalty) => penalty_solution(sys, penalty, data, x_a, target)?,
    };
    if !sol.cost.is_finite()
        || !residual.is_finite()
        || sol.x_end.iter().any(|v| !v.is_finite())
    {
        return Err(SteerError::DegenerateHorizon { tf: data.tf });
    }
    Ok((sol, residual))
}

/// Shared core of the exactly-free-tail and pinned-full-state conditions.
///
/// Pins the leading `k` components to `target`, zeroes the costate on the
/// rest: `lambda_k = 2 Gkk^-1 (xbar_k - target)`, tail
/// `x2 = xbar_2 - G21 lambda_k / 2`. With `k = n` the tail is empty and this
/// is the pinned-full-state solution. Both callers run the identical
/// arithmetic, so a system whose sampled block is the whole state yields
/// bitwise-equal answers from either entry point.
fn block_solution(
    sys: &LinearSystem,
    variant: SteerVariant,
    data: &HorizonData,
    chol: &Cholesky<f64, Dyn>,
    k: usize,
    x_a: &DVector<f64>,
    target: &DVector<f64>,
) -> (SteeringSolution, f64) {
    let n = sys.dim();
    let xbar = data.xbar(x_a);
    let rhs = xbar.rows(0, k).clone_owned() - target;
    let lambda_k = chol.solve(&rhs) * 2.0;

    let mut lambda = DVector::zeros(n);
    lambda.rows_mut(0, k).copy_from(&lambda_k);
    let mut x_end = DVector::zeros(n);
    x_end.rows_mut(0, k).copy_from(target);
    if k < n {
        let tail = xbar.rows(k, n - k).clone_owned()
            - data.g.view((k, 0), (n - k, k)) * &lambda_k * 0.5;
        x_end.rows_mut(k, n - k).copy_from(&tail);
    }

    let cost = data.tf + 0.25 * quad_form(&data.g, &lambda);
    let residual = terminal_hamiltonian(sys, &x_end, &lambda);
    let sol = SteeringSolution {
        variant,
        x_start: x_a.clone_owned(),
        x_end,
        tf: data.tf,
        cost,
        lambda_tf: lambda,
        boundary_solution: false,
    };
    (sol, residual)
}

/// Penalized-tail condition: the tail costate is `S x2` at arrival, so
/// `lambda_1` and `x2` solve the coupled linear system
/// `(G blkdiag(I, S) / 2 + blkdiag(0, I)) [lambda_1; x2] = [xbar_1 - target; xbar_2]`.
fn penalty_solution(
    sys: &LinearSystem,
    penalty: &TerminalPenalty,
    data: &HorizonData,
    x_a: &DVector<f64>,
    target: &DVector<f64>,
) -> Result<(SteeringSolution, f64), SteerError> {
    let n = sys.dim();
    let n1 = sys.n1();
    let n2 = n - n1;
    let s = penalty.s();
    let xbar = data.xbar(x_a);

    let mut m = DMatrix::zeros(n, n);
    m.view_mut((0, 0), (n, n1))
        .copy_from(&(data.g.view((0, 0), (n, n1)) * 0.5));
    if n2 > 0 {
        let tail_cols = data.g.view((0, n1), (n, n2)).clone_owned() * s * 0.5;
        m.view_mut((0, n1), (n, n2)).copy_from(&tail_cols);
    }
    for i in n1..n {
        m[(i, i)] += 1.0;
    }

    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, n1)
        .copy_from(&(xbar.rows(0, n1).clone_owned() - target));
    rhs.rows_mut(n1, n2).copy_from(&xbar.rows(n1, n2));

    let w = m
        .lu()
        .solve(&rhs)
        .ok_or(SteerError::DegenerateHorizon { tf: data.tf })?;
    let lambda_1 = w.rows(0, n1).clone_owned();
    let x2 = w.rows(n1, n2).clone_owned();
    let lambda_2 = s * &x2;

    let mut lambda = DVector::zeros(n);
    lambda.rows_mut(0, n1).copy_from(&lambda_1);
    lambda.rows_mut(n1, n2).copy_from(&lambda_2);
    let mut x_end = DVector::zeros(n);
    x_end.rows_mut(0, n1).copy_from(target);
    x_end.rows_mut(n1, n2).copy_from(&x2);

    let cost = data.tf + 0.25 * quad_form(&data.g, &lambda) + 0.5 * x2.dot(&(s * &x2));
    let residual = terminal_hamiltonian(sys, &x_end, &lambda);
    let sol = SteeringSolution {
        variant: SteerVariant::Penalty,
        x_start: x_a.clone_owned(),
        x_end,
        tf: data.tf,
        cost,
        lambda_tf: lambda,
        boundary_solution: false,
    };
    Ok((sol, residual))
}

/// Scans a log-spaced arrival-time grid, bisects every stationarity sign
/// change, and returns the cheapest stationary solution. Without any sign
/// change the cheapest grid point is returned flagged as a boundary
/// solution; if no grid point solves at all the connection is rejected.
fn free_time_search(
    sys: &LinearSystem,
    kind: SteerKind<'_>,
    x_a: &DVector<f64>,
    target: &DVector<f64>,
    t_min: f64,
    t_max: f64,
    cache: Option<&HorizonCache>,
) -> Result<SteeringSolution, SteerError> {
    if !(t_min > 0.0) || !(t_max >= t_min) || !t_max.is_finite() {
        return Err(SteerError::BadBounds { t_min, t_max });
    }
    if t_min == t_max {
        let data = horizon_at(sys, t_min, cache);
        let (mut sol, _) = solve_at(sys, kind, x_a, target, &data)?;
        sol.boundary_solution = true;
        return Ok(sol);
    }

    let grid = log_grid(t_min, t_max, GRID_POINTS);
    let mut evals: Vec<Option<(SteeringSolution, f64)>> = Vec::with_capacity(grid.len());
    for &tf in &grid {
        let data = horizon_at(sys, tf, cache);
        evals.push(solve_at(sys, kind, x_a, target, &data).ok());
    }

    let mut roots: Vec<SteeringSolution> = Vec::new();
    for (sol, residual) in evals.iter().flatten() {
        if *residual == 0.0 {
            roots.push(sol.clone());
        }
    }
    for i in 0..evals.len() - 1 {
        if let (Some((_, res_a)), Some((_, res_b))) = (&evals[i], &evals[i + 1]) {
            if res_a * res_b < 0.0 {
                if let Some(sol) =
                    bisect_root(sys, kind, x_a, target, grid[i], *res_a, grid[i + 1], cache)
                {
                    roots.push(sol);
                }
            }
        }
    }

    if let Some(best) = roots
        .into_iter()
        .reduce(|best, sol| if sol.cost < best.cost { sol } else { best })
    {
        return Ok(best);
    }

    let mut best: Option<SteeringSolution> = None;
    for (sol, _) in evals.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
            best = Some(sol);
        }
    }
    match best {
        Some(mut sol) => {
            sol.boundary_solution = true;
            Ok(sol)
        }
        None => Err(SteerError::NoConnection { t_min, t_max }),
    }
}

/// Shrinks a bracket with a sign change down to a relative width of
/// [`BISECT_REL_WIDTH`] and returns the solution at the final midpoint.
fn bisect_root(
    sys: &LinearSystem,
    kind: SteerKind<'_>,
    x_a: &DVector<f64>,
    target: &DVector<f64>,
    mut a: f64,
    mut res_a: f64,
    mut b: f64,
    cache: Option<&HorizonCache>,
) -> Option<SteeringSolution> {
    let mut latest: Option<SteeringSolution> = None;
    for _ in 0..BISECT_MAX_STEPS {
        let mid = 0.5 * (a + b);
        let data = horizon_at(sys, mid, cache);
        let Ok((sol, res_mid)) = solve_at(sys, kind, x_a, target, &data) else {
            return latest;
        };
        latest = Some(sol);
        if res_mid == 0.0 {
            break;
        }
        if (res_mid > 0.0) == (res_a > 0.0) {
            a = mid;
            res_a = res_mid;
        } else {
            b = mid;
        }
        if b - a <= BISECT_REL_WIDTH * mid {
            break;
        }
    }
    latest
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let ratio = hi / lo;
    let denom = (count - 1) as f64;
    let mut grid: Vec<f64> = (0..count)
        .map(|i| lo * ratio.powf(i as f64 / denom))
        .collect();
    grid[0] = lo;
    grid[count - 1] = hi;
    grid
}

fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

/// Hamiltonian at arrival under the optimal control law,
/// `1 + lambda^T (A x + c) - lambda^T Q lambda / 4`. Zero exactly when the
/// arrival time is stationary for the total cost.
fn terminal_hamiltonian(
    sys: &LinearSystem,
    x_end: &DVector<f64>,
    lambda: &DVector<f64>,
) -> f64 {
    let flow = sys.a() * x_end + sys.c();
    1.0 + lambda.dot(&flow) - 0.25 * quad_form(sys.q(), lambda)
}

fn check_vec(field: &'static str, v: &DVector<f64>, expected: usize) -> Result<(), SteerError> {
    if v.len() != expected {
        return Err(SteerError::Dim { field, expected, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SteerError::NonFinite { field });
    }
    Ok(())
}

/// Steers to `x_c` on the leading components in exactly `tf`, leaving the
/// tail free.
pub fn solve_pff_fixed_time(
    sys: &LinearSystem,
    x_a: &DVector<f64>,
    x_c: &DVector<f64>,
    tf: f64,
) -> Result<SteeringSolution, SteerError> {
    steer(sys, SteerKind::Pff, x_a, x_c, Horizon::Fixed(tf), None)
}

/// Steers to `x_c` on the leading components, searching arrival times in
/// `t_bounds = (t_min, t_max)` for the cheapest stationary one.
pub fn solve_pff_free_time(
    sys: &LinearSystem,
    x_a: &DVector<f64>,
    x_c: &DVector<f64>,
    t_bounds: (f64, f64),
) -> Result<SteeringSolution, SteerError> {
    steer(sys, SteerKind::Pff, x_a, x_c, Horizon::Free(t_bounds.0, t_bounds.1), None)
}

/// Steers to `x_c` on the leading components with the tail charged
/// `0.5 x2^T S x2` at arrival. `S = 0` reproduces the exactly-free tail;
/// very large `S` approaches pinning the tail to zero.
pub fn solve_pff_penalty(
    sys: &LinearSystem,
    penalty: &TerminalPenalty,
    x_a: &DVector<f64>,
    x_c: &DVector<f64>,
    horizon: Horizon,
) -> Result<SteeringSolution, SteerError> {
    steer(sys, SteerKind::Penalty(penalty), x_a, x_c, horizon, None)
}

/// Steers to the complete state `x_b` in exactly `tf`.
pub fn solve_fixed_state_fixed_time(
    sys: &LinearSystem,
    x_a: &DVector<f64>,
    x_b: &DVector<f64>,
    tf: f64,
) -> Result<SteeringSolution, SteerError> {
    steer(sys, SteerKind::FixedState, x_a, x_b, Horizon::Fixed(tf), None)
}

/// Steers to the complete state `x_b`, searching arrival times in
/// `t_bounds = (t_min, t_max)` for the cheapest stationary one.
pub fn solve_fixed_state_free_time(
    sys: &LinearSystem,
    x_a: &DVector<f64>,
    x_b: &DVector<f64>,
    t_bounds: (f64, f64),
) -> Result<SteeringSolution, SteerError> {
    steer(sys, SteerKind::FixedState, x_a, x_b, Horizon::Free(t_bounds.0, t_bounds.1), None)
}

/// A solved steering problem prepared for evaluation at arbitrary times.
///
/// State, costate, and the constant-input channel evolve jointly under one
/// `(2n+1)`-square generator, so a point evaluation is one matrix
/// exponential and uniform sampling is repeated multiplication by a fixed
/// step matrix.
#[derive(Debug, Clone)]
pub struct Trajectory {
    solution: SteeringSolution,
    generator: DMatrix<f64>,
    y0: DVector<f64>,
    r_inv_bt: DMatrix<f64>,
    n: usize,
}

impl Trajectory {
    /// Prepares `solution` (produced against `sys`) for evaluation.
    pub fn new(sys: &LinearSystem, solution: SteeringSolution) -> Result<Self, SteerError> {
        let n = sys.dim();
        check_vec("x_start", &solution.x_start, n)?;
        check_vec("lambda_tf", &solution.lambda_tf, n)?;
        if !(solution.tf > 0.0) || !solution.tf.is_finite() {
            return Err(LtiError::InvalidTime { what: "tf must be > 0", t: solution.tf }.into());
        }
        let lambda0 =
            lti::matrix_exponential(&sys.a().transpose(), solution.tf)? * &solution.lambda_tf;

        let mut generator = DMatrix::zeros(2 * n + 1, 2 * n + 1);
        generator.view_mut((0, 0), (n, n)).copy_from(sys.a());
        generator.view_mut((0, n), (n, n)).copy_from(&(sys.q() * -0.5));
        generator.view_mut((0, 2 * n), (n, 1)).copy_from(sys.c());
        generator
            .view_mut((n, n), (n, n))
            .copy_from(&(-sys.a().transpose()));

        let mut y0 = DVector::zeros(2 * n + 1);
        y0.rows_mut(0, n).copy_from(&solution.x_start);
        y0.rows_mut(n, n).copy_from(&lambda0);
        y0[2 * n] = 1.0;

        Ok(Self { solution, generator, y0, r_inv_bt: sys.r_inv_bt().clone(), n })
    }

    /// The solution this trajectory realizes.
    pub fn solution(&self) -> &SteeringSolution {
        &self.solution
    }

    /// State and control at `t` in `[0, tf]`.
    pub fn eval(&self, t: f64) -> Result<(DVector<f64>, DVector<f64>), SteerError> {
        let (x, _, u) = self.eval_with_costate(t)?;
        Ok((x, u))
    }

    /// State, costate, and control at `t` in `[0, tf]`.
    ///
    /// Times overshooting `tf` by up to one part in 1e9 are clamped, so
    /// accumulated endpoints of uniform sweeps stay valid.
    pub fn eval_with_costate(
        &self,
        t: f64,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), SteerError> {
        let tf = self.solution.tf;
        if !t.is_finite() || t < 0.0 || t > tf * (1.0 + 1e-9) {
            return Err(SteerError::TimeOutOfRange { t, tf });
        }
        let y = lti::matrix_exponential(&self.generator, t.min(tf))? * &self.y0;
        Ok(self.split(&y))
    }

    /// States at `intervals + 1` uniformly spaced times covering `[0, tf]`,
    /// endpoints included.
    pub fn states(&self, intervals: usize) -> Vec<DVector<f64>> {
        assert!(intervals >= 1, "need at least one interval");
        let dt = self.solution.tf / intervals as f64;
        let step = lti::matrix_exponential(&self.generator, dt)
            .expect("generator is square and finite by construction");
        let mut y = self.y0.clone();
        let mut out = Vec::with_capacity(intervals + 1);
        out.push(y.rows(0, self.n).clone_owned());
        for _ in 0..intervals {
            y = &step * &y;
            out.push(y.rows(0, self.n).clone_owned());
        }
        out
    }

    fn split(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let x = y.rows(0, self.n).clone_owned();
        let lambda = y.rows(self.n, self.n).clone_owned();
        let u = &self.r_inv_bt * &lambda * -0.5;
        (x, lambda, u)
    }
}

/// State and control of `sol` at time `t`. One-off convenience around
/// [`Trajectory`]; build the trajectory once when sampling many times.
pub fn eval_trajectory(
    sys: &LinearSystem,
    sol: &SteeringSolution,
    t: f64,
) -> Result<(DVector<f64>, DVector<f64>), SteerError> {
    Trajectory::new(sys, sol.clone())?.eval(t)
}

/// Hamiltonian `1 + u^T R u + lambda^T (A x + B u + c)` along `sol` at `t`.
///
/// Constant along an optimal trajectory, and zero everywhere on it when the
/// arrival time is stationary for the total cost.
pub fn hamiltonian_residual(
    sys: &LinearSystem,
    sol: &SteeringSolution,
    t: f64,
) -> Result<f64, SteerError> {
    let traj = Trajectory::new(sys, sol.clone())?;
    let (x, lambda, u) = traj.eval_with_costate(t)?;
    let flow = sys.a() * &x + sys.b() * &u + sys.c();
    Ok(1.0 + u.dot(&(sys.r() * &u)) + lambda.dot(&flow))
}

/// Straight-line travel time `|p_to - p_from| / v_des`, floored at `1e-3`.
///
/// Used as a stand-in arrival time when deferring the exact free-time
/// search. Panics if the slices differ in length or `v_des` is not a
/// positive finite speed.
pub fn heuristic_arrival_time(p_from: &[f64], p_to: &[f64], v_des: f64) -> f64 {
    assert_eq!(p_from.len(), p_to.len(), "position dimensions must match");
    assert!(v_des > 0.0 && v_des.is_finite(), "v_des must be a positive speed");
    let dist_sq: f64 = p_from
        .iter()
        .zip(p_to)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (dist_sq.sqrt() / v_des).max(MIN_HEURISTIC_TIME)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn di_1d() -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            1,
        )
        .unwrap()
    }

    /// Same dynamics, but the sampled block is the whole state.
    fn di_1d_full() -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            2,
        )
        .unwrap()
    }

    fn origin() -> DVector<f64> {
        DVector::zeros(2)
    }

    #[test]
    fn pff_free_time_finds_known_minimum() {
        // Rest to position 3: J(T) = T + 27/T^3, minimized at T = 3 with
        // J = 4, arrival velocity 1.5, costate (-2/3, 0).
        let sys = di_1d();
        let sol = solve_pff_free_time(&sys, &origin(), &DVector::from_row_slice(&[3.0]), (0.05, 20.0))
            .unwrap();
        assert!(!sol.boundary_solution);
        assert_eq!(sol.variant, SteerVariant::PartialFree);
        assert!((sol.tf - 3.0).abs() < 1e-8, "tf = {}", sol.tf);
        assert!((sol.cost - 4.0).abs() < 1e-8, "cost = {}", sol.cost);
        assert!((sol.x_end[0] - 3.0).abs() < 1e-9);
        assert!((sol.x_end[1] - 1.5).abs() < 1e-7);
        assert!((sol.lambda_tf[0] + 2.0 / 3.0).abs() < 1e-7);
        assert!(sol.lambda_tf[1].abs() < 1e-12);
    }

    #[test]
    fn pff_fixed_time_closed_form() {
        // Rest to position 3 in exactly 1: effort cost 3 p^2 / tf^3 = 27,
        // arrival velocity 3 p / (2 tf) = 4.5.
        let sys = di_1d();
        let sol =
            solve_pff_fixed_time(&sys, &origin(), &DVector::from_row_slice(&[3.0]), 1.0).unwrap();
        assert!((sol.cost - 28.0).abs() < 1e-9);
        assert!((sol.x_end[1] - 4.5).abs() < 1e-9);
        assert!((sol.lambda_tf[0] + 18.0).abs() < 1e-8);
        assert!(!sol.boundary_solution);
    }

    #[test]
    fn fixed_state_fixed_time_closed_form() {
        // Rest to rest at position 3 in 3 seconds: lambda = (-8/3, 4),
        // effort 4, total 7.
        let sys = di_1d();
        let sol = solve_fixed_state_fixed_time(
            &sys,
            &origin(),
            &DVector::from_row_slice(&[3.0, 0.0]),
            3.0,
        )
        .unwrap();
        assert_eq!(sol.variant, SteerVariant::FixedState);
        assert!((sol.cost - 7.0).abs() < 1e-9);
        assert!((sol.lambda_tf[0] + 8.0 / 3.0).abs() < 1e-9);
        assert!((sol.lambda_tf[1] - 4.0).abs() < 1e-9);
        assert_eq!(sol.x_end, DVector::from_row_slice(&[3.0, 0.0]));
    }

    #[test]
    fn fixed_state_free_time_agrees_with_free_tail_endpoint() {
        // Steering to the free-tail arrival state must recover the same
        // stationary time and cost.
        let sys = di_1d();
        let sol = solve_fixed_state_free_time(
            &sys,
            &origin(),
            &DVector::from_row_slice(&[3.0, 1.5]),
            (0.05, 20.0),
        )
        .unwrap();
        assert!(!sol.boundary_solution);
        assert!((sol.tf - 3.0).abs() < 1e-7);
        assert!((sol.cost - 4.0).abs() < 1e-8);
    }

    #[test]
    fn full_partition_matches_fixed_state_bitwise() {
        let part = di_1d();
        let full = di_1d_full();
        let x_b = DVector::from_row_slice(&[3.0, 1.5]);
        let via_fixed =
            solve_fixed_state_free_time(&part, &origin(), &x_b, (0.05, 20.0)).unwrap();
        let via_pff = solve_pff_free_time(&full, &origin(), &x_b, (0.05, 20.0)).unwrap();
        assert_eq!(via_fixed.tf.to_bits(), via_pff.tf.to_bits());
        assert_eq!(via_fixed.cost.to_bits(), via_pff.cost.to_bits());
        for i in 0..2 {
            assert_eq!(via_fixed.x_end[i].to_bits(), via_pff.x_end[i].to_bits());
            assert_eq!(via_fixed.lambda_tf[i].to_bits(), via_pff.lambda_tf[i].to_bits());
        }
    }

    #[test]
    fn zero_penalty_reproduces_free_tail() {
        let sys = di_1d();
        let x_c = DVector::from_row_slice(&[3.0]);
        let penalty = TerminalPenalty::zero(1);
        let plain = solve_pff_fixed_time(&sys, &origin(), &x_c, 3.0).unwrap();
        let charged =
            solve_pff_penalty(&sys, &penalty, &origin(), &x_c, Horizon::Fixed(3.0)).unwrap();
        assert!((plain.cost - charged.cost).abs() < 1e-10);
        assert!((plain.x_end[1] - charged.x_end[1]).abs() < 1e-10);
        assert!((plain.lambda_tf[0] - charged.lambda_tf[0]).abs() < 1e-10);

        let plain_free = solve_pff_free_time(&sys, &origin(), &x_c, (0.05, 20.0)).unwrap();
        let charged_free =
            solve_pff_penalty(&sys, &penalty, &origin(), &x_c, Horizon::Free(0.05, 20.0)).unwrap();
        assert!((plain_free.cost - charged_free.cost).abs() < 1e-10);
        assert!((plain_free.tf - charged_free.tf).abs() < 1e-8);
    }

    #[test]
    fn huge_penalty_approaches_pinned_tail() {
        let sys = di_1d();
        let penalty =
            TerminalPenalty::new(DMatrix::from_row_slice(1, 1, &[1e8])).unwrap();
        let sol = solve_pff_penalty(
            &sys,
            &penalty,
            &origin(),
            &DVector::from_row_slice(&[3.0]),
            Horizon::Fixed(3.0),
        )
        .unwrap();
        assert!(sol.x_end[1].abs() < 1e-3, "tail = {}", sol.x_end[1]);
        assert!((sol.cost - 7.0).abs() < 1e-3, "cost = {}", sol.cost);
        assert!((sol.lambda_tf[0] + 8.0 / 3.0).abs() < 1e-5);
        assert!((sol.lambda_tf[1] - 4.0).abs() < 1e-5);
    }

    #[test]
    fn no_stationary_time_falls_back_to_boundary() {
        let sys = di_1d();
        // Already at the target: cost tf is strictly increasing, so the scan
        // settles on the lower bound.
        let stay = solve_pff_free_time(&sys, &origin(), &DVector::zeros(1), (0.05, 20.0)).unwrap();
        assert!(stay.boundary_solution);
        assert_eq!(stay.tf, 0.05);
        assert!((stay.cost - 0.05).abs() < 1e-12);

        // Target far beyond what the window affords: cost still decreasing
        // at the upper bound.
        let rush = solve_pff_free_time(
            &sys,
            &origin(),
            &DVector::from_row_slice(&[1000.0]),
            (0.05, 2.0),
        )
        .unwrap();
        assert!(rush.boundary_solution);
        assert_eq!(rush.tf, 2.0);
    }

    #[test]
    fn equal_bounds_solve_fixed_and_flag() {
        let sys = di_1d();
        let sol =
            solve_pff_free_time(&sys, &origin(), &DVector::from_row_slice(&[3.0]), (1.0, 1.0))
                .unwrap();
        assert!(sol.boundary_solution);
        assert!((sol.cost - 28.0).abs() < 1e-9);
    }

    #[test]
    fn trajectory_matches_closed_form() {
        // For the T = 3 free-tail optimum: u(t) = (3 - t) / 3,
        // v(t) = t - t^2/6, x(t) = t^2/2 - t^3/18.
        let sys = di_1d();
        let sol = solve_pff_free_time(&sys, &origin(), &DVector::from_row_slice(&[3.0]), (0.05, 20.0))
            .unwrap();
        let traj = Trajectory::new(&sys, sol.clone()).unwrap();

        let (x0, u0) = traj.eval(0.0).unwrap();
        assert!((x0 - &sol.x_start).amax() < 1e-12);
        assert!((u0[0] - 1.0).abs() < 1e-7);

        let (x1, u1) = traj.eval(1.0).unwrap();
        assert!((x1[0] - (0.5 - 1.0 / 18.0)).abs() < 1e-8);
        assert!((x1[1] - (1.0 - 1.0 / 6.0)).abs() < 1e-8);
        assert!((u1[0] - 2.0 / 3.0).abs() < 1e-8);

        let (x_end, u_end) = traj.eval(sol.tf).unwrap();
        assert!((x_end - &sol.x_end).amax() < 1e-8);
        assert!(u_end[0].abs() < 1e-7);

        // Slight overshoot from accumulated uniform sweeps is clamped.
        assert!(traj.eval(sol.tf * (1.0 + 5e-10)).is_ok());
        assert!(traj.eval(sol.tf + 0.1).is_err());
        assert!(traj.eval(-0.1).is_err());
    }

    #[test]
    fn uniform_states_refine_consistently() {
        let sys = di_1d();
        let sol = solve_pff_free_time(&sys, &origin(), &DVector::from_row_slice(&[3.0]), (0.05, 20.0))
            .unwrap();
        let traj = Trajectory::new(&sys, sol.clone()).unwrap();
        let coarse = traj.states(4);
        let fine = traj.states(8);
        assert_eq!(coarse.len(), 5);
        assert_eq!(fine.len(), 9);
        assert!((coarse[0].clone() - &sol.x_start).amax() < 1e-14);
        assert!((coarse[4].clone() - &sol.x_end).amax() < 1e-8);
        for i in 0..=4 {
            assert!((fine[2 * i].clone() - &coarse[i]).amax() < 1e-10);
        }
    }

    #[test]
    fn hamiltonian_residual_vanishes_along_stationary_solution() {
        let sys = di_1d();
        let sol = solve_pff_free_time(&sys, &origin(), &DVector::from_row_slice(&[3.0]), (0.05, 20.0))
            .unwrap();
        for &t in &[0.0, 0.7, 1.5, 2.3, sol.tf] {
            let h = hamiltonian_residual(&sys, &sol, t).unwrap();
            assert!(h.abs() < 1e-7, "H({t}) = {h}");
        }
    }

    #[test]
    fn eval_trajectory_one_off_matches() {
        let sys = di_1d();
        let sol =
            solve_pff_fixed_time(&sys, &origin(), &DVector::from_row_slice(&[3.0]), 1.0).unwrap();
        let traj = Trajectory::new(&sys, sol.clone()).unwrap();
        let (xa, ua) = eval_trajectory(&sys, &sol, 0.5).unwrap();
        let (xb, ub) = traj.eval(0.5).unwrap();
        assert_eq!(xa, xb);
        assert_eq!(ua, ub);
    }

    #[test]
    fn heuristic_arrival_time_cases() {
        assert!((heuristic_arrival_time(&[0.0, 0.0], &[3.0, 4.0], 2.0) - 2.5).abs() < 1e-12);
        assert_eq!(heuristic_arrival_time(&[1.0], &[1.0], 1.5), 1e-3);
        assert_eq!(heuristic_arrival_time(&[0.0], &[1.0], 1e9), 1e-3);
    }

    #[test]
    fn cached_and_uncached_solves_are_identical() {
        let sys = di_1d();
        let x_c = DVector::from_row_slice(&[3.0]);
        let cache = HorizonCache::new();
        let warm = steer(
            &sys,
            SteerKind::Pff,
            &origin(),
            &x_c,
            Horizon::Free(0.05, 20.0),
            Some(&cache),
        )
        .unwrap();
        let reuse = steer(
            &sys,
            SteerKind::Pff,
            &origin(),
            &x_c,
            Horizon::Free(0.05, 20.0),
            Some(&cache),
        )
        .unwrap();
        let cold = solve_pff_free_time(&sys, &origin(), &x_c, (0.05, 20.0)).unwrap();
        for sol in [&warm, &reuse] {
            assert_eq!(sol.tf.to_bits(), cold.tf.to_bits());
            assert_eq!(sol.cost.to_bits(), cold.cost.to_bits());
        }
    }

    #[test]
    fn input_validation_errors() {
        let sys = di_1d();
        let bad_len = DVector::zeros(3);
        assert!(matches!(
            solve_pff_fixed_time(&sys, &bad_len, &DVector::zeros(1), 1.0),
            Err(SteerError::Dim { field: "x_a", .. })
        ));
        assert!(matches!(
            solve_pff_fixed_time(&sys, &origin(), &DVector::zeros(2), 1.0),
            Err(SteerError::Dim { field: "x_c", .. })
        ));
        assert!(matches!(
            solve_fixed_state_fixed_time(&sys, &origin(), &DVector::zeros(1), 1.0),
            Err(SteerError::Dim { field: "x_b", .. })
        ));
        let nan = DVector::from_row_slice(&[f64::NAN, 0.0]);
        assert!(matches!(
            solve_fixed_state_fixed_time(&sys, &nan, &origin(), 1.0),
            Err(SteerError::NonFinite { field: "x_a" })
        ));
        assert!(matches!(
            solve_pff_fixed_time(&sys, &origin(), &DVector::zeros(1), -1.0),
            Err(SteerError::System(LtiError::InvalidTime { .. }))
        ));
        assert!(matches!(
            solve_pff_free_time(&sys, &origin(), &DVector::zeros(1), (0.0, 3.0)),
            Err(SteerError::BadBounds { .. })
        ));
        assert!(matches!(
            solve_pff_free_time(&sys, &origin(), &DVector::zeros(1), (2.0, 1.0)),
            Err(SteerError::BadBounds { .. })
        ));
        let wrong_penalty = TerminalPenalty::zero(3);
        assert!(matches!(
            solve_pff_penalty(&sys, &wrong_penalty, &origin(), &DVector::zeros(1), Horizon::Fixed(1.0)),
            Err(SteerError::PenaltyDim { expected: 1, got: 3 })
        ));
    }
}
