//! Linear time-invariant systems and the matrix-exponential kernels used by
//! every steering solver.
//!
//! A system is `x' = A x + B u + c` with control weight `R` and a state
//! partition `x = [x1; x2]`: the leading `n1` components are the sampled
//! block, the trailing `n2 = n - n1` the free block that steering solvers may
//! choose. Drift responses and weighted controllability Gramians are computed
//! by augmented matrix exponentials rather than quadrature or symbolic
//! antiderivatives, so they work uniformly for any `A`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Errors from system construction and the numeric kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LtiError {
    /// A matrix that must be square is not.
    #[error("{field} must be square, got {rows}x{cols}")]
    NotSquare {
        /// Which input the shape belongs to.
        field: &'static str,
        /// Row count seen.
        rows: usize,
        /// Column count seen.
        cols: usize,
    },
    /// Two inputs disagree about a dimension.
    #[error("{field} has shape {got}, expected {expected}")]
    Shape {
        /// Which input the shape belongs to.
        field: &'static str,
        /// Expected shape, rendered `rows x cols`.
        expected: String,
        /// Actual shape.
        got: String,
    },
    /// An input contains NaN or infinity.
    #[error("{field} contains non-finite entries")]
    NonFinite {
        /// Which input failed.
        field: &'static str,
    },
    /// `R` is not symmetric positive definite.
    #[error("control weight R is not symmetric positive definite")]
    WeightNotSpd,
    /// The state partition is out of range.
    #[error("partition n1={n1} must satisfy 1 <= n1 <= n={n}")]
    BadPartition {
        /// Requested sampled-block size.
        n1: usize,
        /// State dimension.
        n: usize,
    },
    /// The controllability probe failed.
    #[error("(A, B) fails the controllability probe: sigma ratio {ratio:.3e} < 1e-10")]
    Uncontrollable {
        /// Smallest over largest singular value of the probe Gramian.
        ratio: f64,
    },
    /// A time argument is outside its domain.
    #[error("{what}: got t = {t}")]
    InvalidTime {
        /// Which constraint was violated.
        what: &'static str,
        /// Offending value.
        t: f64,
    },
    /// A terminal penalty weight is not symmetric positive semidefinite.
    #[error("terminal penalty S is not symmetric positive semidefinite")]
    PenaltyNotPsd,
}

/// Relative condition-number threshold above which a Gramian is flagged.
const GRAMIAN_CONDITION_LIMIT: f64 = 1e12;

/// Minimum `sigma_min / sigma_max` of the probe Gramian for `(A, B)` to count
/// as controllable.
const CONTROLLABILITY_TOL: f64 = 1e-10;

/// A linear system `x' = A x + B u + c` with control weight `R` and a sampled
/// / free state partition at `n1`.
///
/// Construction validates shapes, finiteness, that `R` is symmetric positive
/// definite, that `(A, B)` passes a controllability probe, and that
/// `1 <= n1 <= n`. Instances are immutable afterwards.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DVector<f64>,
    r: DMatrix<f64>,
    n1: usize,
    // B R^-1 B^T and R^-1 B^T, precomputed once; every solver needs them.
    q: DMatrix<f64>,
    r_inv_bt: DMatrix<f64>,
}

impl LinearSystem {
    /// Builds and validates a system.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DVector<f64>,
        r: DMatrix<f64>,
        n1: usize,
    ) -> Result<Self, LtiError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LtiError::NotSquare { field: "A", rows: a.nrows(), cols: a.ncols() });
        }
        if b.nrows() != n {
            return Err(LtiError::Shape {
                field: "B",
                expected: format!("{n} x m"),
                got: format!("{} x {}", b.nrows(), b.ncols()),
            });
        }
        let m = b.ncols();
        if m == 0 {
            return Err(LtiError::Shape {
                field: "B",
                expected: format!("{n} x m with m >= 1"),
                got: format!("{n} x 0"),
            });
        }
        if c.len() != n {
            return Err(LtiError::Shape {
                field: "c",
                expected: format!("{n}"),
                got: format!("{}", c.len()),
            });
        }
        if r.nrows() != m || r.ncols() != m {
            return Err(LtiError::Shape {
                field: "R",
                expected: format!("{m} x {m}"),
                got: format!("{} x {}", r.nrows(), r.ncols()),
            });
        }
        for (field, ok) in [
            ("A", a.iter().all(|v| v.is_finite())),
            ("B", b.iter().all(|v| v.is_finite())),
            ("c", c.iter().all(|v| v.is_finite())),
            ("R", r.iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                return Err(LtiError::NonFinite { field });
            }
        }
        if n1 < 1 || n1 > n {
            return Err(LtiError::BadPartition { n1, n });
        }

        let sym_err = (&r - r.transpose()).amax();
        if sym_err > 1e-10 * (1.0 + r.amax()) {
            return Err(LtiError::WeightNotSpd);
        }
        let r_chol = r.clone().cholesky().ok_or(LtiError::WeightNotSpd)?;
        let r_inv_bt = r_chol.solve(&b.transpose());
        let q = &b * &r_inv_bt;

        // Controllability probe: the standard Gramian (unit weight) at t = 1
        // must be far from singular.
        let probe = gramian_raw(&a, &(&b * b.transpose()), 1.0);
        let sv = probe.singular_values();
        let (max, min) = (sv.max(), sv.min());
        let ratio = if max > 0.0 { min / max } else { 0.0 };
        if !(ratio >= CONTROLLABILITY_TOL) {
            return Err(LtiError::Uncontrollable { ratio });
        }

        Ok(Self { a, b, c, r, n1, q, r_inv_bt })
    }

    /// State dimension `n`.
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Control dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Size of the sampled leading block.
    pub fn n1(&self) -> usize {
        self.n1
    }

    /// Size of the free trailing block.
    pub fn n2(&self) -> usize {
        self.dim() - self.n1
    }

    /// System matrix `A`.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Input matrix `B`.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Constant drift `c`.
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// Control weight `R`.
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// `B R^-1 B^T`.
    pub(crate) fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `R^-1 B^T`.
    pub(crate) fn r_inv_bt(&self) -> &DMatrix<f64> {
        &self.r_inv_bt
    }
}

/// Physical parameters of the linearized quadrotor.
///
/// The acceptance of any scenario is parameter-relative: these defaults are
/// plausible small-quadrotor values, not ground truth, and scenario files may
/// override all of them.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrotorParams {
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Vehicle mass (kg).
    pub mass: f64,
    /// Rotor arm length (m).
    pub arm: f64,
    /// Moment of inertia about the rotor-coplanar axes (kg m^2).
    pub inertia: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self { gravity: 9.8, mass: 0.5, arm: 0.17, inertia: 0.0023 }
    }
}

impl QuadrotorParams {
    fn validate(&self) -> Result<(), LtiError> {
        let all = [self.gravity, self.mass, self.arm, self.inertia];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(LtiError::NonFinite { field: "quadrotor params" });
        }
        if all.iter().any(|&v| v <= 0.0) {
            return Err(LtiError::InvalidTime { what: "quadrotor params must be positive", t: 0.0 });
        }
        Ok(())
    }
}

/// Computes `exp(M t)` by scaling and squaring with a Pade core.
///
/// `t` may be negative. Relative error is at the 1e-13 level for
/// well-conditioned inputs.
pub fn matrix_exponential(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>, LtiError> {
    if m.nrows() != m.ncols() {
        return Err(LtiError::NotSquare { field: "M", rows: m.nrows(), cols: m.ncols() });
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(LtiError::NonFinite { field: "M" });
    }
    if !t.is_finite() {
        return Err(LtiError::InvalidTime { what: "t must be finite", t });
    }
    Ok(expm(&(m * t)))
}

/// Zero-control response `xbar(t) = e^{At} x0 + integral_0^t e^{A(t-s)} c ds`.
///
/// The integral term comes from one exponential of the `(n+1)`-square block
/// matrix `[[A, c],[0, 0]]`.
pub fn drift_state(sys: &LinearSystem, x0: &DVector<f64>, t: f64) -> Result<DVector<f64>, LtiError> {
    let n = sys.dim();
    if x0.len() != n {
        return Err(LtiError::Shape {
            field: "x0",
            expected: format!("{n}"),
            got: format!("{}", x0.len()),
        });
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(LtiError::InvalidTime { what: "t must be >= 0", t });
    }
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    aug.view_mut((0, n), (n, 1)).copy_from(&sys.c);
    let e = expm(&(aug * t));
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let mut acc = e[(i, n)];
        for j in 0..n {
            acc += e[(i, j)] * x0[j];
        }
        out[i] = acc;
    }
    Ok(out)
}

/// A weighted controllability Gramian, with a conditioning flag.
#[derive(Debug, Clone)]
pub struct Gramian {
    /// The symmetric positive-definite Gramian matrix.
    pub matrix: DMatrix<f64>,
    /// True when the condition estimate exceeds `1e12`; the matrix is still
    /// returned, but downstream solves may be inaccurate.
    pub ill_conditioned: bool,
}

/// Weighted controllability Gramian
/// `G(tf) = integral_0^tf e^{A(tf-s)} B R^-1 B^T e^{A^T(tf-s)} ds`.
///
/// Computed by exponentiating the `2n`-square block matrix
/// `[[A, B R^-1 B^T],[0, -A^T]]` once and recombining the blocks. A
/// near-singular result is returned with [`Gramian::ill_conditioned`] set.
pub fn weighted_gramian(sys: &LinearSystem, tf: f64) -> Result<Gramian, LtiError> {
    if !(tf > 0.0) || !tf.is_finite() {
        return Err(LtiError::InvalidTime { what: "tf must be > 0", t: tf });
    }
    let matrix = gramian_raw(&sys.a, &sys.q, tf);
    let sv = matrix.singular_values();
    let (max, min) = (sv.max(), sv.min());
    let ill_conditioned = !(min > 0.0) || max / min > GRAMIAN_CONDITION_LIMIT;
    Ok(Gramian { matrix, ill_conditioned })
}

/// Gramian core shared with the construction-time controllability probe:
/// exp([[A, Q],[0, -A^T]] t), then `G = F12 F11^T`, symmetrized.
fn gramian_raw(a: &DMatrix<f64>, q: &DMatrix<f64>, tf: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, n)).copy_from(q);
    aug.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let e = expm(&(aug * tf));
    let f11 = e.view((0, 0), (n, n));
    let f12 = e.view((0, n), (n, n));
    let g = f12 * f11.transpose();
    // exact symmetry, so downstream Cholesky factorizations are stable
    DMatrix::from_fn(n, n, |i, j| 0.5 * (g[(i, j)] + g[(j, i)]))
}

/// Symmetric positive-semidefinite weight on the free tail of the final
/// state. `S = 0` recovers the exactly-free tail; large entries pin the
/// corresponding components near zero deviation.
#[derive(Debug, Clone)]
pub struct TerminalPenalty {
    s: DMatrix<f64>,
}

impl TerminalPenalty {
    /// Validates that `s` is square, finite, symmetric, and positive
    /// semidefinite. The zero matrix is allowed.
    pub fn new(s: DMatrix<f64>) -> Result<Self, LtiError> {
        if s.nrows() != s.ncols() {
            return Err(LtiError::NotSquare {
                field: "S",
                rows: s.nrows(),
                cols: s.ncols(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(LtiError::NonFinite { field: "S" });
        }
        let scale = 1.0 + s.amax();
        if (&s - s.transpose()).amax() > 1e-9 * scale {
            return Err(LtiError::PenaltyNotPsd);
        }
        if s.nrows() > 0 {
            let eigs = s.clone().symmetric_eigenvalues();
            if eigs.min() < -1e-9 * scale {
                return Err(LtiError::PenaltyNotPsd);
            }
        }
        Ok(Self { s })
    }

    /// The all-zero penalty on a tail of dimension `n2`.
    pub fn zero(n2: usize) -> Self {
        Self { s: DMatrix::zeros(n2, n2) }
    }

    /// The weight matrix.
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Tail dimension this penalty applies to.
    pub fn dim(&self) -> usize {
        self.s.nrows()
    }
}

/// Everything the steering solvers need at one arrival time, from a single
/// exponential of the `(2n+1)`-square matrix `[[A, Q, c],[0, -A^T, 0],[0,0,0]]`.
pub(crate) struct HorizonKernels {
    /// `e^{A tf}`.
    pub e_at: DMatrix<f64>,
    /// Weighted Gramian `G(tf)`.
    pub g: DMatrix<f64>,
    /// Drift integral `integral_0^tf e^{A(tf-s)} c ds`.
    pub drift: DVector<f64>,
}

pub(crate) fn horizon_kernels(sys: &LinearSystem, tf: f64) -> HorizonKernels {
    let n = sys.dim();
    let mut aug = DMatrix::zeros(2 * n + 1, 2 * n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    aug.view_mut((0, n), (n, n)).copy_from(&sys.q);
    aug.view_mut((0, 2 * n), (n, 1)).copy_from(&sys.c);
    aug.view_mut((n, n), (n, n)).copy_from(&(-sys.a.transpose()));
    let e = expm(&(aug * tf));
    let e_at = e.view((0, 0), (n, n)).clone_owned();
    let f12 = e.view((0, n), (n, n));
    let g = &f12 * e_at.transpose();
    let g = DMatrix::from_fn(n, n, |i, j| 0.5 * (g[(i, j)] + g[(j, i)]));
    let drift = e.view((0, 2 * n), (n, 1)).column(0).clone_owned();
    HorizonKernels { e_at, g, drift }
}

/// The 4-state planar double integrator: positions then velocities,
/// `A = [[0, I2],[0, 0]]`, `B = [0; I2]`, `c = 0`, `R = I2`, position sampled.
pub fn build_double_integrator_2d() -> Result<LinearSystem, LtiError> {
    let mut a = DMatrix::zeros(4, 4);
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    let mut b = DMatrix::zeros(4, 2);
    b[(2, 0)] = 1.0;
    b[(3, 1)] = 1.0;
    LinearSystem::new(a, b, DVector::zeros(4), DMatrix::identity(2, 2), 2)
}

/// The 10-state linearized quadrotor.
///
/// State ordering: position (3), velocity (3), roll/pitch attitude (2),
/// attitude rate (2). Gravity couples attitude into lateral acceleration,
/// thrust enters vertical acceleration scaled by `1/mass`, torques enter the
/// attitude rates scaled by `arm/inertia`. Controls weigh as
/// `R = diag(15, 30, 30)`; the terminal penalty `S = diag(0,0,0,20,20,0,0)`
/// penalizes the attitude components of the free block.
pub fn build_quadrotor_10d(
    params: &QuadrotorParams,
) -> Result<(LinearSystem, TerminalPenalty), LtiError> {
    params.validate()?;
    let mut a = DMatrix::zeros(10, 10);
    for i in 0..3 {
        a[(i, 3 + i)] = 1.0; // p' = v
    }
    a[(3, 7)] = params.gravity; // vx' = g * pitch
    a[(4, 6)] = -params.gravity; // vy' = -g * roll
    for i in 0..2 {
        a[(6 + i, 8 + i)] = 1.0; // r' = w
    }
    let mut b = DMatrix::zeros(10, 3);
    b[(5, 0)] = 1.0 / params.mass;
    b[(8, 1)] = params.arm / params.inertia;
    b[(9, 2)] = params.arm / params.inertia;
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(&[15.0, 30.0, 30.0]));
    let sys = LinearSystem::new(a, b, DVector::zeros(10), r, 3)?;
    let mut s = DMatrix::zeros(7, 7);
    s[(3, 3)] = 20.0;
    s[(4, 4)] = 20.0;
    let penalty = TerminalPenalty::new(s).expect("constant S is PSD");
    Ok((sys, penalty))
}

// Scaling-and-squaring matrix exponential with the Pade approximant ladder
// and backward-error thresholds of Higham (2005).

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn l1_norm(m: &DMatrix<f64>) -> f64 {
    let mut best = 0.0_f64;
    for j in 0..m.ncols() {
        let mut s = 0.0;
        for i in 0..m.nrows() {
            s += m[(i, j)].abs();
        }
        best = best.max(s);
    }
    best
}

fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = l1_norm(a);
    if norm <= THETA_9 {
        let coeffs: &[f64] = if norm <= THETA_3 {
            &B3
        } else if norm <= THETA_5 {
            &B5
        } else if norm <= THETA_7 {
            &B7
        } else {
            &B9
        };
        return pade_low(a, coeffs);
    }
    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
    let scaled = a / 2f64.powi(s);
    let mut x = pade13(&scaled);
    for _ in 0..s {
        x = &x * &x;
    }
    x
}

/// Pade approximant of order 3/5/7/9: `U` collects odd powers, `V` even ones,
/// and the result solves `(V - U) X = V + U`.
fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let a2 = a * a;
    let mut even = DMatrix::<f64>::identity(n, n) * b[0]; // b0 I + b2 A2 + ...
    let mut odd = DMatrix::<f64>::identity(n, n) * b[1]; // b1 I + b3 A2 + ...
    let mut pow = DMatrix::<f64>::identity(n, n);
    let mut k = 2;
    while k < b.len() {
        pow = &pow * &a2;
        even += &pow * b[k];
        if k + 1 < b.len() {
            odd += &pow * b[k + 1];
        }
        k += 2;
    }
    let u = a * odd;
    solve_pade(&even, &u)
}

fn pade13(a: &DMatrix<f64>) -> DMatrix<f64> {
    let b = &B13;
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * &u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v_inner = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * &v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    solve_pade(&v, &u)
}

fn solve_pade(v: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    (v - u)
        .clone()
        .lu()
        .solve(&(v + u))
        .expect("Pade denominator is nonsingular within the theta bounds")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn di_1d() -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DVector::zeros(2),
            DMatrix::identity(1, 1),
            1,
        )
        .unwrap()
    }

    #[test]
    fn exp_of_zero_time_is_identity() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let e = matrix_exponential(&m, 0.0).unwrap();
        assert!((e - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn exp_nilpotent_di_closed_form() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        for s in [0.3, 1.0, 7.5, -2.0] {
            let e = matrix_exponential(&a, s).unwrap();
            let want = DMatrix::from_row_slice(2, 2, &[1.0, s, 0.0, 1.0]);
            assert!((e - want).amax() < 1e-13, "s = {s}");
        }
    }

    #[test]
    fn exp_diagonal_closed_form() {
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.4, -1.3]));
        let e = matrix_exponential(&m, 2.0).unwrap();
        assert!((e[(0, 0)] - (0.8_f64).exp()).abs() < 1e-13);
        assert!((e[(1, 1)] - (-2.6_f64).exp()).abs() < 1e-13);
        assert!(e[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn exp_rejects_bad_input() {
        let m = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(matrix_exponential(&m, 1.0).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[0.0, f64::NAN, 0.0, 0.0]);
        assert!(matrix_exponential(&m, 1.0).is_err());
    }

    #[test]
    fn exp_semigroup_on_random_stable_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for size in [2, 5, 10] {
            for _ in 0..20 {
                let raw = DMatrix::from_fn(size, size, |_, _| rng.random_range(-1.0..1.0));
                let m = &raw - DMatrix::<f64>::identity(size, size) * (l1_norm(&raw) * 0.5 + 0.1);
                let t = rng.random_range(-5.0..5.0);
                let s = rng.random_range(-5.0..5.0);
                let lhs = matrix_exponential(&m, t + s).unwrap();
                let rhs = matrix_exponential(&m, t).unwrap() * matrix_exponential(&m, s).unwrap();
                let denom = l1_norm(&lhs).max(1.0);
                assert!(l1_norm(&(lhs.clone() - rhs)) / denom < 1e-10, "size {size}");
            }
        }
    }

    #[test]
    fn drift_zero_horizon_is_identity() {
        let sys = build_double_integrator_2d().unwrap();
        let x0 = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(drift_state(&sys, &x0, 0.0).unwrap(), x0);
    }

    #[test]
    fn drift_ballistic_closed_form() {
        let sys = build_double_integrator_2d().unwrap();
        let x0 = DVector::from_column_slice(&[0.0, 0.0, 1.0, 1.0]);
        let x = drift_state(&sys, &x0, 2.0).unwrap();
        let want = DVector::from_column_slice(&[2.0, 2.0, 1.0, 1.0]);
        assert!((x - want).amax() < 1e-12);
    }

    #[test]
    fn drift_quadrotor_hover_stays_at_origin() {
        let (sys, _) = build_quadrotor_10d(&QuadrotorParams::default()).unwrap();
        let x = drift_state(&sys, &DVector::zeros(10), 1.0).unwrap();
        assert!(x.amax() < 1e-14);
    }

    #[test]
    fn drift_with_constant_input_integrates_it() {
        // x' = c alone: one state, A = 0, c = 2 -> x(t) = x0 + 2t.
        let sys = LinearSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_column_slice(&[2.0]),
            DMatrix::identity(1, 1),
            1,
        )
        .unwrap();
        let x = drift_state(&sys, &DVector::from_column_slice(&[1.0]), 3.0).unwrap();
        assert!((x[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn drift_rejects_negative_time() {
        let sys = build_double_integrator_2d().unwrap();
        assert!(drift_state(&sys, &DVector::zeros(4), -0.1).is_err());
    }

    #[test]
    fn drift_satisfies_the_ode() {
        let h = 1e-5;
        let (quad, _) = build_quadrotor_10d(&QuadrotorParams::default()).unwrap();
        let systems = [build_double_integrator_2d().unwrap(), quad];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sys in &systems {
            for _ in 0..10 {
                let x0 = DVector::from_fn(sys.dim(), |_, _| rng.random_range(-2.0..2.0));
                let t = rng.random_range(0.5..4.0);
                let fwd = drift_state(sys, &x0, t + h).unwrap();
                let bwd = drift_state(sys, &x0, t - h).unwrap();
                let mid = drift_state(sys, &x0, t).unwrap();
                let numeric = (fwd - bwd) / (2.0 * h);
                let exact = sys.a() * &mid + sys.c();
                assert!((numeric - exact).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn gramian_1d_di_closed_form() {
        let sys = di_1d();
        let g = weighted_gramian(&sys, 3.0).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[9.0, 4.5, 4.5, 3.0]);
        assert!((g.matrix.clone() - want).amax() < 1e-9);
        assert!(!g.ill_conditioned);
    }

    #[test]
    fn gramian_closed_form_profile() {
        // [[T^3/3, T^2/2],[T^2/2, T]] for several horizons
        let sys = di_1d();
        for tf in [0.2, 1.0, 5.0] {
            let g = weighted_gramian(&sys, tf).unwrap().matrix;
            assert!((g[(0, 0)] - tf.powi(3) / 3.0).abs() < 1e-10 * tf.powi(3).max(1.0));
            assert!((g[(0, 1)] - tf.powi(2) / 2.0).abs() < 1e-10 * tf.powi(2).max(1.0));
            assert!((g[(1, 1)] - tf).abs() < 1e-10 * tf.max(1.0));
        }
    }

    #[test]
    fn gramian_vanishes_at_tiny_horizon() {
        let sys = build_double_integrator_2d().unwrap();
        let g = weighted_gramian(&sys, 1e-8).unwrap();
        assert!(g.matrix.amax() <= 1e-7);
        assert!(g.ill_conditioned);
    }

    #[test]
    fn gramian_rejects_nonpositive_horizon() {
        let sys = di_1d();
        assert!(weighted_gramian(&sys, 0.0).is_err());
        assert!(weighted_gramian(&sys, -1.0).is_err());
    }

    #[test]
    fn gramian_symmetric_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (quad, _) = build_quadrotor_10d(&QuadrotorParams::default()).unwrap();
        let systems = [build_double_integrator_2d().unwrap(), quad];
        for sys in &systems {
            for _ in 0..8 {
                let tf = rng.random_range(0.1..10.0);
                let g = weighted_gramian(sys, tf).unwrap().matrix;
                let asym = (&g - g.transpose()).amax();
                assert!(asym <= 1e-12 * g.amax());
                assert!(g.clone().cholesky().is_some(), "tf = {tf}");
            }
        }
    }

    #[test]
    fn horizon_kernels_match_public_ops() {
        let (quad, _) = build_quadrotor_10d(&QuadrotorParams::default()).unwrap();
        let systems = [build_double_integrator_2d().unwrap(), quad];
        for sys in &systems {
            for tf in [0.3, 2.0, 6.0] {
                let k = horizon_kernels(sys, tf);
                let g = weighted_gramian(sys, tf).unwrap().matrix;
                assert!((k.g.clone() - g).amax() < 1e-11);
                let e = matrix_exponential(sys.a(), tf).unwrap();
                assert!((k.e_at.clone() - e).amax() < 1e-11);
                let x0 = DVector::from_fn(sys.dim(), |i, _| i as f64 * 0.25 - 1.0);
                let xbar = drift_state(sys, &x0, tf).unwrap();
                let via_kernels = &k.e_at * &x0 + &k.drift;
                assert!((via_kernels - xbar).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn double_integrator_matrices_as_printed() {
        let sys = build_double_integrator_2d().unwrap();
        assert_eq!(sys.dim(), 4);
        assert_eq!(sys.input_dim(), 2);
        assert_eq!(sys.n1(), 2);
        assert_eq!(sys.a()[(0, 2)], 1.0);
        assert_eq!(sys.a()[(1, 3)], 1.0);
        assert_eq!(sys.a().iter().filter(|v| **v != 0.0).count(), 2);
        assert_eq!(sys.r(), &DMatrix::identity(2, 2));
        assert!(sys.c().amax() == 0.0);
    }

    #[test]
    fn quadrotor_matrices_as_printed() {
        let p = QuadrotorParams::default();
        let (sys, penalty) = build_quadrotor_10d(&p).unwrap();
        assert_eq!(sys.dim(), 10);
        assert_eq!(sys.input_dim(), 3);
        assert_eq!(sys.n1(), 3);
        assert_eq!(sys.a()[(3, 7)], p.gravity);
        assert_eq!(sys.a()[(4, 6)], -p.gravity);
        assert_eq!(sys.b()[(5, 0)], 1.0 / p.mass);
        assert_eq!(sys.b()[(8, 1)], p.arm / p.inertia);
        assert_eq!(sys.b()[(9, 2)], p.arm / p.inertia);
        let r = sys.r();
        assert_eq!((r[(0, 0)], r[(1, 1)], r[(2, 2)]), (15.0, 30.0, 30.0));
        let s = penalty.s();
        assert_eq!(s.nrows(), 7);
        assert_eq!((s[(3, 3)], s[(4, 4)]), (20.0, 20.0));
        assert_eq!(s.iter().filter(|v| **v != 0.0).count(), 2);
    }

    #[test]
    fn construction_rejects_bad_systems() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = DVector::zeros(2);
        let r = DMatrix::identity(1, 1);
        // A = 0 with this B leaves the first state uncontrollable
        assert!(matches!(
            LinearSystem::new(a.clone(), b.clone(), c.clone(), r.clone(), 1),
            Err(LtiError::Uncontrollable { .. })
        ));
        let a_di = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            LinearSystem::new(a_di.clone(), b.clone(), c.clone(), -r.clone(), 1),
            Err(LtiError::WeightNotSpd)
        ));
        assert!(matches!(
            LinearSystem::new(a_di.clone(), b.clone(), c.clone(), r.clone(), 0),
            Err(LtiError::BadPartition { .. })
        ));
        assert!(matches!(
            LinearSystem::new(a_di, b, DVector::zeros(3), r, 1),
            Err(LtiError::Shape { field: "c", .. })
        ));
    }
}
