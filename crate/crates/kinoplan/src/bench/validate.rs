//! Numeric self-checks for the built-in systems: an independent quadrature
//! oracle for the Gramian, finite-difference checks of the drift ODE,
//! boundary satisfaction and stationarity of sampled steering solutions,
//! and the closed-form double-integrator case.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::build_builtin_system;
use super::BenchError;
use crate::lti::{
    drift_state, matrix_exponential, weighted_gramian, LinearSystem, TerminalPenalty,
};
use crate::steering::{
    hamiltonian_residual, solve_fixed_state_free_time, solve_pff_free_time, solve_pff_penalty,
    Horizon, Trajectory,
};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    /// Stable check identifier.
    pub name: &'static str,
    /// Whether the check met its tolerance.
    pub passed: bool,
    /// Residual summary for the report.
    pub detail: String,
}

/// All checks for one system.
#[derive(Debug, Clone)]
pub struct CheckReport {
    /// Which built-in was validated.
    pub system: String,
    /// Individual results in execution order.
    pub checks: Vec<CheckResult>,
}

impl CheckReport {
    /// True when every check passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Gramian by adaptive Simpson quadrature of
/// `integral_0^tf e^{As} B R^-1 B^T e^{A^T s} ds`, driven to an absolute
/// Frobenius tolerance of `rel_tol` times the integral's own scale. Shares
/// nothing with the block-exponential production path, so it serves as an
/// independent oracle.
pub fn gramian_by_quadrature(sys: &LinearSystem, tf: f64, rel_tol: f64) -> DMatrix<f64> {
    assert!(tf > 0.0 && tf.is_finite());
    let f = |s: f64| -> DMatrix<f64> {
        let e = matrix_exponential(sys.a(), s).expect("system matrices are finite");
        &e * sys.q() * e.transpose()
    };
    let fa = f(0.0);
    let fm = f(0.5 * tf);
    let fb = f(tf);
    let whole = simpson(&fa, &fm, &fb, tf);
    let tol = rel_tol * whole.norm().max(1e-300);
    adaptive_simpson(&f, 0.0, tf, &fa, &fm, &fb, &whole, tol, 30)
}

fn simpson(
    fa: &DMatrix<f64>,
    fm: &DMatrix<f64>,
    fb: &DMatrix<f64>,
    h: f64,
) -> DMatrix<f64> {
    (fa + fm * 4.0 + fb) * (h / 6.0)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &dyn Fn(f64) -> DMatrix<f64>,
    a: f64,
    b: f64,
    fa: &DMatrix<f64>,
    fm: &DMatrix<f64>,
    fb: &DMatrix<f64>,
    whole: &DMatrix<f64>,
    tol: f64,
    depth: usize,
) -> DMatrix<f64> {
    let m = 0.5 * (a + b);
    let fl = f(0.5 * (a + m));
    let fr = f(0.5 * (m + b));
    let left = simpson(fa, &fl, fm, m - a);
    let right = simpson(fm, &fr, fb, b - m);
    let refined = &left + &right;
    let err = (&refined - whole).norm();
    if depth == 0 || err <= 15.0 * tol {
        // Richardson extrapolation of the two Simpson levels
        return &refined + (refined.clone() - whole) / 15.0;
    }
    adaptive_simpson(f, a, m, fa, &fl, fm, &left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, &fr, fb, &right, 0.5 * tol, depth - 1)
}

/// Runs every oracle check that applies to the named built-in system.
pub fn validate_builtin(name: &str) -> Result<CheckReport, BenchError> {
    let (sys, penalty) = build_builtin_system(name, None)?;
    let mut checks = Vec::new();
    checks.push(check_gramian_quadrature(&sys));
    checks.push(check_drift_ode(&sys));
    checks.push(check_boundary_satisfaction(&sys));
    checks.push(check_transversality(&sys));
    match name {
        "double_integrator" => {
            checks.push(check_analytic_1d());
            checks.push(check_gramian_1d_closed_form());
        }
        "quadrotor" => {
            let penalty = penalty.expect("the quadrotor ships a terminal penalty");
            checks.push(check_zero_penalty_reduction(&sys, &penalty));
        }
        _ => {}
    }
    Ok(CheckReport { system: name.to_string(), checks })
}

fn check_gramian_quadrature(sys: &LinearSystem) -> CheckResult {
    let mut worst = 0.0_f64;
    for tf in [0.1, 1.0, 3.0, 10.0] {
        let produced = weighted_gramian(sys, tf).expect("valid horizon").matrix;
        let oracle = gramian_by_quadrature(sys, tf, 1e-11);
        let rel = (&produced - &oracle).norm() / oracle.norm();
        worst = worst.max(rel);
    }
    CheckResult {
        name: "gramian_vs_quadrature",
        passed: worst <= 1e-8,
        detail: format!("max rel err {worst:.3e} over tf in {{0.1, 1, 3, 10}}"),
    }
}

fn check_drift_ode(sys: &LinearSystem) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = sys.dim();
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for _ in 0..3 {
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        for t in [0.5, 1.7] {
            let fwd = drift_state(sys, &x0, t + h).unwrap();
            let bwd = drift_state(sys, &x0, t - h).unwrap();
            let mid = drift_state(sys, &x0, t).unwrap();
            let numeric = (fwd - bwd) / (2.0 * h);
            let analytic = sys.a() * &mid + sys.c();
            worst = worst.max((numeric - analytic).amax());
        }
    }
    CheckResult {
        name: "drift_satisfies_ode",
        passed: worst <= 1e-6,
        detail: format!("max |dx/dt - (Ax + c)| = {worst:.3e}"),
    }
}

fn random_state<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0))
}

fn check_boundary_satisfaction(sys: &LinearSystem) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    let mut failures = 0_usize;
    for i in 0..100 {
        let x_a = random_state(&mut rng, sys.dim());
        let (sol, fixed_len) = if i % 2 == 0 {
            let target = random_state(&mut rng, sys.dim());
            match solve_fixed_state_free_time(sys, &x_a, &target, (0.2, 20.0)) {
                Ok(s) => (s, sys.dim()),
                Err(_) => {
                    failures += 1;
                    continue;
                }
            }
        } else {
            let target = random_state(&mut rng, sys.n1());
            match solve_pff_free_time(sys, &x_a, &target, (0.2, 20.0)) {
                Ok(s) => (s, sys.n1()),
                Err(_) => {
                    failures += 1;
                    continue;
                }
            }
        };
        let traj = Trajectory::new(sys, sol.clone()).expect("solution is propagatable");
        let (x_end, _) = traj.eval(sol.tf).expect("tf is in range");
        let gap = (&x_end - &sol.x_end).rows(0, fixed_len).amax();
        worst = worst.max(gap);
    }
    CheckResult {
        name: "boundary_satisfaction",
        passed: worst <= 1e-7 && failures == 0,
        detail: format!("max fixed-component gap {worst:.3e}, {failures} unsolved"),
    }
}

fn check_transversality(sys: &LinearSystem) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_end = 0.0_f64;
    let mut worst_drift = 0.0_f64;
    let mut boundary = 0_usize;
    for _ in 0..200 {
        let x_a = random_state(&mut rng, sys.dim());
        let target = random_state(&mut rng, sys.n1());
        let Ok(sol) = solve_pff_free_time(sys, &x_a, &target, (0.1, 20.0)) else {
            continue;
        };
        if sol.boundary_solution {
            boundary += 1;
            continue;
        }
        let h_end = hamiltonian_residual(sys, &sol, sol.tf).expect("tf is in range");
        worst_end = worst_end.max(h_end.abs());
        for k in 0..10 {
            let t = sol.tf * k as f64 / 9.0;
            let h = hamiltonian_residual(sys, &sol, t).expect("t is in range");
            worst_drift = worst_drift.max((h - h_end).abs());
        }
    }
    CheckResult {
        name: "transversality",
        passed: worst_end <= 1e-6 && worst_drift <= 1e-6,
        detail: format!(
            "max |H(tf)| = {worst_end:.3e}, max drift {worst_drift:.3e}, {boundary} boundary"
        ),
    }
}

fn check_analytic_1d() -> CheckResult {
    let sys = LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DVector::zeros(2),
        DMatrix::from_row_slice(1, 1, &[1.0]),
        1,
    )
    .unwrap();
    let sol = solve_pff_free_time(
        &sys,
        &DVector::zeros(2),
        &DVector::from_row_slice(&[3.0]),
        (0.05, 20.0),
    )
    .unwrap();
    let errs = [
        (sol.tf - 3.0).abs(),
        (sol.cost - 4.0).abs(),
        (sol.x_end[1] - 1.5).abs(),
        (sol.lambda_tf[0] + 2.0 / 3.0).abs(),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    CheckResult {
        name: "analytic_1d_double_integrator",
        passed: worst <= 1e-6,
        detail: format!(
            "tf {:.9}, cost {:.9}, v {:.9}, lambda1 {:.9}",
            sol.tf, sol.cost, sol.x_end[1], sol.lambda_tf[0]
        ),
    }
}

fn check_gramian_1d_closed_form() -> CheckResult {
    let sys = LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DVector::zeros(2),
        DMatrix::from_row_slice(1, 1, &[1.0]),
        1,
    )
    .unwrap();
    let g = weighted_gramian(&sys, 3.0).unwrap().matrix;
    let expected = DMatrix::from_row_slice(2, 2, &[9.0, 4.5, 4.5, 3.0]);
    let worst = (&g - &expected).amax();
    CheckResult {
        name: "gramian_1d_closed_form",
        passed: worst <= 1e-9,
        detail: format!("max entry error {worst:.3e} at tf = 3"),
    }
}

fn check_zero_penalty_reduction(sys: &LinearSystem, shipped: &TerminalPenalty) -> CheckResult {
    assert_eq!(shipped.dim(), sys.n2());
    let zero = TerminalPenalty::zero(sys.n2());
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let x_a = random_state(&mut rng, sys.dim());
        let target = random_state(&mut rng, sys.n1());
        let Ok(pff) = solve_pff_free_time(sys, &x_a, &target, (0.2, 20.0)) else {
            continue;
        };
        let pen = solve_pff_penalty(sys, &zero, &x_a, &target, Horizon::Free(0.2, 20.0))
            .expect("zero penalty solves whenever the free problem does");
        worst = worst.max((pff.cost - pen.cost).abs());
        worst = worst.max((&pff.x_end - &pen.x_end).amax());
        worst = worst.max((pff.tf - pen.tf).abs());
    }
    CheckResult {
        name: "zero_penalty_matches_free_tail",
        passed: worst <= 1e-10,
        detail: format!("max deviation {worst:.3e} over 50 instances"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::build_double_integrator_2d;

    #[test]
    fn quadrature_matches_closed_form_1d() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            1,
        )
        .unwrap();
        let g = gramian_by_quadrature(&sys, 3.0, 1e-12);
        let expected = DMatrix::from_row_slice(2, 2, &[9.0, 4.5, 4.5, 3.0]);
        assert!((&g - &expected).amax() < 1e-9, "quadrature drifted: {g}");
    }

    #[test]
    fn quadrature_agrees_with_production_gramian() {
        let sys = build_double_integrator_2d().unwrap();
        for tf in [0.1, 1.0, 3.0] {
            let produced = weighted_gramian(&sys, tf).unwrap().matrix;
            let oracle = gramian_by_quadrature(&sys, tf, 1e-11);
            let rel = (&produced - &oracle).norm() / oracle.norm();
            assert!(rel < 1e-8, "tf {tf}: rel err {rel:.3e}");
        }
    }

    #[test]
    fn double_integrator_report_passes() {
        let report = validate_builtin("double_integrator").unwrap();
        for check in &report.checks {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
        assert!(report.passed());
    }

    #[test]
    fn quadrotor_report_passes() {
        let report = validate_builtin("quadrotor").unwrap();
        for check in &report.checks {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
        let names: Vec<&str> = report.checks.iter().map(|c| c.name).collect();
        assert!(names.contains(&"zero_penalty_matches_free_tail"));
    }

    #[test]
    fn unknown_system_is_rejected() {
        assert!(matches!(
            validate_builtin("unicycle"),
            Err(BenchError::UnknownBuiltin { .. })
        ));
    }
}
