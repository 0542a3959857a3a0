//! Property tests over randomized instances: geometric helpers, steering
//! boundary satisfaction, and environment sampling. Tolerances are looser
//! than the unit-test oracles because inputs range over whole boxes rather
//! than hand-picked cases.

use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kinoplan::lti::build_double_integrator_2d;
use kinoplan::planner::shrink;
use kinoplan::steering::{
    solve_fixed_state_fixed_time, solve_pff_fixed_time, solve_pff_free_time,
};
use kinoplan::world::{Aabb, Environment};
use kinoplan::Mode;

fn vec_of(dim: usize, range: std::ops::Range<f64>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(range, dim)
}

/// Two equal-length position vectors plus a positive segment cap.
fn shrink_inputs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (2_usize..5).prop_flat_map(|dim| {
        (vec_of(dim, -10.0..10.0), vec_of(dim, -10.0..10.0), 0.1..5.0_f64)
    })
}

proptest! {
    #[test]
    fn shrink_contracts_and_stays_collinear((from, toward, max_len) in shrink_inputs()) {
        let from = DVector::from_column_slice(&from);
        let toward = DVector::from_column_slice(&toward);
        let pulled = shrink(&from, &toward, max_len);
        let dist = (&pulled - &from).norm();
        prop_assert!(dist <= max_len + 1e-9);
        if (&toward - &from).norm() <= max_len {
            prop_assert_eq!(&pulled, &toward);
        } else {
            // pulled lies on the segment: parallel offsets, full length used
            prop_assert!((dist - max_len).abs() <= 1e-9);
            let along = (&toward - &from).normalize();
            let gap = &pulled - &from - &along * dist;
            prop_assert!(gap.norm() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixed_time_steering_hits_its_boundary_conditions(
        x_a in vec_of(4, -5.0..5.0),
        target in vec_of(2, -5.0..5.0),
        tail in vec_of(2, -2.0..2.0),
        tf in 0.5..6.0_f64,
    ) {
        let sys = build_double_integrator_2d().unwrap();
        let x_a = DVector::from_column_slice(&x_a);

        let pff = solve_pff_fixed_time(
            &sys, &x_a, &DVector::from_column_slice(&target), tf,
        ).unwrap();
        prop_assert!((pff.x_end[0] - target[0]).abs() <= 1e-7);
        prop_assert!((pff.x_end[1] - target[1]).abs() <= 1e-7);
        prop_assert!((pff.tf - tf).abs() == 0.0);
        prop_assert!(pff.cost >= tf);

        let full = DVector::from_column_slice(&[target[0], target[1], tail[0], tail[1]]);
        let fixed = solve_fixed_state_fixed_time(&sys, &x_a, &full, tf).unwrap();
        prop_assert!((&fixed.x_end - &full).amax() <= 1e-7);
        // pinning the tail can only cost more than leaving it free
        prop_assert!(fixed.cost >= pff.cost - 1e-9);
    }

    #[test]
    fn free_time_steering_respects_its_window(
        x_a in vec_of(4, -5.0..5.0),
        target in vec_of(2, -5.0..5.0),
        window in (0.1..1.0_f64, 2.0..20.0_f64),
    ) {
        let sys = build_double_integrator_2d().unwrap();
        let sol = solve_pff_free_time(
            &sys,
            &DVector::from_column_slice(&x_a),
            &DVector::from_column_slice(&target),
            window,
        ).unwrap();
        prop_assert!(sol.tf >= window.0 && sol.tf <= window.1);
        prop_assert!(sol.cost >= sol.tf);
        prop_assert!((sol.x_end[0] - target[0]).abs() <= 1e-7);
        prop_assert!((sol.x_end[1] - target[1]).abs() <= 1e-7);
    }
}

/// A well-formed box: componentwise sorted corner pair.
fn sorted_box(dim: usize, range: std::ops::Range<f64>) -> impl Strategy<Value = Aabb> {
    (vec_of(dim, range.clone()), vec_of(dim, range)).prop_map(|(a, b)| {
        let min: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect();
        let max: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect();
        Aabb::new(min, max).unwrap()
    })
}

proptest! {
    #[test]
    fn samples_are_in_bounds_and_collision_free(
        obstacles in prop::collection::vec(sorted_box(2, 2.0..18.0), 0..4),
        goal in sorted_box(2, 0.0..20.0),
        seed in 0_u64..1000,
    ) {
        let bounds = Aabb::new(vec![0.0, 0.0], vec![20.0, 20.0]).unwrap();
        let tail = Aabb::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let env = Environment::new(bounds, tail, obstacles.clone(), goal).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let p = env.sample_pff(&mut rng).unwrap();
            prop_assert!(p.iter().all(|v| (0.0..=20.0).contains(v)));
            prop_assert!(env.collision_point(&p));
            let full = env.sample_full(&mut rng).unwrap();
            prop_assert_eq!(full.len(), 4);
            prop_assert!(full[2].abs() <= 2.0 && full[3].abs() <= 2.0);
        }
    }
}

proptest! {
    #[test]
    fn mode_names_round_trip(index in 0_usize..4) {
        let mode = Mode::ALL[index];
        let parsed: Mode = mode.to_string().parse().unwrap();
        prop_assert_eq!(parsed, mode);
    }
}
