mod support;

use chloros_qp::{solve, CsrMatrix, QpProblem, QpStatus, TripletBuilder};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::oracle::random_problem;

fn scaled(p: &QpProblem, c: f64) -> QpProblem {
    let mut s = p.clone();
    s.quadratic = p.quadratic.scale(c);
    s.linear.iter_mut().for_each(|v| *v *= c);
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn argmin_is_invariant_under_cost_scaling(seed in any::<u64>(), n in 1usize..=8, m in 0usize..=3, log_c in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, n, m);
        let c = 10f64.powf(log_c);
        let a = solve(&p, 1e-6, 20_000).unwrap();
        let b = solve(&scaled(&p, c), 1e-6, 20_000).unwrap();
        prop_assert_eq!(a.status, QpStatus::Optimal);
        prop_assert_eq!(b.status, QpStatus::Optimal);
        for (x, y) in a.x.iter().zip(&b.x) {
            prop_assert!((x - y).abs() <= 1e-5, "{:?} vs {:?}", a.x, b.x);
        }
    }

    #[test]
    fn identical_inputs_give_identical_outputs(seed in any::<u64>(), n in 1usize..=8, m in 0usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, n, m);
        let a = solve(&p, 1e-6, 20_000).unwrap();
        let b = solve(&p.clone(), 1e-6, 20_000).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn optimal_points_are_feasible_within_tolerance(seed in any::<u64>(), n in 1usize..=8, m in 0usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, n, m);
        let r = solve(&p, 1e-6, 20_000).unwrap();
        prop_assert_eq!(r.status, QpStatus::Optimal);
        prop_assert!(p.max_violation(&r.x) <= 1e-6);
        prop_assert!(r.dual_residual <= 1e-6);
    }
}

/// Receding-horizon shaped problem: rate-penalized inputs with banded output rows.
fn banded_problem(horizon: usize, inputs: usize, band: usize) -> QpProblem {
    let n = horizon * inputs;
    let mut q = TripletBuilder::new(n, n);
    for k in 0..horizon {
        for j in 0..inputs {
            let i = k * inputs + j;
            q.push(i, i, 2.0);
            if k > 0 {
                let p = (k - 1) * inputs + j;
                q.push(i, i, 20.0);
                q.push(p, p, 20.0);
                q.push(i, p, -20.0);
                q.push(p, i, -20.0);
            }
        }
    }
    let mut a = TripletBuilder::new(horizon, n);
    for k in 0..horizon {
        for l in k.saturating_sub(band)..k.saturating_sub(2) {
            for j in 0..inputs {
                a.push(k, l * inputs + j, 0.9f64.powi((k - l) as i32) / band as f64);
            }
        }
    }
    let lo: Vec<f64> = (0..horizon).map(|k| if k < band { f64::NEG_INFINITY } else { 0.2 }).collect();
    let hi = vec![0.5; horizon];
    QpProblem::new(q.build(), vec![0.0; n])
        .with_rows(a.build(), lo, hi)
        .with_bounds(vec![0.0; n], vec![1.5; n])
}

#[test]
fn receding_horizon_sized_problem_solves_to_tolerance() {
    let p = banded_problem(288, 2, 40);
    let r = solve(&p, 1e-6, 20_000).unwrap();
    assert_eq!(r.status, QpStatus::Optimal);
    assert!(r.primal_residual <= 1e-6 && r.dual_residual <= 1e-6);
    // Lower output bounds must bind somewhere since the cost pulls u to zero.
    let ax = p.constraints.mul(&r.x);
    assert!(ax.iter().zip(&p.row_lower).any(|(v, l)| (v - l).abs() < 1e-6));
}

#[test]
fn csr_round_trip_through_dense() {
    let m = CsrMatrix::from_dense(&[vec![0.0, 1.5], vec![-2.0, 0.0]]);
    assert_eq!(CsrMatrix::from_dense(&m.to_dense()), m);
    assert_eq!(m.transpose().transpose(), m);
}
