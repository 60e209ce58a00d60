use mixmoment::relax::{PsdBlock, SdpProblem};
use mixmoment::sdp::{solve, SolverOptions, Status};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random bounded feasible problem: `C` positive definite keeps `y = 0`
/// strictly feasible, `c = F^*(Z0)` with `Z0` positive definite keeps the dual
/// strictly feasible.
fn random_problem(seed: u64, m: usize, dims: &[usize], equalities: usize) -> SdpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = SdpProblem::new(m);
    let mut objective = vec![0.0; m];
    for &n in dims {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let c = &a * a.transpose() + DMatrix::identity(n, n);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let z0 = &b * b.transpose() + DMatrix::identity(n, n);
        let mut blk = PsdBlock { dim: n, constant: Vec::new(), coeffs: Vec::new() };
        for r in 0..n {
            for col in r..n {
                blk.constant.push((r, col, c[(r, col)]));
            }
        }
        for k in 0..m {
            for r in 0..n {
                for col in r..n {
                    if rng.gen::<f64>() < 0.6 || r == col {
                        let v = rng.gen_range(-1.0..1.0);
                        blk.coeffs.push((k, r, col, v));
                        let weight = if r == col { 1.0 } else { 2.0 };
                        objective[k] += weight * v * z0[(r, col)];
                    }
                }
            }
        }
        p.blocks.push(blk);
    }
    p.objective = objective;
    for _ in 0..equalities {
        // rows through y = 0 keep the primal feasible
        let mut row = Vec::new();
        for k in 0..m {
            if rng.gen::<f64>() < 0.5 {
                row.push((k, rng.gen_range(-1.0..1.0)));
            }
        }
        if !row.is_empty() {
            p.eq_rows.push(row);
            p.eq_rhs.push(0.0);
        }
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weak_duality_and_psd_duals(seed in 0u64..10_000, m in 1usize..6, equalities in 0usize..3) {
        let p = random_problem(seed, m, &[3, 2], equalities);
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        prop_assert_eq!(sol.status, Status::Optimal);
        prop_assert!(sol.dual_obj <= sol.primal_obj + 1e-9 * (1.0 + sol.primal_obj.abs()));
        for z in &sol.dual_blocks {
            let min = z.clone().symmetric_eigen().eigenvalues.min();
            prop_assert!(min >= -1e-9);
        }
        for (row, rhs) in p.eq_rows.iter().zip(&p.eq_rhs) {
            let lhs: f64 = row.iter().map(|&(k, v)| v * sol.primal[k]).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-8);
        }
    }

    #[test]
    fn solves_are_bitwise_reproducible(seed in 0u64..10_000, m in 1usize..5) {
        let p = random_problem(seed, m, &[3, 3], 1);
        let a = solve(&p, &SolverOptions::default()).unwrap();
        let b = solve(&p, &SolverOptions::default()).unwrap();
        prop_assert_eq!(a.primal, b.primal);
        prop_assert_eq!(a.primal_obj.to_bits(), b.primal_obj.to_bits());
        prop_assert_eq!(a.dual_obj.to_bits(), b.dual_obj.to_bits());
        prop_assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn text_round_trip_preserves_the_optimum(seed in 0u64..10_000) {
        let p = random_problem(seed, 3, &[2, 2], 1);
        let q = SdpProblem::from_text(&p.to_text()).unwrap();
        let a = solve(&p, &SolverOptions::default()).unwrap();
        let b = solve(&q, &SolverOptions::default()).unwrap();
        prop_assert!((a.primal_obj - b.primal_obj).abs() <= 1e-9 * (1.0 + a.primal_obj.abs()));
    }
}
