mod common;

use mflq::affine::solve_lre;
use mflq::matnum;
use mflq::moments::propagate;
use mflq::oracle::{self, exact_cost, ExactOutcome};
use mflq::problem::{parse_problem, problem_to_json, InitialDistribution};
use mflq::riccati::{classify, kleinman_iterate, solve_gre, solve_gre_eps, solve_lyapunov};
use mflq::strategy::{value_at, ClosedLoopStrategy};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sym_matrix(max_n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_n, 0usize..=max_n, any::<u64>()).prop_map(|(n, rank, seed)| {
        let mut r = rng(seed);
        let rank = rank.min(n);
        let f = common::mat(&mut r, n, rank, 2.0);
        let d = common::sym(&mut r, rank, 1.0);
        matnum::symmetrize(&(&f * d * f.transpose()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pinv_is_an_involution(m in sym_matrix(6)) {
        let back = matnum::pinv(&matnum::pinv(&m));
        let scale = m.amax().max(1.0);
        prop_assert!((back - &m).amax() <= 1e-8 * scale);
    }

    #[test]
    fn range_inclusion_agrees_with_rank(m in sym_matrix(5), seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = m.nrows();
        let inside = &m * common::mat(&mut r, n, 2, 1.0);
        prop_assert!(matnum::range_included(&inside, &m).included);
        let h = common::mat(&mut r, n, 1, 1.0);
        let stacked = DMatrix::from_fn(n, n + 1, |i, j| if j < n { m[(i, j)] } else { h[(i, 0)] });
        let tol = 1e-9 * stacked.amax().max(1.0);
        let grows = stacked.rank(tol) > m.rank(tol);
        prop_assert_eq!(matnum::range_included(&h, &m).included, !grows);
    }

    #[test]
    fn eigen_reconstructs(m in sym_matrix(6)) {
        let e = matnum::sym_eigen(&m);
        let back = e.map(|x| x);
        prop_assert!((back - &m).amax() <= 1e-10 * m.amax().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn without_mean_field_terms_p_equals_pi(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut p = common::standard(&mut r);
        for d in &mut p.dynamics {
            d.a_bar.fill(0.0);
            d.b_bar.fill(0.0);
            d.c_bar.fill(0.0);
            d.d_bar.fill(0.0);
        }
        for c in &mut p.cost {
            c.q_bar.fill(0.0);
            c.s_bar.fill(0.0);
            c.r_bar.fill(0.0);
        }
        p.terminal.g_bar.fill(0.0);
        let sol = solve_gre(&p).unwrap();
        for (a, b) in sol.p.iter().zip(&sol.pi) {
            prop_assert!((a - b).amax() <= 1e-10 * a.amax().max(1.0));
        }
    }

    #[test]
    fn shift_is_monotone(seed in any::<u64>(), e1 in 0.0..1.0f64, de in 0.01..1.0f64) {
        let p = common::standard(&mut rng(seed));
        let (s1, s2) = (solve_gre_eps(&p, e1).unwrap(), solve_gre_eps(&p, e1 + de).unwrap());
        for k in 0..s1.p.len() {
            prop_assert!(matnum::psd_check(&(&s2.p[k] - &s1.p[k]), 0.0).min_eig >= -1e-10);
            prop_assert!(matnum::psd_check(&(&s2.pi[k] - &s1.pi[k]), 0.0).min_eig >= -1e-10);
        }
    }

    #[test]
    fn affine_terms_scale_linearly(seed in any::<u64>(), factor in -3.0..3.0f64) {
        let mut r = rng(seed);
        let base = common::standard(&mut r);
        let p = common::with_affine(&mut r, &base);
        let sol = solve_gre(&p).unwrap();
        let a1 = solve_lre(&p, &sol).unwrap();
        let a2 = solve_lre(&p.scale_inhomogeneous(factor), &sol).unwrap();
        for (x, y) in a1.eta.iter().zip(&a2.eta) {
            prop_assert!((x * factor - y).amax() <= 1e-9 * x.amax().max(1.0));
        }
        for (x, y) in a1.v.iter().zip(&a2.v) {
            prop_assert!((x * factor - y).amax() <= 1e-9 * x.amax().max(1.0));
        }
    }

    #[test]
    fn convexity_matches_oracle_sign(seed in any::<u64>(), indefinite in any::<bool>()) {
        let mut r = rng(seed);
        let p = if indefinite { common::indefinite(&mut r) } else { common::standard(&mut r) };
        let verdict = classify(&solve_gre(&p).unwrap());
        let model = oracle::assemble_quadratic(&p).unwrap();
        let convex = model.min_eig() > oracle::EIG_TOL * model.m.amax().max(1.0);
        prop_assert_eq!(convex, verdict.kind.is_strongly_regular());
    }

    #[test]
    fn gre_value_matches_oracle_when_convex(seed in any::<u64>()) {
        let mut r = rng(seed);
        let base = common::standard(&mut r);
        let p = common::with_affine(&mut r, &base);
        let sol = solve_gre(&p).unwrap();
        let aff = solve_lre(&p, &sol).unwrap();
        let formula = value_at(&p, &sol, &aff).value;
        let out = oracle::solve_exact(&p).unwrap();
        let unique = matches!(out, ExactOutcome::Unique { .. });
        prop_assert!(unique);
        let exact = out.value().unwrap();
        prop_assert!((formula - exact).abs() <= 1e-8 * exact.abs().max(1.0));
    }

    #[test]
    fn lyapunov_of_optimal_gains_reproduces_gre(seed in any::<u64>()) {
        let p = common::standard(&mut rng(seed));
        let sol = solve_gre(&p).unwrap();
        let lyap = solve_lyapunov(&p, &sol.theta, &sol.theta_bar).unwrap();
        for k in 0..sol.p.len() {
            prop_assert!((&lyap.p[k] - &sol.p[k]).amax() <= 1e-9 * sol.p[k].amax().max(1.0));
            prop_assert!((&lyap.pi[k] - &sol.pi[k]).amax() <= 1e-9 * sol.pi[k].amax().max(1.0));
        }
    }

    #[test]
    fn policy_iteration_decreases(seed in any::<u64>()) {
        let p = common::standard(&mut rng(seed));
        let out = kleinman_iterate(&p, 200, 1e-12).unwrap();
        for step in &out.trace {
            prop_assert!(step.min_eig_decrease_p >= -1e-10);
            prop_assert!(step.min_eig_decrease_pi >= -1e-10);
        }
        prop_assert!(out.gre_residual <= 1e-9);
    }

    #[test]
    fn covariance_stays_psd(seed in any::<u64>()) {
        let mut r = rng(seed);
        let base = common::indefinite(&mut r);
        let p = common::with_affine(&mut r, &base);
        let s = ClosedLoopStrategy {
            l: p.dims.l,
            theta: (0..p.steps()).map(|_| common::mat(&mut r, p.dims.m, p.dims.n, 1.0)).collect(),
            theta_bar: (0..p.steps()).map(|_| common::mat(&mut r, p.dims.m, p.dims.n, 1.0)).collect(),
            v: (0..p.steps()).map(|_| common::vec(&mut r, p.dims.m, 1.0)).collect(),
        };
        let ms = propagate(&p, &s);
        for t in 0..ms.mean.len() {
            let cov = ms.covariance(t);
            prop_assert!(matnum::psd_check(&cov, 0.0).min_eig >= -1e-9 * cov.amax().max(1.0));
        }
    }

    #[test]
    fn cost_is_quadratic_along_lines(seed in any::<u64>(), lambda in -2.0..2.0f64) {
        let mut r = rng(seed);
        let base = common::indefinite(&mut r);
        let p = common::with_affine(&mut r, &base);
        let u = oracle::control_from_fn(&p, |_, _, _| common::vec(&mut r, p.dims.m, 1.0));
        let v = oracle::control_from_fn(&p, |_, _, _| common::vec(&mut r, p.dims.m, 1.0));
        let j = |t: f64| exact_cost(&p, &u.axpy(t, &v)).unwrap();
        // a quadratic is determined by three points
        let (j0, j1, jm) = (j(0.0), j(1.0), j(-1.0));
        let a = (j1 + jm) / 2.0 - j0;
        let b = (j1 - jm) / 2.0;
        let predicted = j0 + b * lambda + a * lambda * lambda;
        prop_assert!((j(lambda) - predicted).abs() <= 1e-9 * j0.abs().max(a.abs()).max(1.0));
    }

    #[test]
    fn problem_json_round_trips(seed in any::<u64>()) {
        let mut r = rng(seed);
        let base = common::indefinite(&mut r);
        let p = common::with_affine(&mut r, &base);
        let back = parse_problem(&problem_to_json(&p)).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn deterministic_start_ignores_deviation_weight(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = common::standard(&mut r);
        let x0 = common::vec(&mut r, p.dims.n, 1.0);
        let p = p.with_initial(InitialDistribution::deterministic(x0.clone()));
        let sol = solve_gre(&p).unwrap();
        let aff = solve_lre(&p, &sol).unwrap();
        let v = value_at(&p, &sol, &aff);
        prop_assert!(v.deviation_part.abs() <= 1e-12);
        prop_assert!((v.mean_part - x0.dot(&(&sol.pi[0] * &x0))).abs() <= 1e-12 * v.mean_part.abs().max(1.0));
    }
}
