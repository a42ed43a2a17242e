use proptest::prelude::*;

use sop_core::convex_oracle::solve_convex;
use sop_core::instances::{apply_symmetric_noise, coherence, gen_classification_dataset, gen_linear_instance};
use sop_core::landscape::{classify_critical_point, hessian_quadratic_form, Classification, DEFAULT_CRITICAL_TOL};
use sop_core::numerics::{
    min_norm_solve, norm1, norm2, norm_inf, row_space_projector_apply, sub, svd_compact, DenseMatrix, SeededRng,
    DEFAULT_RANK_TOLERANCE,
};
use sop_core::recovery_theory::{incoherence_holds, nsp_sampled_estimate, rho_from_lemma3};
use sop_core::sop_linear::{gd_step, run_gd, GdConfig, SopLinearState};

fn off_row_space(svd: &sop_core::numerics::CompactSvd, theta: &[f64]) -> f64 {
    norm2(&sub(theta, &row_space_projector_apply(svd, theta).unwrap()))
}

fn low_rank(rng: &mut SeededRng, n: usize, p: usize, r: usize) -> DenseMatrix {
    rng.normal_matrix(n, r).matmul(&rng.normal_matrix(r, p)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs_and_min_norm_is_row_space(seed in any::<u64>(), n in 1usize..30, p in 1usize..40, r in 1usize..8) {
        let mut rng = SeededRng::new(seed);
        let r = r.min(n).min(p);
        let j = low_rank(&mut rng, n, p, r);
        let svd = svd_compact(&j, DEFAULT_RANK_TOLERANCE).unwrap();
        let defect = svd.reconstruct().sub(&j).unwrap().frobenius_norm();
        prop_assert!(defect <= 1e-9 * j.frobenius_norm());
        prop_assert_eq!(svd.rank(), r);

        let b = j.matvec(&rng.normal_vec(p));
        let theta = min_norm_solve(&j, &b).unwrap();
        prop_assert!(off_row_space(&svd, &theta) <= 1e-10 * norm2(&theta).max(1e-300));
        prop_assert!(norm2(&sub(&j.matvec(&theta), &b)) <= 1e-8 * norm2(&b));
    }

    #[test]
    fn instances_satisfy_their_invariants(seed in any::<u64>()) {
        let inst = gen_linear_instance(20, 40, 3, 3, &mut SeededRng::new(seed)).unwrap();
        let again = gen_linear_instance(20, 40, 3, 3, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(&inst, &again);
        prop_assert_eq!(inst.support().len(), 3);
        let fit: Vec<f64> = inst.j.matvec(&inst.theta_star).iter().zip(&inst.s_star).map(|(a, b)| a + b).collect();
        prop_assert!(norm2(&sub(&fit, &inst.y)) <= 1e-9 * norm2(&inst.y));
        let svd = svd_compact(&inst.j, DEFAULT_RANK_TOLERANCE).unwrap();
        prop_assert!(off_row_space(&svd, &inst.theta_star) <= 1e-9 * norm2(&inst.theta_star));
        let mu = coherence(&inst.j).unwrap();
        prop_assert!((1.0 - 1e-9..=20.0 / 3.0 + 1e-9).contains(&mu));
    }

    #[test]
    fn symmetric_noise_only_touches_labels(seed in any::<u64>(), rate in 0.0f64..=1.0) {
        let mut rng = SeededRng::new(seed);
        let ds = gen_classification_dataset(4, 10, 3, 2.0, &mut rng).unwrap();
        let noisy = apply_symmetric_noise(&ds, rate, &mut rng).unwrap();
        prop_assert_eq!(&noisy.inputs, &ds.inputs);
        prop_assert_eq!(&noisy.clean_labels, &ds.clean_labels);
        prop_assert!(noisy.noisy_labels.iter().all(|&c| c < 4));
        for i in 0..ds.len() {
            prop_assert_eq!(noisy.flipped[i], noisy.noisy_labels[i] != noisy.clean_labels[i]);
        }
    }

    #[test]
    fn gd_step_descends_under_local_smoothness_step(seed in any::<u64>(), alpha in 0.5f64..50.0) {
        let mut rng = SeededRng::new(seed);
        let j = rng.normal_matrix(5, 7);
        let y = rng.normal_vec(5);
        let theta = rng.normal_vec(7);
        let u = rng.normal_vec(5);
        let v = rng.normal_vec(5);
        let state = SopLinearState::new(&j, &y, theta, u, v).unwrap();
        let sigma = svd_compact(&j, DEFAULT_RANK_TOLERANCE).unwrap().sigma[0];
        let uv = norm_inf(&state.u).max(norm_inf(&state.v));
        // Curvature bound in the metric where u and v move α times faster.
        let smooth = 3.0 * (sigma * sigma + 8.0 * alpha * uv * uv) + 2.0 * alpha * norm_inf(&state.residual);
        let cfg = GdConfig { tau: 0.5 / smooth, alpha, ..GdConfig::for_matrix(&j, 1e-3, alpha).unwrap() };
        let next = gd_step(&state, &j, &y, &cfg).unwrap();
        prop_assert!(next.objective <= state.objective * (1.0 + 1e-12));
    }

    #[test]
    fn gd_keeps_theta_in_row_space_and_signs(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let inst = gen_linear_instance(8, 12, 2, 2, &mut rng).unwrap();
        let mut cfg = GdConfig::for_matrix(&inst.j, 1e-3, 5.0).unwrap();
        cfg.tau = cfg.tau.min(0.2 / (2.0 * cfg.alpha * norm_inf(&inst.y)));
        let mut state = SopLinearState::initial(&inst.j, &inst.y, cfg.gamma).unwrap();
        let svd = svd_compact(&inst.j, DEFAULT_RANK_TOLERANCE).unwrap();
        for _ in 0..300 {
            let bound = 2.0 * cfg.alpha * cfg.tau * norm_inf(&state.residual);
            state = gd_step(&state, &inst.j, &inst.y, &cfg).unwrap();
            if bound < 1.0 {
                prop_assert!(state.u.iter().chain(&state.v).all(|&x| x > 0.0));
            }
        }
        prop_assert!(off_row_space(&svd, &state.theta) <= 1e-8 * norm2(&state.theta));
    }

    #[test]
    fn strict_saddle_directions_curve_down(seed in any::<u64>()) {
        let inst = gen_linear_instance(10, 14, 2, 2, &mut SeededRng::new(seed)).unwrap();
        let theta = svd_compact(&inst.j, DEFAULT_RANK_TOLERANCE).unwrap().pinv_apply(&inst.y);
        let zeros = vec![0.0; 10];
        let tol = DEFAULT_CRITICAL_TOL;
        let rep = classify_critical_point(&inst.j, &theta, &zeros, &zeros, &inst.y, tol).unwrap();
        prop_assert_eq!(rep.classification, Classification::StrictSaddle);
        let d = rep.negative_direction.unwrap();
        let q = hessian_quadratic_form(&inst.j, &theta, &zeros, &zeros, &inst.y, &d.theta, &d.u, &d.v).unwrap();
        let fitted = inst.j.matvec(&theta);
        let r_w = fitted[rep.witness_index.unwrap()] - inst.y[rep.witness_index.unwrap()];
        prop_assert!(q <= -2.0 * (r_w.abs() - tol));
    }

    #[test]
    fn incoherence_is_monotone(n in 10usize..500, r in 1usize..10, k in 1usize..10, mu in 1.0f64..10.0) {
        if incoherence_holds(n, r, mu, k) {
            prop_assert!(incoherence_holds(n, r, mu, k - 1));
            prop_assert!(r == 1 || incoherence_holds(n, r - 1, mu, k));
        }
    }

    #[test]
    fn l1_mass_shrinks_as_lambda_grows(seed in any::<u64>(), a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let inst = gen_linear_instance(12, 18, 2, 3, &mut SeededRng::new(seed)).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s_lo = solve_convex(&inst.j, &inst.y, lo, 1e-10, 100_000).unwrap().s;
        let s_hi = solve_convex(&inst.j, &inst.y, hi, 1e-10, 100_000).unwrap().s;
        prop_assert!(norm1(&s_lo) >= norm1(&s_hi) - 1e-6);
    }
}

#[test]
fn svd_handles_the_largest_supported_shape() {
    let mut rng = SeededRng::new(3);
    let j = rng.normal_matrix(200, 300);
    let svd = svd_compact(&j, DEFAULT_RANK_TOLERANCE).unwrap();
    assert_eq!(svd.rank(), 200);
    let defect = svd.reconstruct().sub(&j).unwrap().frobenius_norm();
    assert!(defect <= 1e-9 * j.frobenius_norm());
}

#[test]
fn exact_data_gd_endpoints_are_global_minima() {
    for seed in 0..5 {
        let inst = gen_linear_instance(10, 15, 3, 0, &mut SeededRng::new(seed)).unwrap();
        let cfg = GdConfig::for_matrix(&inst.j, 1e-3, 2.0).unwrap();
        let out = run_gd(&inst.j, &inst.y, &cfg).unwrap();
        let s = out.state.s();
        // Ill-conditioned factors leave a residual near 1e-7 at the iteration cap.
        let rep = classify_critical_point(&inst.j, &out.state.theta, &out.state.u, &out.state.v, &inst.y, 1e-5).unwrap();
        assert_eq!(rep.classification, Classification::GlobalMin, "seed {seed}, s = {s:?}");
    }
}

#[test]
fn sampled_nsp_stays_below_the_coherence_bound() {
    let mut rng = SeededRng::new(21);
    let mut checked = 0;
    for _ in 0..100 {
        let j = low_rank(&mut rng, 120, 150, 1);
        let Some(rho) = rho_from_lemma3(&j, 2).unwrap() else { continue };
        let support = rng.choose_without_replacement(120, 2);
        let est = nsp_sampled_estimate(&j, &support, 200, &mut rng).unwrap();
        assert!(est <= rho + 1e-12, "{est} > {rho}");
        checked += 1;
    }
    assert!(checked >= 25);
}
