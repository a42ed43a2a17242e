//! Exit criteria. Each test writes one `criterion N: PASS|FAIL` line straight
//! to stderr (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use sop_core::convex_oracle::{alpha_from_lambda, lambda_zero, solve_convex, verify_kkt};
use sop_core::experiments::{
    cmd_classify, cmd_phase_transition, implicit_bias_grid, least_squares_check, log_space, ClassifyConfig,
    PhaseTransitionConfig,
};
use sop_core::instances::{gen_classification_dataset, gen_linear_instance, NoisyDataset};
use sop_core::landscape::{full_gradient, hessian_quadratic_form, Classification};
use sop_core::numerics::{norm2, sub, DenseMatrix, SeededRng};
use sop_core::recovery_theory::{recovery_certificate, recovery_errors};
use sop_core::sop_classifier::{
    ce_loss_and_grads, class_balance_reg, consistency_reg, mse_loss_and_grad_v, noise_term, SopClassifierState,
    ToyModel,
};
use sop_core::sop_linear::{objective, DEFAULT_GAMMA};

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {criterion}: {verdict} ({detail})\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn rel_err(numeric: &[f64], analytic: &[f64]) -> f64 {
    let scale = norm2(numeric).max(norm2(analytic));
    if scale == 0.0 {
        0.0
    } else {
        norm2(&sub(numeric, analytic)) / scale
    }
}

#[test]
fn criterion_1_implicit_bias_equivalence() {
    let start = Instant::now();
    let inst = gen_linear_instance(20, 40, 3, 3, &mut SeededRng::new(0)).unwrap();
    let gamma = DEFAULT_GAMMA;
    let on_curve = log_space(0.01, 1.0, 10);
    let alphas: Vec<f64> = on_curve.iter().map(|&l| alpha_from_lambda(gamma, l).unwrap()).collect();
    let mut lambdas = on_curve.clone();
    lambdas.extend(on_curve.iter().map(|l| l / 100.0));
    let grid = implicit_bias_grid(&inst, gamma, &alphas, &lambdas, 1_000_000, 1e-10).unwrap();

    let mut on_fail = Vec::new();
    let mut off_fail = Vec::new();
    for (i, &lambda) in on_curve.iter().enumerate() {
        let (dt, ds) = grid.diffs[i][i];
        if !(dt <= 0.05 && ds <= 0.05) {
            on_fail.push(format!("λ={lambda:.4}: θ {dt:.3}, s {ds:.3}"));
        }
        let (_, ds_off) = grid.diffs[i][on_curve.len() + i];
        if !(ds_off >= 0.2) {
            off_fail.push(format!("λ={lambda:.4}: s {ds_off:.3}"));
        }
    }
    let elapsed = start.elapsed();
    let pass = on_fail.is_empty() && off_fail.is_empty() && elapsed <= Duration::from_secs(300);
    report(
        1,
        pass,
        &format!(
            "on-curve failures {}/10 [{}]; off-curve failures {}/10 [{}]; {:.1}s",
            on_fail.len(),
            on_fail.join("; "),
            off_fail.len(),
            off_fail.join("; "),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass, "on-curve: {on_fail:?}, off-curve: {off_fail:?}");
}

#[test]
fn criterion_2_exact_recovery() {
    let start = Instant::now();
    let (n, p, r, k) = (200, 300, 1, 2);
    let mut used = 0;
    let mut recovered = 0;
    let mut kkt_ok = 0;
    let mut worst: f64 = 0.0;
    let mut seed = 0u64;
    while used < 20 {
        let inst = gen_linear_instance(n, p, r, k, &mut SeededRng::new(seed)).unwrap();
        seed += 1;
        let cert = recovery_certificate(&inst.j, k, Some(&inst.theta_star)).unwrap();
        let (true, Some(_), Some(l0)) = (cert.incoherence_ok, cert.rho_bound, cert.lambda_zero) else {
            continue;
        };
        used += 1;
        let lambda = 1.1 * l0;
        let sol = solve_convex(&inst.j, &inst.y, lambda, 1e-10, 200_000).unwrap();
        let err = recovery_errors(&sol.theta, &sol.s, &inst.theta_star, &inst.s_star).unwrap();
        worst = worst.max(err.eps_theta).max(err.eps_s);
        if err.eps_theta < 1e-3 && err.eps_s < 1e-3 {
            recovered += 1;
        }
        if verify_kkt(&inst.j, &inst.y, lambda, &sol.theta, &sol.s, 1e-6).unwrap().all_pass() {
            kkt_ok += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = recovered == 20 && kkt_ok == 20 && elapsed <= Duration::from_secs(120);
    report(
        2,
        pass,
        &format!(
            "recovered {recovered}/20, KKT {kkt_ok}/20, worst error {worst:.2e}, {seed} seeds drawn, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_phase_transition() {
    let start = Instant::now();
    let cfg = PhaseTransitionConfig::default();
    let table = cmd_phase_transition(&cfg).unwrap();
    let rates = table.f64_column("success_rate").unwrap();
    let m = cfg.ranks.len();
    let at = |ki: usize, ri: usize| rates[ki * m + ri];
    let tolerance = 1.0 / cfg.trials as f64 + 1e-12;
    let mut violations = Vec::new();
    for ki in 0..cfg.ks.len() {
        for ri in 0..m {
            if ki + 1 < cfg.ks.len() && at(ki + 1, ri) > at(ki, ri) + tolerance {
                violations.push(format!("k {}→{} at r={}", cfg.ks[ki], cfg.ks[ki + 1], cfg.ranks[ri]));
            }
            if ri + 1 < m && at(ki, ri + 1) > at(ki, ri) + tolerance {
                violations.push(format!("r {}→{} at k={}", cfg.ranks[ri], cfg.ranks[ri + 1], cfg.ks[ki]));
            }
        }
    }
    let easy = at(0, 0);
    let hard = at(cfg.ks.len() - 1, m - 1);
    let elapsed = start.elapsed();
    let pass = easy >= 0.95 && hard <= 0.05 && violations.is_empty() && elapsed <= Duration::from_secs(1800);
    report(
        3,
        pass,
        &format!(
            "cell (10,10) {easy}, cell (80,80) {hard}, monotonicity violations {:?}, {:.1}s",
            violations,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_strict_saddle_certificate() {
    let start = Instant::now();
    let mut ok = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let inst = gen_linear_instance(20, 40, 3, 3, &mut SeededRng::new(1000 + seed)).unwrap();
        let check = least_squares_check(&inst, 1e-7).unwrap();
        if check.report.classification != Classification::StrictSaddle {
            continue;
        }
        let (Some(got), Some(want)) = (check.report.curvature_value, check.expected_curvature) else {
            continue;
        };
        worst = worst.max((got - want).abs());
        if (got - want).abs() <= 1e-8 {
            ok += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = ok == 50 && elapsed <= Duration::from_secs(60);
    report(
        4,
        pass,
        &format!("{ok}/50 strict saddles, max curvature gap {worst:.1e}, {:.1}s", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

/// Random classifier state with noise variables in `[0.05, 0.15]`.
fn classifier_state(rng: &mut SeededRng) -> (SopClassifierState, NoisyDataset) {
    let ds = gen_classification_dataset(3, 3, 4, 1.0, rng).unwrap();
    let model = ToyModel::new(4, 6, 3, rng).unwrap();
    let draw = |rng: &mut SeededRng| -> Vec<Vec<f64>> {
        (0..ds.len())
            .map(|_| (0..3).map(|_| 0.05 + 0.1 * rng.uniform()).collect())
            .collect()
    };
    let u = draw(rng);
    let v = draw(rng);
    (SopClassifierState { model, u, v }, ds)
}

const FLOOR: f64 = 1e-2;

fn corrected_min(state: &SopClassifierState, ds: &NoisyDataset, i: usize) -> f64 {
    let f = state.model.forward(&ds.inputs[i]);
    let s = noise_term(&state.u[i], &state.v[i], ds.noisy_labels[i]);
    f.iter().zip(&s).map(|(a, b)| a + b).fold(f64::INFINITY, f64::min)
}

/// Central differences of `loss` over each coordinate of `x`.
fn numeric_grad(x: &[f64], step: f64, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|c| {
            work[c] = x[c] + step;
            let plus = loss(&work);
            work[c] = x[c] - step;
            let minus = loss(&work);
            work[c] = x[c];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

#[test]
fn criterion_5_gradient_suite() {
    let start = Instant::now();
    let mut rng = SeededRng::new(55);
    let mut worst = [0.0f64; 7];
    for _ in 0..20 {
        let (n, p) = (6, 9);
        let j = rng.normal_matrix(n, p);
        let y = rng.normal_vec(n);
        let theta = rng.normal_vec(p);
        let u = rng.normal_vec(n);
        let v = rng.normal_vec(n);
        let g = full_gradient(&j, &theta, &u, &v, &y).unwrap();
        let mut packed = theta.clone();
        packed.extend(&u);
        packed.extend(&v);
        let analytic: Vec<f64> = g.theta.iter().chain(&g.u).chain(&g.v).copied().collect();
        let h = |x: &[f64]| objective(&j, &x[..p], &x[p..p + n], &x[p + n..], &y).unwrap();
        worst[0] = worst[0].max(rel_err(&numeric_grad(&packed, 1e-6, h), &analytic));

        let (dt, du, dv) = (rng.normal_vec(p), rng.normal_vec(n), rng.normal_vec(n));
        let q = hessian_quadratic_form(&j, &theta, &u, &v, &y, &dt, &du, &dv).unwrap();
        let dir: Vec<f64> = dt.iter().chain(&du).chain(&dv).copied().collect();
        let eps = 1e-4;
        let shifted = |t: f64| -> Vec<f64> { packed.iter().zip(&dir).map(|(a, b)| a + t * b).collect() };
        let second = (h(&shifted(eps)) - 2.0 * h(&packed) + h(&shifted(-eps))) / (eps * eps);
        worst[1] = worst[1].max((second - q).abs() / q.abs().max(second.abs()));

        let (mut state, ds) = classifier_state(&mut rng);
        let batch: Vec<usize> = (0..ds.len()).collect();
        let ce = ce_loss_and_grads(&state, &ds, &batch, FLOOR).unwrap();
        let base_params = state.model.params().to_vec();
        let num_theta = numeric_grad(&base_params, 1e-6, |x| {
            let mut s = state.clone();
            s.model.params_mut().copy_from_slice(x);
            ce_loss_and_grads(&s, &ds, &batch, FLOOR).unwrap().loss
        });
        worst[2] = worst[2].max(rel_err(&num_theta, &ce.theta));

        let i = rng.below(ds.len());
        let ui = state.u[i].clone();
        let num_u = numeric_grad(&ui, 1e-6, |x| {
            let mut s = state.clone();
            s.u[i].copy_from_slice(x);
            ce_loss_and_grads(&s, &ds, &batch, FLOOR).unwrap().loss
        });
        worst[3] = worst[3].max(rel_err(&num_u, &ce.u[i]));

        let (_, mse_v) = mse_loss_and_grad_v(&state, &ds, &batch, false).unwrap();
        let vi = state.v[i].clone();
        let num_v = numeric_grad(&vi, 1e-6, |x| {
            let mut s = state.clone();
            s.v[i].copy_from_slice(x);
            mse_loss_and_grad_v(&s, &ds, &batch, false).unwrap().0
        });
        worst[4] = worst[4].max(rel_err(&num_v, &mse_v[i]));

        let xs: Vec<&[f64]> = ds.inputs.iter().map(Vec::as_slice).collect();
        let aug: Vec<Vec<f64>> = ds
            .inputs
            .iter()
            .map(|x| x.iter().map(|a| a + 0.3 * rng.normal()).collect())
            .collect();
        let (_, gc) = consistency_reg(&state.model, &xs, &aug).unwrap();
        let num_c = numeric_grad(&base_params, 1e-6, |x| {
            let m = ToyModel::from_params(4, 6, 3, x.to_vec()).unwrap();
            consistency_reg(&m, &xs, &aug).unwrap().0
        });
        worst[5] = worst[5].max(rel_err(&num_c, &gc));

        let prior = [0.2, 0.3, 0.5];
        let (_, gb) = class_balance_reg(&state.model, &xs, &prior).unwrap();
        let num_b = numeric_grad(&base_params, 1e-6, |x| {
            let m = ToyModel::from_params(4, 6, 3, x.to_vec()).unwrap();
            class_balance_reg(&m, &xs, &prior).unwrap().0
        });
        worst[6] = worst[6].max(rel_err(&num_b, &gb));
        state.model.params_mut().copy_from_slice(&base_params);
    }
    let limits = [1e-6, 1e-4, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5];
    let names = ["linear", "hessian", "ce_theta", "ce_u", "mse_v", "consistency", "balance"];
    let elapsed = start.elapsed();
    let pass = worst.iter().zip(&limits).all(|(w, l)| w <= l) && elapsed <= Duration::from_secs(120);
    let detail: Vec<String> = names
        .iter()
        .zip(&worst)
        .zip(&limits)
        .map(|((n, w), l)| format!("{n} {w:.1e}≤{l:.0e}"))
        .collect();
    report(5, pass, &format!("{}; {:.1}s", detail.join(", "), elapsed.as_secs_f64()));
    assert!(pass, "{detail:?}");
}

#[test]
fn criterion_6_overfit_prevention() {
    let start = Instant::now();
    let cfg = ClassifyConfig::default();
    let out = cmd_classify(&cfg).unwrap();
    let (sop, ce) = (&out.sop, &out.baseline);
    let target = 1.0 - cfg.noise_rate * (cfg.classes - 1) as f64 / cfg.classes as f64;
    let elapsed = start.elapsed();
    let checks = [
        ce.final_train_acc_noisy >= 0.95,
        (sop.final_train_acc_noisy - target).abs() <= 0.05,
        sop.final_test_acc >= ce.final_test_acc + 0.10,
        sop.noise_precision >= 0.8,
        sop.noise_recall >= 0.8,
        elapsed <= Duration::from_secs(300),
    ];
    let pass = checks.iter().all(|&c| c);
    report(
        6,
        pass,
        &format!(
            "CE noisy-train {:.3}, SOP noisy-train {:.3} (target {target:.2}), test SOP {:.3} vs CE {:.3}, \
             precision {:.3}, recall {:.3}, {:.1}s",
            ce.final_train_acc_noisy,
            sop.final_train_acc_noisy,
            sop.final_test_acc,
            ce.final_test_acc,
            sop.noise_precision,
            sop.noise_recall,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass, "{checks:?}");
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_sop")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn read_all(paths: &[&Path]) -> Vec<Vec<u8>> {
    paths.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn criterion_7_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let stdout_runs: Vec<(&str, Vec<&str>)> = vec![
        ("gen-instance --dataset", vec!["gen-instance", "--dataset", "--samples-per-class", "10", "--seed", "4"]),
        ("gd", vec!["gd", "--seed", "2", "--lambda", "0.3", "--max-iters", "20000"]),
        ("convex", vec!["convex", "--seed", "2", "--lambda", "0.3"]),
        ("implicit-bias", vec!["implicit-bias", "--grid", "3", "--max-iters", "20000", "--seed", "1"]),
        (
            "lambda-sweep",
            vec![
                "lambda-sweep", "--n", "30", "--p", "45", "--sparsity", "2,6", "--rank", "2,6", "--fixed-rank", "4",
                "--fixed-sparsity", "4", "--grid", "3", "--trials", "2",
            ],
        ),
        (
            "phase-transition",
            vec!["phase-transition", "--n", "30", "--p", "45", "--sparsity", "2,8", "--rank", "2,8", "--trials", "3"],
        ),
        ("landscape-check", vec!["landscape-check", "--trials", "4", "--seed", "9"]),
    ];
    let mut failures = Vec::new();
    for (name, args) in &stdout_runs {
        let a = run_cli(args);
        let b = run_cli(args);
        if a != b || a.1.is_empty() || !(a.0 == 0 || a.0 == 3) {
            failures.push(name.to_string());
        }
    }

    let base = dir.path().join("inst");
    let base_s = base.to_str().unwrap();
    let files = sop_core::csv_io::instance_paths(&base);
    let refs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
    run_cli(&["gen-instance", "--out", base_s, "--seed", "8"]);
    let first = read_all(&refs);
    run_cli(&["gen-instance", "--out", base_s, "--seed", "8"]);
    if read_all(&refs) != first {
        failures.push("gen-instance".into());
    }

    let summary = dir.path().join("cls.csv");
    let summary_s = summary.to_str().unwrap();
    let cls_files = [summary.clone(), dir.path().join("cls.sop_history.csv"), dir.path().join("cls.ce_history.csv")];
    let cls_refs: Vec<&Path> = cls_files.iter().map(|p| p.as_path()).collect();
    let cls_args = [
        "classify", "--epochs", "3", "--samples-per-class", "30", "--hidden", "16", "--lambda-c", "0.5", "--lambda-b",
        "0.1", "--out", summary_s,
    ];
    run_cli(&cls_args);
    let first = read_all(&cls_refs);
    run_cli(&cls_args);
    if read_all(&cls_refs) != first || first.iter().any(|f| f.is_empty()) {
        failures.push("classify".into());
    }

    let pass = failures.is_empty();
    report(7, pass, &format!("9 command runs compared byte-for-byte, differing: {failures:?}"));
    assert!(pass);
}

#[test]
fn criterion_8_closed_form_spot_checks() {
    let mut rng = SeededRng::new(88);
    let mut ce_rel: f64 = 0.0;
    let mut ce_rel_negated: f64 = 0.0;
    let mut mse_rel: f64 = 0.0;
    let mut mse_rel_negated: f64 = 0.0;
    let mut states = 0;
    while states < 20 {
        let (state, ds) = classifier_state(&mut rng);
        let i = rng.below(ds.len());
        if corrected_min(&state, &ds, i) <= 2.0 * FLOOR {
            continue;
        }
        states += 1;
        let label = ds.noisy_labels[i];
        let f = state.model.forward(&ds.inputs[i]);
        let s = noise_term(&state.u[i], &state.v[i], label);
        let total: f64 = f.iter().zip(&s).map(|(a, b)| a + b).sum();
        let off = |c: usize| if c == label { 0.0 } else { 1.0 };
        let v = &state.v[i];
        let ce_formula: Vec<f64> = (0..3).map(|c| 2.0 * v[c] * off(c) / total).collect();
        let mse_formula: Vec<f64> = (0..3)
            .map(|c| {
                let y = 1.0 - off(c);
                4.0 * (f[c] + s[c] - y) * v[c] * off(c)
            })
            .collect();
        let with_v = |x: &[f64]| {
            let mut st = state.clone();
            st.v[i].copy_from_slice(x);
            st
        };
        let num_ce = numeric_grad(v, 1e-7, |x| ce_loss_and_grads(&with_v(x), &ds, &[i], FLOOR).unwrap().loss);
        let num_mse = numeric_grad(v, 1e-7, |x| mse_loss_and_grad_v(&with_v(x), &ds, &[i], false).unwrap().0);
        let neg = |g: &[f64]| g.iter().map(|x| -x).collect::<Vec<_>>();
        ce_rel = ce_rel.max(rel_err(&num_ce, &ce_formula));
        ce_rel_negated = ce_rel_negated.max(rel_err(&num_ce, &neg(&ce_formula)));
        mse_rel = mse_rel.max(rel_err(&num_mse, &mse_formula));
        mse_rel_negated = mse_rel_negated.max(rel_err(&num_mse, &neg(&mse_formula)));
    }

    let j = DenseMatrix::identity(3).scale(2.0);
    let l0 = lambda_zero(&j, &[1.0, 0.0, 0.0], 1.0 / 3.0).unwrap();
    // ρ = 1/3 is not representable, so "exact" means within a few ulps of 2.
    let lambda_ok = (l0 - 2.0).abs() <= 4.0 * f64::EPSILON;

    let pass = ce_rel <= 1e-6 && mse_rel <= 1e-6 && lambda_ok;
    report(
        8,
        pass,
        &format!(
            "CE v-gradient formula rel err {ce_rel:.1e} (negated formula {ce_rel_negated:.1e}); \
             MSE v-gradient formula rel err {mse_rel:.1e} (negated formula {mse_rel_negated:.1e}); \
             λ₀(2I, e₁, ρ=1/3) = {l0}"
        ),
    );
    assert!(pass);
}
