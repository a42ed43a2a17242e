//! Experiment drivers behind the `sop` binary.
//!
//! Each driver returns [`CsvTable`]s whose bytes depend only on the
//! configuration. Independent runs go through rayon, and the results are
//! collected in input order before any row is written.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::convex_oracle::{alpha_from_lambda, lambda_from_alpha, solve_convex_with, ConvexSolution};
use crate::csv_io::{fmt_f64, CsvTable};
use crate::error::{Error, Result};
use crate::instances::{
    apply_asymmetric_noise, apply_symmetric_noise, gen_classification_dataset, gen_linear_instance, LinearInstance,
    NoisyDataset,
};
use crate::landscape::{classify_critical_point, CriticalPointReport, DEFAULT_CRITICAL_TOL};
use crate::numerics::{norm2, norm_inf, sub, svd_compact, CompactSvd, SeededRng, DEFAULT_RANK_TOLERANCE};
use crate::recovery_theory::{recovery_errors, RecoveryErrors, SUCCESS_THRESHOLD};
use crate::sop_classifier::{
    evaluate_accuracy, noise_detection_metrics, train_sop, MetricsHistory, SopClassifierState, SopHyper,
};
use crate::sop_linear::{run_gd, GdConfig, GdOutcome, DEFAULT_GAMMA};

/// Relative difference `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = norm2(a).max(norm2(b));
    if scale == 0.0 {
        0.0
    } else {
        norm2(&sub(a, b)) / scale
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

/// Seed of trial `t` under base seed `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add(trial as u64)
}

/// Step size for tracking the gradient flow: the stability bound `0.25/σ_max²`,
/// tightened so that one step moves `log u` by at most `0.1` when the
/// residual is of the size of `y`.
pub fn flow_tracking_gd_config(
    inst: &LinearInstance,
    gamma: f64,
    alpha: f64,
    max_iters: usize,
) -> Result<GdConfig> {
    let mut cfg = GdConfig::for_matrix(&inst.j, gamma, alpha)?;
    let y_inf = norm_inf(&inst.y);
    if alpha > 0.0 && y_inf > 0.0 {
        cfg.tau = cfg.tau.min(0.05 / (alpha * y_inf));
    }
    cfg.max_iters = max_iters;
    Ok(cfg)
}

fn check_positive_list(what: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter(format!("{what} must be positive and finite")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImplicitBiasConfig {
    pub n: usize,
    pub p: usize,
    pub rank: usize,
    pub sparsity: usize,
    pub gamma: f64,
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub gd_max_iters: usize,
    pub convex_tol: f64,
}

impl Default for ImplicitBiasConfig {
    fn default() -> Self {
        Self {
            n: 20,
            p: 40,
            rank: 3,
            sparsity: 3,
            gamma: DEFAULT_GAMMA,
            alphas: log_space(4.0, 4000.0, 20),
            lambdas: log_space(1e-4, 1.0, 20),
            trials: 1,
            seed: 0,
            gd_max_iters: 300_000,
            convex_tol: 1e-10,
        }
    }
}

pub const IMPLICIT_BIAS_HEADER: [&str; 9] = [
    "trial",
    "alpha",
    "lambda",
    "lambda_of_alpha",
    "rel_diff_theta",
    "rel_diff_s",
    "gd_status",
    "convex_status",
    "seed",
];

/// GD end points for every `α` and convex solutions for every `λ` on one
/// instance; entry `[a][l]` of the returned grid pairs `alphas[a]` with
/// `lambdas[l]` as `(rel_diff_theta, rel_diff_s)`.
pub struct ImplicitBiasGrid {
    pub gd: Vec<GdOutcome>,
    pub convex: Vec<ConvexSolution>,
    pub diffs: Vec<Vec<(f64, f64)>>,
}

pub fn implicit_bias_grid(
    inst: &LinearInstance,
    gamma: f64,
    alphas: &[f64],
    lambdas: &[f64],
    gd_max_iters: usize,
    convex_tol: f64,
) -> Result<ImplicitBiasGrid> {
    check_positive_list("alphas", alphas)?;
    check_positive_list("lambdas", lambdas)?;
    let svd = svd_compact(&inst.j, DEFAULT_RANK_TOLERANCE)?;
    let gd = alphas
        .par_iter()
        .map(|&alpha| {
            let cfg = flow_tracking_gd_config(inst, gamma, alpha, gd_max_iters)?;
            run_gd(&inst.j, &inst.y, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let convex = lambdas
        .par_iter()
        .map(|&lambda| {
            solve_convex_with(&inst.j, &svd, &inst.y, lambda, convex_tol, crate::convex_oracle::DEFAULT_MAX_ITERS)
        })
        .collect::<Result<Vec<_>>>()?;
    let diffs = gd
        .iter()
        .map(|g| {
            let s = g.state.s();
            convex
                .iter()
                .map(|c| (rel_diff(&g.state.theta, &c.theta), rel_diff(&s, &c.s)))
                .collect()
        })
        .collect();
    Ok(ImplicitBiasGrid { gd, convex, diffs })
}

/// Every `(α, λ)` cell, for each trial instance.
pub fn cmd_implicit_bias(cfg: &ImplicitBiasConfig) -> Result<CsvTable> {
    let mut table = CsvTable::new(&IMPLICIT_BIAS_HEADER);
    for trial in 0..cfg.trials {
        let seed = trial_seed(cfg.seed, trial);
        let inst = gen_linear_instance(cfg.n, cfg.p, cfg.rank, cfg.sparsity, &mut SeededRng::new(seed))?;
        let grid = implicit_bias_grid(&inst, cfg.gamma, &cfg.alphas, &cfg.lambdas, cfg.gd_max_iters, cfg.convex_tol)?;
        for (a, &alpha) in cfg.alphas.iter().enumerate() {
            let lambda_of_alpha = lambda_from_alpha(cfg.gamma, alpha)?;
            for (l, &lambda) in cfg.lambdas.iter().enumerate() {
                let (dt, ds) = grid.diffs[a][l];
                table.push(vec![
                    trial.to_string(),
                    fmt_f64(alpha),
                    fmt_f64(lambda),
                    fmt_f64(lambda_of_alpha),
                    fmt_f64(dt),
                    fmt_f64(ds),
                    grid.gd[a].status.as_str().to_string(),
                    grid.convex[l].status.as_str().to_string(),
                    seed.to_string(),
                ])?;
            }
        }
    }
    Ok(table)
}

/// `λ` values on the curve and the matching learning-rate ratios.
pub fn curve_pairs(gamma: f64, lambdas: &[f64]) -> Result<Vec<(f64, f64)>> {
    lambdas
        .iter()
        .map(|&l| Ok((alpha_from_lambda(gamma, l)?, l)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SweepMode {
    /// Rank fixed, sparsity varies.
    VaryK,
    /// Sparsity fixed, rank varies.
    VaryR,
}

impl SweepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepMode::VaryK => "vary_k",
            SweepMode::VaryR => "vary_r",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSweepConfig {
    pub n: usize,
    pub p: usize,
    pub fixed_rank: usize,
    pub ks: Vec<usize>,
    pub fixed_k: usize,
    pub ranks: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LambdaSweepConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 150,
            fixed_rank: 20,
            ks: vec![10, 20, 40, 60, 80],
            fixed_k: 20,
            ranks: vec![10, 20, 40, 60, 80],
            lambdas: log_space(1e-4, 1.0, 9),
            trials: 10,
            seed: 0,
            tol: crate::convex_oracle::DEFAULT_TOL,
            max_iters: crate::convex_oracle::DEFAULT_MAX_ITERS,
        }
    }
}

pub const LAMBDA_SWEEP_HEADER: [&str; 8] = ["mode", "k", "r", "lambda", "eps_theta_mean", "eps_s_mean", "trials", "seed"];

/// Recovery errors of the convex program at each `λ` on trial instance `seed`.
pub fn recovery_errors_over_lambdas(
    n: usize,
    p: usize,
    r: usize,
    k: usize,
    seed: u64,
    lambdas: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<RecoveryErrors>> {
    let inst = gen_linear_instance(n, p, r, k, &mut SeededRng::new(seed))?;
    let svd: CompactSvd = svd_compact(&inst.j, DEFAULT_RANK_TOLERANCE)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let sol = solve_convex_with(&inst.j, &svd, &inst.y, lambda, tol, max_iters)?;
            recovery_errors(&sol.theta, &sol.s, &inst.theta_star, &inst.s_star)
        })
        .collect()
}

/// Mean relative errors over trials for each setting and `λ`. Trial `t`
/// draws its instance from seed `seed + t`.
pub fn cmd_lambda_sweep(cfg: &LambdaSweepConfig) -> Result<CsvTable> {
    check_positive_list("lambdas", &cfg.lambdas)?;
    let settings: Vec<(SweepMode, usize, usize)> = cfg
        .ks
        .iter()
        .map(|&k| (SweepMode::VaryK, k, cfg.fixed_rank))
        .chain(cfg.ranks.iter().map(|&r| (SweepMode::VaryR, cfg.fixed_k, r)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(s, t)| {
            let (_, k, r) = settings[s];
            recovery_errors_over_lambdas(cfg.n, cfg.p, r, k, trial_seed(cfg.seed, t), &cfg.lambdas, cfg.tol, cfg.max_iters)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = CsvTable::new(&LAMBDA_SWEEP_HEADER);
    if cfg.trials == 0 {
        return Ok(table);
    }
    for (s, &(mode, k, r)) in settings.iter().enumerate() {
        let trials = &results[s * cfg.trials..(s + 1) * cfg.trials];
        for (l, &lambda) in cfg.lambdas.iter().enumerate() {
            let mean = |f: fn(&RecoveryErrors) -> f64| trials.iter().map(|e| f(&e[l])).sum::<f64>() / cfg.trials as f64;
            table.push(vec![
                mode.as_str().to_string(),
                k.to_string(),
                r.to_string(),
                fmt_f64(lambda),
                fmt_f64(mean(|e| e.eps_theta)),
                fmt_f64(mean(|e| e.eps_s)),
                cfg.trials.to_string(),
                cfg.seed.to_string(),
            ])?;
        }
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTransitionConfig {
    pub n: usize,
    pub p: usize,
    pub ks: Vec<usize>,
    pub ranks: Vec<usize>,
    pub lambda: f64,
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PhaseTransitionConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 150,
            ks: vec![10, 20, 40, 60, 80],
            ranks: vec![10, 20, 40, 60, 80],
            lambda: 0.1,
            trials: 20,
            seed: 0,
            tol: crate::convex_oracle::DEFAULT_TOL,
            max_iters: crate::convex_oracle::DEFAULT_MAX_ITERS,
        }
    }
}

pub const PHASE_TRANSITION_HEADER: [&str; 7] =
    ["k", "r", "success_rate_theta", "success_rate_s", "success_rate", "trials", "seed"];

/// Fraction of trials with `eps_θ`, `eps_s` and both below the success
/// threshold, per `(k, r)` cell.
pub fn cmd_phase_transition(cfg: &PhaseTransitionConfig) -> Result<CsvTable> {
    check_positive_list("lambda", &[cfg.lambda])?;
    let cells: Vec<(usize, usize)> = cfg
        .ks
        .iter()
        .flat_map(|&k| cfg.ranks.iter().map(move |&r| (k, r)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(c, t)| {
            let (k, r) = cells[c];
            let e = recovery_errors_over_lambdas(
                cfg.n,
                cfg.p,
                r,
                k,
                trial_seed(cfg.seed, t),
                &[cfg.lambda],
                cfg.tol,
                cfg.max_iters,
            )?;
            Ok(e[0])
        })
        .collect::<Result<Vec<RecoveryErrors>>>()?;
    let mut table = CsvTable::new(&PHASE_TRANSITION_HEADER);
    if cfg.trials == 0 {
        return Ok(table);
    }
    for (c, &(k, r)) in cells.iter().enumerate() {
        let trials = &results[c * cfg.trials..(c + 1) * cfg.trials];
        let rate = |ok: fn(&RecoveryErrors) -> bool| trials.iter().filter(|e| ok(e)).count() as f64 / cfg.trials as f64;
        table.push(vec![
            k.to_string(),
            r.to_string(),
            fmt_f64(rate(|e| e.eps_theta < SUCCESS_THRESHOLD)),
            fmt_f64(rate(|e| e.eps_s < SUCCESS_THRESHOLD)),
            fmt_f64(rate(|e| e.success())),
            cfg.trials.to_string(),
            cfg.seed.to_string(),
        ])?;
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseType {
    Symmetric,
    /// Class `c` is relabeled `(c + 1) mod K`.
    Asymmetric,
}

impl std::str::FromStr for NoiseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NoiseType::Symmetric),
            "asymmetric" => Ok(NoiseType::Asymmetric),
            other => Err(Error::InvalidParameter(format!(
                "noise type must be symmetric or asymmetric, got {other:?}"
            ))),
        }
    }
}

/// φ floor for the cross-entropy baseline. Small enough that the floor never
/// engages, so the baseline minimizes ordinary cross-entropy.
pub const BASELINE_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifyConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise_rate: f64,
    pub noise_type: NoiseType,
    pub hyper: SopHyper,
    pub seed: u64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            train_per_class: 500,
            test_per_class: 250,
            dim: 20,
            separation: 5.0,
            noise_rate: 0.4,
            noise_type: NoiseType::Symmetric,
            hyper: SopHyper::default(),
            seed: 0,
        }
    }
}

/// Noisy training split and clean test split drawn from the same blobs.
pub fn classification_data(cfg: &ClassifyConfig) -> Result<(NoisyDataset, NoisyDataset)> {
    let mut rng = SeededRng::new(cfg.seed);
    let all = gen_classification_dataset(
        cfg.classes,
        cfg.train_per_class + cfg.test_per_class,
        cfg.dim,
        cfg.separation,
        &mut rng,
    )?;
    let (train, test) = all.split(cfg.classes * cfg.train_per_class);
    let train = match cfg.noise_type {
        NoiseType::Symmetric => apply_symmetric_noise(&train, cfg.noise_rate, &mut rng)?,
        NoiseType::Asymmetric => {
            let map: BTreeMap<usize, usize> = (0..cfg.classes).map(|c| (c, (c + 1) % cfg.classes)).collect();
            apply_asymmetric_noise(&train, &map, cfg.noise_rate, &mut rng)?
        }
    };
    Ok((train, test))
}

#[derive(Clone, Debug)]
pub struct MethodSummary {
    pub method: &'static str,
    pub final_test_acc: f64,
    pub final_train_acc_noisy: f64,
    pub noise_precision: f64,
    pub noise_recall: f64,
    /// `ok`, or `diverged@<epoch>`.
    pub status: String,
    pub history: MetricsHistory,
}

pub struct ClassifyOutput {
    pub sop: MethodSummary,
    pub baseline: MethodSummary,
    pub summary: CsvTable,
    pub sop_history: CsvTable,
    pub baseline_history: CsvTable,
}

pub const CLASSIFY_SUMMARY_HEADER: [&str; 7] = [
    "method",
    "final_test_acc",
    "final_train_acc_noisy",
    "noise_precision",
    "noise_recall",
    "status",
    "seed",
];

fn summarize(
    method: &'static str,
    train: &NoisyDataset,
    test: &NoisyDataset,
    result: Result<(SopClassifierState, MetricsHistory)>,
) -> Result<MethodSummary> {
    match result {
        Ok((state, history)) => {
            let (noise_precision, noise_recall) = noise_detection_metrics(&state, train)?;
            Ok(MethodSummary {
                method,
                final_test_acc: evaluate_accuracy(&state.model, &test.inputs, &test.clean_labels),
                final_train_acc_noisy: evaluate_accuracy(&state.model, &train.inputs, &train.noisy_labels),
                noise_precision,
                noise_recall,
                status: "ok".into(),
                history,
            })
        }
        Err(Error::TrainingDiverged { epoch }) => Ok(MethodSummary {
            method,
            final_test_acc: f64::NAN,
            final_train_acc_noisy: f64::NAN,
            noise_precision: f64::NAN,
            noise_recall: f64::NAN,
            status: format!("diverged@{epoch}"),
            history: MetricsHistory::default(),
        }),
        Err(e) => Err(e),
    }
}

/// SOP and its cross-entropy baseline (`α_u = α_v = 0`, no φ floor) on the
/// same data and seed.
pub fn cmd_classify(cfg: &ClassifyConfig) -> Result<ClassifyOutput> {
    let (train, test) = classification_data(cfg)?;
    let hyper = SopHyper {
        seed: cfg.seed,
        ..cfg.hyper.clone()
    };
    let baseline_hyper = SopHyper {
        alpha_u: 0.0,
        alpha_v: 0.0,
        epsilon: BASELINE_EPSILON,
        ..hyper.clone()
    };
    let (sop, baseline) = rayon::join(
        || train_sop(&train, &test, &hyper),
        || train_sop(&train, &test, &baseline_hyper),
    );
    let sop = summarize("sop", &train, &test, sop)?;
    let baseline = summarize("ce", &train, &test, baseline)?;
    let mut summary = CsvTable::new(&CLASSIFY_SUMMARY_HEADER);
    for m in [&sop, &baseline] {
        summary.push(vec![
            m.method.to_string(),
            fmt_f64(m.final_test_acc),
            fmt_f64(m.final_train_acc_noisy),
            fmt_f64(m.noise_precision),
            fmt_f64(m.noise_recall),
            m.status.clone(),
            cfg.seed.to_string(),
        ])?;
    }
    Ok(ClassifyOutput {
        sop_history: crate::csv_io::metrics_table(&sop.history, cfg.seed)?,
        baseline_history: crate::csv_io::metrics_table(&baseline.history, cfg.seed)?,
        sop,
        baseline,
        summary,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeCheckConfig {
    pub n: usize,
    pub p: usize,
    pub rank: usize,
    pub sparsity: usize,
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for LandscapeCheckConfig {
    fn default() -> Self {
        Self {
            n: 20,
            p: 40,
            rank: 3,
            sparsity: 3,
            trials: 1,
            seed: 0,
            tol: DEFAULT_CRITICAL_TOL,
        }
    }
}

pub const LANDSCAPE_HEADER: [&str; 7] = [
    "trial",
    "grad_norm",
    "classification",
    "witness_index",
    "curvature_value",
    "expected_curvature",
    "seed",
];

/// The least-squares critical point: minimum-norm `θ` fitting `y` as well as
/// possible, with `u = v = 0`.
pub struct LeastSquaresCheck {
    pub report: CriticalPointReport,
    /// `−2|rᵢ|` at the witness, from the residual directly.
    pub expected_curvature: Option<f64>,
}

pub fn least_squares_check(inst: &LinearInstance, tol: f64) -> Result<LeastSquaresCheck> {
    let svd = svd_compact(&inst.j, DEFAULT_RANK_TOLERANCE)?;
    let theta = svd.pinv_apply(&inst.y);
    let fitted = inst.j.matvec(&theta);
    let r = sub(&fitted, &inst.y);
    if norm_inf(&r) <= tol {
        return Err(Error::InvalidParameter(
            "y lies in range(J); the least-squares point is a global minimizer".into(),
        ));
    }
    let zeros = vec![0.0; inst.n()];
    let report = classify_critical_point(&inst.j, &theta, &zeros, &zeros, &inst.y, tol)?;
    let expected_curvature = report.witness_index.map(|i| -2.0 * r[i].abs());
    Ok(LeastSquaresCheck {
        report,
        expected_curvature,
    })
}

pub fn cmd_landscape_check(cfg: &LandscapeCheckConfig) -> Result<CsvTable> {
    let checks = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(cfg.seed, t);
            let inst = gen_linear_instance(cfg.n, cfg.p, cfg.rank, cfg.sparsity, &mut SeededRng::new(seed))?;
            least_squares_check(&inst, cfg.tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = CsvTable::new(&LANDSCAPE_HEADER);
    for (t, c) in checks.iter().enumerate() {
        let r = &c.report;
        table.push(vec![
            t.to_string(),
            fmt_f64(r.grad_norm),
            r.classification.as_str().to_string(),
            r.witness_index.map(|i| i.to_string()).unwrap_or_default(),
            r.curvature_value.map(fmt_f64).unwrap_or_default(),
            c.expected_curvature.map(fmt_f64).unwrap_or_default(),
            trial_seed(cfg.seed, t).to_string(),
        ])?;
    }
    Ok(table)
}
