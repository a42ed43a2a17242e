//! Explicitly regularized convex counterpart of the over-parameterized
//! objective: `min ½‖θ‖² + λ‖s‖₁  s.t.  y = Jθ + s`.
//!
//! Solved by ADMM on the reduced variables `c = ΣVᵀθ`, so that `Jθ = Uc` and
//! `‖θ‖ = ‖Σ⁻¹c‖`; the θ-update becomes a diagonal solve.

use crate::error::{check_len, Error, Result};
use crate::numerics::{norm2, norm_inf, svd_compact, CompactSvd, DenseMatrix, DEFAULT_RANK_TOLERANCE};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 100_000;
const RHO_ADAPT_INTERVAL: usize = 50;
const MAX_RHO_CHANGES: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvexStatus {
    Optimal,
    MaxIters,
    /// Kept for interface completeness: with `s` unconstrained every `y` is
    /// reachable, so the solver never reports it.
    Infeasible,
}

impl ConvexStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ConvexStatus::Optimal => "optimal",
            ConvexStatus::MaxIters => "max_iters",
            ConvexStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvexSolution {
    pub theta: Vec<f64>,
    pub s: Vec<f64>,
    pub lambda: f64,
    /// Dual certificate: `θ = Jᵀν`, `ν ∈ λ·sign(s)`.
    pub nu: Vec<f64>,
    /// `‖y − Jθ − s‖_∞`.
    pub feasibility_residual: f64,
    /// Max violation of stationarity and of the subdifferential condition by `nu`.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: ConvexStatus,
}

impl ConvexSolution {
    pub fn objective(&self) -> f64 {
        convex_objective(&self.theta, &self.s, self.lambda)
    }
}

/// `½‖θ‖² + λ‖s‖₁`.
pub fn convex_objective(theta: &[f64], s: &[f64], lambda: f64) -> f64 {
    0.5 * norm2(theta).powi(2) + lambda * s.iter().map(|x| x.abs()).sum::<f64>()
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Largest violation of `ν ∈ λ·sign(s)`; entries with `|sᵢ| ≤ zero_tol` count as zero.
fn subdifferential_violation(nu: &[f64], s: &[f64], lambda: f64, zero_tol: f64) -> f64 {
    nu.iter()
        .zip(s)
        .map(|(&n, &si)| {
            if si.abs() > zero_tol {
                (n - lambda * si.signum()).abs()
            } else {
                (n.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Solves the convex program with residual-balanced ADMM.
pub fn solve_convex(
    j: &DenseMatrix,
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<ConvexSolution> {
    let svd = svd_compact(j, DEFAULT_RANK_TOLERANCE)?;
    solve_convex_with(j, &svd, y, lambda, tol, max_iters)
}

/// [`solve_convex`] reusing a precomputed SVD of `J`.
pub fn solve_convex_with(
    j: &DenseMatrix,
    svd: &CompactSvd,
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<ConvexSolution> {
    check_len("y", y.len(), j.rows())?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    if let Some(i) = y.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let n = y.len();
    let r = svd.rank();

    if r == 0 {
        // Constraint forces s = y and θ = 0.
        let nu: Vec<f64> = y.iter().map(|&yi| lambda * signum0(yi)).collect();
        return Ok(ConvexSolution {
            theta: vec![0.0; j.cols()],
            s: y.to_vec(),
            lambda,
            nu,
            feasibility_residual: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
            status: ConvexStatus::Optimal,
        });
    }

    let mut rho = 1.0;
    let mut c = vec![0.0; r];
    let mut s = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut iterations = 0;
    let mut status = ConvexStatus::MaxIters;
    let mut rho_changes = 0;
    while iterations < max_iters {
        iterations += 1;
        for i in 0..n {
            rhs[i] = y[i] - s[i] - w[i];
        }
        let proj = svd.u_t(&rhs);
        for k in 0..r {
            let inv_sq = 1.0 / (svd.sigma[k] * svd.sigma[k]);
            c[k] = rho * proj[k] / (inv_sq + rho);
        }
        let uc = svd.u.matvec(&c);
        let mut ds = vec![0.0; n];
        let mut primal = vec![0.0; n];
        for i in 0..n {
            let s_new = soft_threshold(y[i] - uc[i] - w[i], lambda / rho);
            ds[i] = s_new - s[i];
            s[i] = s_new;
            primal[i] = uc[i] + s[i] - y[i];
            w[i] += primal[i];
        }
        let dual: Vec<f64> = svd.u_t(&ds).into_iter().map(|x| rho * x).collect();
        let p_res = norm_inf(&primal);
        let d_res = norm_inf(&dual);
        if p_res.max(d_res) <= tol {
            status = ConvexStatus::Optimal;
            break;
        }
        // Bounded number of penalty changes: ADMM at fixed ρ always converges.
        if iterations % RHO_ADAPT_INTERVAL != 0 || rho_changes >= MAX_RHO_CHANGES {
            continue;
        }
        if p_res > 10.0 * d_res {
            rho *= 2.0;
            w.iter_mut().for_each(|x| *x *= 0.5);
            rho_changes += 1;
        } else if d_res > 10.0 * p_res {
            rho *= 0.5;
            w.iter_mut().for_each(|x| *x *= 2.0);
            rho_changes += 1;
        }
    }

    let theta = svd
        .v
        .matvec(&c.iter().zip(&svd.sigma).map(|(ck, sk)| ck / sk).collect::<Vec<_>>());
    let nu: Vec<f64> = w.iter().map(|x| -rho * x).collect();
    let jt = j.matvec(&theta);
    let feasibility_residual = (0..n)
        .map(|i| (y[i] - jt[i] - s[i]).abs())
        .fold(0.0, f64::max);
    let stationarity = norm_inf(&crate::numerics::sub(&theta, &j.matvec_t(&nu)));
    let kkt_residual = stationarity.max(subdifferential_violation(&nu, &s, lambda, 0.0));
    Ok(ConvexSolution {
        theta,
        s,
        lambda,
        nu,
        feasibility_residual,
        kkt_residual,
        iterations,
        status,
    })
}

fn signum0(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum()
    }
}

/// Outcome of [`verify_kkt`].
#[derive(Clone, Debug)]
pub struct KktReport {
    pub feasible: bool,
    pub stationarity: bool,
    pub dual_in_subdifferential: bool,
    /// Certificate found: range-of-U part fixed by θ, orthogonal part searched.
    pub nu: Vec<f64>,
    /// `UΣ⁻¹Vᵀθ`, the least-squares solution of `θ = Jᵀν`.
    pub nu_range: Vec<f64>,
    /// Whether `nu_range` alone satisfies the subdifferential condition.
    pub range_part_in_subdifferential: bool,
}

impl KktReport {
    pub fn all_pass(&self) -> bool {
        self.feasible && self.stationarity && self.dual_in_subdifferential
    }
}

const CERTIFICATE_SWEEPS: usize = 20_000;

/// Checks feasibility, `θ = Jᵀν` and `ν ∈ λ·sign(s)` for a candidate `(θ, s)`.
///
/// `θ = Jᵀν` pins only `Uᵀν`. When `J` has fewer than `N` independent
/// columns, the remaining component of `ν` is found by alternating
/// projections between the affine set `{Uᵀν = Σ⁻¹Vᵀθ, ν_S = λ·sign(s_S)}` and
/// the box `|ν| ≤ λ`. Entries with `|sᵢ| ≤ tol` are treated as zero.
pub fn verify_kkt(
    j: &DenseMatrix,
    y: &[f64],
    lambda: f64,
    theta: &[f64],
    s: &[f64],
    tol: f64,
) -> Result<KktReport> {
    let n = j.rows();
    check_len("y", y.len(), n)?;
    check_len("s", s.len(), n)?;
    check_len("theta", theta.len(), j.cols())?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    let svd = svd_compact(j, DEFAULT_RANK_TOLERANCE)?;
    let jt = j.matvec(theta);
    let feasible = (0..n).all(|i| (y[i] - jt[i] - s[i]).abs() <= tol);

    let nu_range = svd.pinv_t_apply(theta);
    let back = j.matvec_t(&nu_range);
    let stationarity = norm2(&crate::numerics::sub(theta, &back)) <= tol * norm2(theta);
    let range_part_in_subdifferential = subdifferential_violation(&nu_range, s, lambda, tol) <= tol;

    let nu = if range_part_in_subdifferential {
        nu_range.clone()
    } else {
        certificate_search(&svd, theta, s, lambda, tol)?
    };
    let dual_in_subdifferential = subdifferential_violation(&nu, s, lambda, tol) <= tol;
    Ok(KktReport {
        feasible,
        stationarity,
        dual_in_subdifferential,
        nu,
        nu_range,
        range_part_in_subdifferential,
    })
}

fn certificate_search(
    svd: &CompactSvd,
    theta: &[f64],
    s: &[f64],
    lambda: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let n = s.len();
    let r = svd.rank();
    let support: Vec<usize> = (0..n).filter(|&i| s[i].abs() > tol).collect();
    // Affine constraints M ν = d with M = [Uᵀ; E_Sᵀ].
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(r + support.len());
    let mut d = Vec::with_capacity(r + support.len());
    let target = svd.v_t(theta);
    for k in 0..r {
        rows.push(svd.u.column(k));
        d.push(target[k] / svd.sigma[k]);
    }
    for &i in &support {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        rows.push(e);
        d.push(lambda * s[i].signum());
    }
    if rows.is_empty() {
        return Ok(vec![0.0; n]);
    }
    let m = DenseMatrix::from_rows(&rows)?;
    let msvd = svd_compact(&m, DEFAULT_RANK_TOLERANCE)?;
    let project_affine = |nu: &[f64]| -> Vec<f64> {
        let mnu = m.matvec(nu);
        let gap: Vec<f64> = mnu.iter().zip(&d).map(|(a, b)| a - b).collect();
        let corr = msvd.pinv_apply(&gap);
        nu.iter().zip(&corr).map(|(a, b)| a - b).collect()
    };
    let mut nu = msvd.pinv_apply(&d);
    for _ in 0..CERTIFICATE_SWEEPS {
        if subdifferential_violation(&nu, s, lambda, tol) <= 0.1 * tol {
            break;
        }
        let boxed: Vec<f64> = nu.iter().map(|x| x.clamp(-lambda, lambda)).collect();
        nu = project_affine(&boxed);
    }
    Ok(nu)
}

/// Recovery threshold `2(1+ρ)/(1−ρ)·‖UΣ⁻¹Vᵀθ⋆‖_∞`.
pub fn lambda_zero(j: &DenseMatrix, theta_star: &[f64], rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho = {rho} outside (0, 1)")));
    }
    check_len("theta_star", theta_star.len(), j.cols())?;
    let svd = svd_compact(j, DEFAULT_RANK_TOLERANCE)?;
    Ok(lambda_zero_with(&svd, theta_star, rho))
}

pub(crate) fn lambda_zero_with(svd: &CompactSvd, theta_star: &[f64], rho: f64) -> f64 {
    2.0 * (1.0 + rho) / (1.0 - rho) * norm_inf(&svd.pinv_t_apply(theta_star))
}

/// Learning-rate ratio with the same implicit bias as penalty `λ`: `−ln γ / (2λ)`.
pub fn alpha_from_lambda(gamma: f64, lambda: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} outside (0, 1)")));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    Ok(-gamma.ln() / (2.0 * lambda))
}

/// Inverse of [`alpha_from_lambda`].
pub fn lambda_from_alpha(gamma: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter("alpha must be positive".into()));
    }
    alpha_from_lambda(gamma, alpha)
}
