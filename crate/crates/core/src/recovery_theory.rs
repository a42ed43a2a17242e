//! Checkable identifiability conditions: coherence-based recovery condition,
//! the sufficient null-space-property constant it implies, a sampled lower
//! bound on the actual constant, and recovery-error metrics.
//!
//! The kernel of the annihilator of `range(J)` is `range(U)`, so null-space
//! reasoning runs on `Ua` for `a ∈ ℝʳ` without forming that annihilator.

use crate::convex_oracle::lambda_zero_with;
use crate::error::{check_len, Error, Result};
use crate::instances::coherence_from_svd;
use crate::numerics::{norm2, sub, svd_compact, CompactSvd, DenseMatrix, SeededRng, DEFAULT_RANK_TOLERANCE};

/// Both relative errors below this count as exact recovery.
pub const SUCCESS_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryCertificate {
    pub n: usize,
    pub rank: usize,
    pub k: usize,
    pub mu: f64,
    /// `k²r < N/(4μ)`.
    pub incoherence_ok: bool,
    pub rho_bound: Option<f64>,
    pub nsp_sampled: Option<f64>,
    pub lambda_zero: Option<f64>,
}

/// `k²r < N/(4μ)`, with `μ` the coherence of `J`.
pub fn incoherence_condition(j: &DenseMatrix, k: usize) -> Result<(bool, f64)> {
    let svd = svd_compact(j, DEFAULT_RANK_TOLERANCE)?;
    let mu = coherence_from_svd(&svd)?;
    Ok((incoherence_holds(j.rows(), svd.rank(), mu, k), mu))
}

pub fn incoherence_holds(n: usize, rank: usize, mu: f64, k: usize) -> bool {
    ((k * k * rank) as f64) < n as f64 / (4.0 * mu)
}

/// Smallest `ρ` with `k²r ≤ (N/μ)(ρ/(1+ρ))²`, if it is below 1.
pub fn rho_from_params(n: usize, rank: usize, mu: f64, k: usize) -> Option<f64> {
    let q = k as f64 * (rank as f64 * mu / n as f64).sqrt();
    (q < 0.5).then(|| q / (1.0 - q))
}

/// [`rho_from_params`] for the coherence and rank of `J`; `k ≥ 1`.
pub fn rho_from_lemma3(j: &DenseMatrix, k: usize) -> Result<Option<f64>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let svd = svd_compact(j, DEFAULT_RANK_TOLERANCE)?;
    let mu = coherence_from_svd(&svd)?;
    Ok(rho_from_params(j.rows(), svd.rank(), mu, k))
}

/// Largest observed `‖[Ua]_S‖₁ / ‖[Ua]_{Sᶜ}‖₁` over `trials` uniform directions
/// `a`; a lower bound on the null-space constant for `S`.
pub fn nsp_sampled_estimate(
    j: &DenseMatrix,
    support: &[usize],
    trials: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    let svd = svd_compact(j, DEFAULT_RANK_TOLERANCE)?;
    nsp_sampled_estimate_with(&svd, support, trials, rng)
}

pub fn nsp_sampled_estimate_with(
    svd: &CompactSvd,
    support: &[usize],
    trials: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    let n = svd.source_rows();
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let mut in_support = vec![false; n];
    for &i in support {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        in_support[i] = true;
    }
    if support.is_empty() {
        return Ok(0.0);
    }
    if svd.rank() == 0 {
        return Err(Error::DegenerateSubspace);
    }
    let mut best: Option<f64> = None;
    for _ in 0..trials {
        let a = rng.unit_sphere(svd.rank());
        let x = svd.u.matvec(&a);
        let (mut on, mut off) = (0.0, 0.0);
        for (xi, &s) in x.iter().zip(&in_support) {
            if s {
                on += xi.abs();
            } else {
                off += xi.abs();
            }
        }
        if off > 0.0 {
            let ratio = on / off;
            best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
        }
    }
    best.ok_or(Error::DegenerateSubspace)
}

/// Coherence, rank, condition and (when available) `ρ` and `λ₀` for `J`.
pub fn recovery_certificate(
    j: &DenseMatrix,
    k: usize,
    theta_star: Option<&[f64]>,
) -> Result<RecoveryCertificate> {
    let svd = svd_compact(j, DEFAULT_RANK_TOLERANCE)?;
    let mu = coherence_from_svd(&svd)?;
    let n = j.rows();
    let rank = svd.rank();
    let rho_bound = if k == 0 { None } else { rho_from_params(n, rank, mu, k) };
    let lambda_zero = match (rho_bound, theta_star) {
        (Some(rho), Some(t)) if rho > 0.0 => {
            check_len("theta_star", t.len(), j.cols())?;
            Some(lambda_zero_with(&svd, t, rho))
        }
        _ => None,
    };
    Ok(RecoveryCertificate {
        n,
        rank,
        k,
        mu,
        incoherence_ok: incoherence_holds(n, rank, mu, k),
        rho_bound,
        nsp_sampled: None,
        lambda_zero,
    })
}

/// Relative errors `‖θ − θ⋆‖/‖θ⋆‖` and `‖s − s⋆‖/‖s⋆‖`. A zero-norm truth
/// switches that entry to the absolute error and sets its flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryErrors {
    pub eps_theta: f64,
    pub eps_s: f64,
    pub theta_absolute: bool,
    pub s_absolute: bool,
}

impl RecoveryErrors {
    pub fn success(&self) -> bool {
        self.eps_theta < SUCCESS_THRESHOLD && self.eps_s < SUCCESS_THRESHOLD
    }
}

pub fn recovery_errors(
    theta: &[f64],
    s: &[f64],
    theta_star: &[f64],
    s_star: &[f64],
) -> Result<RecoveryErrors> {
    check_len("theta", theta.len(), theta_star.len())?;
    check_len("s", s.len(), s_star.len())?;
    let rel = |x: &[f64], truth: &[f64]| {
        let d = norm2(&sub(x, truth));
        let t = norm2(truth);
        if t > 0.0 {
            (d / t, false)
        } else {
            (d, true)
        }
    };
    let (eps_theta, theta_absolute) = rel(theta, theta_star);
    let (eps_s, s_absolute) = rel(s, s_star);
    Ok(RecoveryErrors {
        eps_theta,
        eps_s,
        theta_absolute,
        s_absolute,
    })
}
