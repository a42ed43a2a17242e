//! First- and second-order structure of the over-parameterized objective:
//! gradients, directional curvature, and a constructive strict-saddle check
//! at critical points.

use crate::error::{check_len, Error, Result};
use crate::numerics::{dot, norm_inf, DenseMatrix};
use crate::sop_linear::residual;

pub const DEFAULT_CRITICAL_TOL: f64 = 1e-7;

/// Gradient blocks `(Jᵀr, 2r⊙u, −2r⊙v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub theta: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Gradient {
    pub fn norm_inf(&self) -> f64 {
        norm_inf(&self.theta)
            .max(norm_inf(&self.u))
            .max(norm_inf(&self.v))
    }
}

pub fn full_gradient(
    j: &DenseMatrix,
    theta: &[f64],
    u: &[f64],
    v: &[f64],
    y: &[f64],
) -> Result<Gradient> {
    let r = residual(j, theta, u, v, y)?;
    Ok(Gradient {
        theta: j.matvec_t(&r),
        u: r.iter().zip(u).map(|(ri, ui)| 2.0 * ri * ui).collect(),
        v: r.iter().zip(v).map(|(ri, vi)| -2.0 * ri * vi).collect(),
    })
}

/// A direction `(d_θ, d_u, d_v)` in parameter space.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub theta: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// `dᵀ∇²h d`, evaluated without forming the Hessian.
#[allow(clippy::too_many_arguments)]
pub fn hessian_quadratic_form(
    j: &DenseMatrix,
    theta: &[f64],
    u: &[f64],
    v: &[f64],
    y: &[f64],
    d_theta: &[f64],
    d_u: &[f64],
    d_v: &[f64],
) -> Result<f64> {
    let r = residual(j, theta, u, v, y)?;
    check_len("d_theta", d_theta.len(), j.cols())?;
    check_len("d_u", d_u.len(), r.len())?;
    check_len("d_v", d_v.len(), r.len())?;
    let jd = j.matvec(d_theta);
    let mut value = dot(&jd, &jd);
    for i in 0..r.len() {
        let a = u[i] * d_u[i];
        let b = v[i] * d_v[i];
        value += 4.0 * a * a + 4.0 * b * b;
        value += 2.0 * r[i] * (d_u[i] * d_u[i] - d_v[i] * d_v[i]);
        value += 4.0 * jd[i] * (a - b);
        value -= 8.0 * a * b;
    }
    Ok(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    GlobalMin,
    StrictSaddle,
    NotCritical,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::GlobalMin => "global_min",
            Classification::StrictSaddle => "strict_saddle",
            Classification::NotCritical => "not_critical",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticalPointReport {
    /// `‖∇h‖_∞` over all three blocks.
    pub grad_norm: f64,
    pub classification: Classification,
    pub witness_index: Option<usize>,
    pub negative_direction: Option<Direction>,
    pub curvature_value: Option<f64>,
}

/// Classifies a point as a global minimizer, a strict saddle (with an explicit
/// negative-curvature direction), or not critical.
///
/// At a critical point with nonzero residual some index has `uᵢ = vᵢ = 0` and
/// `rᵢ ≠ 0`; moving `vᵢ` (if `rᵢ > 0`) or `uᵢ` (if `rᵢ < 0`) along `eᵢ` has
/// curvature `−2|rᵢ|`. The witness is the qualifying index with the largest
/// `|rᵢ|`.
pub fn classify_critical_point(
    j: &DenseMatrix,
    theta: &[f64],
    u: &[f64],
    v: &[f64],
    y: &[f64],
    tol: f64,
) -> Result<CriticalPointReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    let r = residual(j, theta, u, v, y)?;
    let grad = full_gradient(j, theta, u, v, y)?;
    let grad_norm = grad.norm_inf();
    let report = |classification| CriticalPointReport {
        grad_norm,
        classification,
        witness_index: None,
        negative_direction: None,
        curvature_value: None,
    };
    if grad_norm > tol {
        return Ok(report(Classification::NotCritical));
    }
    if norm_inf(&r) <= tol {
        return Ok(report(Classification::GlobalMin));
    }
    let witness = (0..r.len())
        .filter(|&i| u[i].abs().max(v[i].abs()) <= tol && r[i].abs() > tol)
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if r[b].abs() >= r[i].abs() => Some(b),
            _ => Some(i),
        })
        .ok_or(Error::InconsistentCriticalPoint { tol })?;
    let n = r.len();
    let mut d_u = vec![0.0; n];
    let mut d_v = vec![0.0; n];
    if r[witness] > 0.0 {
        d_v[witness] = 1.0;
    } else {
        d_u[witness] = 1.0;
    }
    let d_theta = vec![0.0; j.cols()];
    let curvature = hessian_quadratic_form(j, theta, u, v, y, &d_theta, &d_u, &d_v)?;
    Ok(CriticalPointReport {
        grad_norm,
        classification: Classification::StrictSaddle,
        witness_index: Some(witness),
        negative_direction: Some(Direction {
            theta: d_theta,
            u: d_u,
            v: d_v,
        }),
        curvature_value: Some(curvature),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::gen_linear_instance;
    use crate::numerics::{svd_compact, SeededRng};
    use crate::sop_linear::objective;

    fn random_point(rng: &mut SeededRng, n: usize, p: usize) -> (DenseMatrix, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            rng.normal_matrix(n, p),
            rng.normal_vec(p),
            rng.normal_vec(n),
            rng.normal_vec(n),
            rng.normal_vec(n),
        )
    }

    #[test]
    fn gradient_vanishes_at_zero_residual() {
        let j = DenseMatrix::identity(3);
        let g = full_gradient(&j, &[1.0, 2.0, 3.0], &[0.5; 3], &[0.5; 3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.norm_inf(), 0.0);
    }

    #[test]
    fn zero_u_v_have_zero_gradient() {
        let mut rng = SeededRng::new(1);
        let (j, th, _, _, y) = random_point(&mut rng, 4, 5);
        let g = full_gradient(&j, &th, &[0.0; 4], &[0.0; 4], &y).unwrap();
        assert!(g.u.iter().chain(&g.v).all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = SeededRng::new(2);
        for _ in 0..20 {
            let (j, th, u, v, y) = random_point(&mut rng, 5, 7);
            let g = full_gradient(&j, &th, &u, &v, &y).unwrap();
            let h = 1e-6;
            let fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for k in 0..th.len() {
                numeric.push(fd(&|e| {
                    let mut t = th.clone();
                    t[k] += e;
                    objective(&j, &t, &u, &v, &y).unwrap()
                }));
                analytic.push(g.theta[k]);
            }
            for k in 0..u.len() {
                numeric.push(fd(&|e| {
                    let mut t = u.clone();
                    t[k] += e;
                    objective(&j, &th, &t, &v, &y).unwrap()
                }));
                analytic.push(g.u[k]);
                numeric.push(fd(&|e| {
                    let mut t = v.clone();
                    t[k] += e;
                    objective(&j, &th, &u, &t, &y).unwrap()
                }));
                analytic.push(g.v[k]);
            }
            let err = crate::numerics::norm2(&crate::numerics::sub(&analytic, &numeric));
            assert!(err <= 1e-6 * crate::numerics::norm2(&analytic).max(1.0), "err {err}");
        }
    }

    #[test]
    fn quadratic_form_matches_second_differences() {
        let mut rng = SeededRng::new(3);
        for _ in 0..20 {
            let (j, th, u, v, y) = random_point(&mut rng, 5, 7);
            let (dt, du, dv) = (rng.normal_vec(7), rng.normal_vec(5), rng.normal_vec(5));
            let q = hessian_quadratic_form(&j, &th, &u, &v, &y, &dt, &du, &dv).unwrap();
            let at = |e: f64| {
                let shift = |x: &[f64], d: &[f64]| x.iter().zip(d).map(|(a, b)| a + e * b).collect::<Vec<_>>();
                objective(&j, &shift(&th, &dt), &shift(&u, &du), &shift(&v, &dv), &y).unwrap()
            };
            let eps = 1e-4;
            let fd = (at(eps) - 2.0 * at(0.0) + at(-eps)) / (eps * eps);
            assert!((q - fd).abs() <= 1e-4 * q.abs().max(1.0), "q {q} fd {fd}");
        }
    }

    #[test]
    fn hand_computed_negative_curvature() {
        // θ = 0, u = v = 0, y = e₁ gives r = −e₁.
        let j = DenseMatrix::identity(2);
        let z = [0.0; 2];
        let e1 = [1.0, 0.0];
        let q = hessian_quadratic_form(&j, &z, &z, &z, &e1, &z, &e1, &z).unwrap();
        assert_eq!(q, -2.0);
        // y = −e₁ gives r = e₁; move v.
        let q = hessian_quadratic_form(&j, &z, &z, &z, &[-1.0, 0.0], &z, &z, &e1).unwrap();
        assert_eq!(q, -2.0);
    }

    #[test]
    fn exact_solution_is_global_min() {
        let inst = gen_linear_instance(10, 15, 2, 0, &mut SeededRng::new(4)).unwrap();
        let rep =
            classify_critical_point(&inst.j, &inst.theta_star, &[0.0; 10], &[0.0; 10], &inst.y, 1e-7).unwrap();
        assert_eq!(rep.classification, Classification::GlobalMin);
    }

    #[test]
    fn least_squares_point_is_strict_saddle() {
        let mut rng = SeededRng::new(5);
        let j = rng.normal_matrix(8, 3);
        let y = rng.normal_vec(8);
        let svd = svd_compact(&j, 1e-10).unwrap();
        let theta = svd.pinv_apply(&y);
        let z = [0.0; 8];
        let rep = classify_critical_point(&j, &theta, &z, &z, &y, 1e-7).unwrap();
        assert_eq!(rep.classification, Classification::StrictSaddle);
        let r = residual(&j, &theta, &z, &z, &y).unwrap();
        let i = rep.witness_index.unwrap();
        assert_eq!(r[i].abs(), norm_inf(&r));
        assert!((rep.curvature_value.unwrap() + 2.0 * norm_inf(&r)).abs() <= 1e-12);
    }

    #[test]
    fn large_gradient_is_not_critical() {
        let j = DenseMatrix::identity(2);
        let rep = classify_critical_point(&j, &[0.0; 2], &[1.0; 2], &[0.0; 2], &[5.0, 5.0], 1e-7).unwrap();
        assert_eq!(rep.classification, Classification::NotCritical);
        assert!(rep.witness_index.is_none());
    }

    #[test]
    fn inconsistent_point_is_an_error() {
        // |2·r·u| = 8e-4 passes the criticality tolerance, yet u exceeds it,
        // so no index can serve as witness.
        let j = DenseMatrix::zeros(1, 1);
        let e = classify_critical_point(&j, &[0.0], &[2e-3], &[0.0], &[0.2], 1e-3);
        assert!(matches!(e, Err(Error::InconsistentCriticalPoint { .. })), "{e:?}");
    }

    #[test]
    fn ties_pick_lowest_index() {
        let j = DenseMatrix::zeros(3, 1);
        let y = [1.0, -1.0, 1.0];
        let z = [0.0; 3];
        let rep = classify_critical_point(&j, &[0.0], &z, &z, &y, 1e-7).unwrap();
        assert_eq!(rep.witness_index, Some(0));
    }
}
