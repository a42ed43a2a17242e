//! Compact SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! The column-orthogonalisation variant is used on whichever of `A` or `Aᵀ`
//! is tall, so the rotated vectors are always the longer dimension. Singular
//! values at or below `rank_tolerance · σ_max` are dropped, which yields the
//! compact factorisation `A = U Σ Vᵀ` with `r` = numerical rank.

use super::matrix::{axpy, dot, norm2, DenseMatrix};
use crate::error::{check_len, Error, Result};

pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;
pub const MAX_JACOBI_SWEEPS: usize = 80;

#[derive(Clone, Debug)]
pub struct CompactSvd {
    /// N×r, orthonormal columns.
    pub u: DenseMatrix,
    /// r singular values, non-increasing.
    pub sigma: Vec<f64>,
    /// p×r, orthonormal columns.
    pub v: DenseMatrix,
    pub rank_tolerance: f64,
}

impl CompactSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn source_rows(&self) -> usize {
        self.u.rows()
    }

    pub fn source_cols(&self) -> usize {
        self.v.rows()
    }

    /// `U Σ Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let (n, p) = (self.source_rows(), self.source_cols());
        let mut a = DenseMatrix::zeros(n, p);
        for k in 0..self.rank() {
            for i in 0..n {
                let c = self.u[(i, k)] * self.sigma[k];
                if c == 0.0 {
                    continue;
                }
                for j in 0..p {
                    a[(i, j)] += c * self.v[(j, k)];
                }
            }
        }
        a
    }

    /// `Uᵀ b`.
    pub fn u_t(&self, b: &[f64]) -> Vec<f64> {
        self.u.matvec_t(b)
    }

    /// `Vᵀ x`.
    pub fn v_t(&self, x: &[f64]) -> Vec<f64> {
        self.v.matvec_t(x)
    }

    /// `V Σ⁻¹ Uᵀ b` without any range check (least-squares minimum-norm solution).
    pub fn pinv_apply(&self, b: &[f64]) -> Vec<f64> {
        let mut c = self.u_t(b);
        for (ck, sk) in c.iter_mut().zip(&self.sigma) {
            *ck /= sk;
        }
        self.v.matvec(&c)
    }

    /// `U Σ⁻¹ Vᵀ x` (the pseudo-inverse of `Jᵀ`).
    pub fn pinv_t_apply(&self, x: &[f64]) -> Vec<f64> {
        let mut c = self.v_t(x);
        for (ck, sk) in c.iter_mut().zip(&self.sigma) {
            *ck /= sk;
        }
        self.u.matvec(&c)
    }

    /// `U Uᵀ b`.
    pub fn column_space_project(&self, b: &[f64]) -> Vec<f64> {
        self.u.matvec(&self.u_t(b))
    }
}

/// Compact SVD of `a` with relative rank cutoff `rank_tolerance`.
pub fn svd_compact(a: &DenseMatrix, rank_tolerance: f64) -> Result<CompactSvd> {
    if a.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if !(rank_tolerance > 0.0 && rank_tolerance < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rank_tolerance must lie in (0, 1), got {rank_tolerance}"
        )));
    }
    let (m, n) = a.shape();
    let tall = m >= n;
    // Columns of the tall operand: columns of A if tall, else columns of Aᵀ (= rows of A).
    let count = if tall { n } else { m };
    let mut w: Vec<Vec<f64>> = if tall {
        (0..n).map(|j| a.column(j)).collect()
    } else {
        (0..m).map(|i| a.row(i).to_vec()).collect()
    };
    let mut q: Vec<Vec<f64>> = (0..count)
        .map(|j| {
            let mut e = vec![0.0; count];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut norms: Vec<f64> = w.iter().map(|c| dot(c, c)).collect();
    let eps = f64::EPSILON;
    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for i in 0..count {
            for j in (i + 1)..count {
                let alpha = norms[i];
                let beta = norms[j];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&w[i], &w[j]);
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, i, j, c, s);
                rotate(&mut q, i, j, c, s);
                norms[i] = dot(&w[i], &w[i]);
                norms[j] = dot(&w[j], &w[j]);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: MAX_JACOBI_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..count).collect();
    let sig: Vec<f64> = w.iter().map(|c| norm2(c)).collect();
    order.sort_by(|&x, &y| sig[y].total_cmp(&sig[x]).then(x.cmp(&y)));
    let smax = sig[order[0]];
    let kept: Vec<usize> = if smax == 0.0 {
        Vec::new()
    } else {
        order
            .into_iter()
            .filter(|&k| sig[k] > rank_tolerance * smax)
            .collect()
    };

    let sigma: Vec<f64> = kept.iter().map(|&k| sig[k]).collect();
    let left: Vec<Vec<f64>> = kept
        .iter()
        .map(|&k| w[k].iter().map(|x| x / sig[k]).collect())
        .collect();
    let right: Vec<Vec<f64>> = kept.iter().map(|&k| q[k].clone()).collect();
    let (u_cols, v_cols) = if tall { (left, right) } else { (right, left) };
    Ok(CompactSvd {
        u: DenseMatrix::from_columns(m, &u_cols),
        sigma,
        v: DenseMatrix::from_columns(n, &v_cols),
        rank_tolerance,
    })
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (a, b) = (&mut lo[i], &mut hi[0]);
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let xi = *x;
        let yj = *y;
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Minimum ℓ2-norm solution of `J θ = b`, failing if `b` is not in range(J).
pub fn min_norm_solve(j: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let svd = svd_compact(j, DEFAULT_RANK_TOLERANCE)?;
    min_norm_solve_with(&svd, b)
}

/// As [`min_norm_solve`], reusing a precomputed factorisation.
pub fn min_norm_solve_with(svd: &CompactSvd, b: &[f64]) -> Result<Vec<f64>> {
    check_len("right-hand side", b.len(), svd.source_rows())?;
    let mut off_range = b.to_vec();
    axpy(-1.0, &svd.column_space_project(b), &mut off_range);
    let residual = norm2(&off_range);
    if residual > 1e-8 * norm2(b) {
        return Err(Error::RangeViolation { residual });
    }
    Ok(svd.pinv_apply(b))
}

/// `V Vᵀ x`: orthogonal projection onto the row space of the source matrix.
pub fn row_space_projector_apply(svd: &CompactSvd, x: &[f64]) -> Result<Vec<f64>> {
    check_len("projector operand", x.len(), svd.source_cols())?;
    Ok(svd.v.matvec(&svd.v_t(x)))
}
