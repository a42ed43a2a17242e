//! Synthetic problem generators: corrupted low-rank linear systems and
//! Gaussian-blob classification data with label noise.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{
    min_norm_solve_with, norm2, svd_compact, DenseMatrix, SeededRng, DEFAULT_RANK_TOLERANCE,
};

/// `y = J θ⋆ + s⋆` with `J` of rank `r`, `s⋆` k-sparse and `θ⋆` minimum-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearInstance {
    pub j: DenseMatrix,
    pub theta_star: Vec<f64>,
    pub s_star: Vec<f64>,
    pub y: Vec<f64>,
    pub rank: usize,
    pub sparsity: usize,
    pub seed: u64,
}

impl LinearInstance {
    pub fn n(&self) -> usize {
        self.j.rows()
    }

    pub fn p(&self) -> usize {
        self.j.cols()
    }

    pub fn support(&self) -> Vec<usize> {
        support_of(&self.s_star)
    }
}

pub(crate) fn support_of(s: &[f64]) -> Vec<usize> {
    s.iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Draws `J = G₁G₂` (Gaussian factors of inner size `r`), a k-sparse Gaussian
/// `s⋆` on a uniformly random support, `θ̃ ~ N(0, I)`, `y = Jθ̃ + s⋆`, and then
/// replaces `θ̃` by the minimum-norm `θ⋆` with `Jθ⋆ = y − s⋆`.
pub fn gen_linear_instance(
    n: usize,
    p: usize,
    r: usize,
    k: usize,
    rng: &mut SeededRng,
) -> Result<LinearInstance> {
    if n == 0 || p == 0 || r == 0 || r > n.min(p) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= r <= min(N, p); got N={n}, p={p}, r={r}"
        )));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!(
            "sparsity k={k} exceeds N={n}"
        )));
    }
    let seed = rng.seed();
    let g1 = rng.normal_matrix(n, r);
    let g2 = rng.normal_matrix(r, p);
    let j = g1.matmul(&g2)?;

    let mut s_star = vec![0.0; n];
    for idx in rng.choose_without_replacement(n, k) {
        s_star[idx] = rng.normal();
    }
    let theta_tilde = rng.normal_vec(p);
    let clean = j.matvec(&theta_tilde);
    let y: Vec<f64> = clean.iter().zip(&s_star).map(|(a, b)| a + b).collect();

    let svd = svd_compact(&j, DEFAULT_RANK_TOLERANCE)?;
    let theta_star = min_norm_solve_with(&svd, &clean)?;
    Ok(LinearInstance {
        rank: svd.rank(),
        j,
        theta_star,
        s_star,
        y,
        sparsity: k,
        seed,
    })
}

/// `μ(J) = (N/r) · maxᵢ ‖Uᵀeᵢ‖²`, in `[1, N/r]`.
pub fn coherence(j: &DenseMatrix) -> Result<f64> {
    let svd = svd_compact(j, DEFAULT_RANK_TOLERANCE)?;
    coherence_from_svd(&svd)
}

pub fn coherence_from_svd(svd: &crate::numerics::CompactSvd) -> Result<f64> {
    let r = svd.rank();
    if r == 0 {
        return Err(Error::ZeroMatrix);
    }
    let n = svd.source_rows();
    let max_leverage = (0..n)
        .map(|i| svd.u.row(i).iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(n as f64 / r as f64 * max_leverage)
}

/// Labelled feature vectors with a clean and a (possibly) corrupted label per sample.
///
/// Labels are stored as class indices; [`NoisyDataset::one_hot`] gives the
/// vector form.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyDataset {
    pub inputs: Vec<Vec<f64>>,
    pub clean_labels: Vec<usize>,
    pub noisy_labels: Vec<usize>,
    pub flipped: Vec<bool>,
    pub num_classes: usize,
    pub seed: u64,
}

impl NoisyDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn one_hot(&self, class: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.num_classes];
        y[class] = 1.0;
        y
    }

    pub fn flip_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.flipped.iter().filter(|&&f| f).count() as f64 / self.len() as f64
    }

    fn refresh_flipped(&mut self) {
        self.flipped = self
            .clean_labels
            .iter()
            .zip(&self.noisy_labels)
            .map(|(c, n)| c != n)
            .collect();
    }

    /// Empirical class frequencies of the noisy labels.
    pub fn noisy_class_prior(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.num_classes];
        for &c in &self.noisy_labels {
            p[c] += 1.0;
        }
        let n = self.len().max(1) as f64;
        p.iter_mut().for_each(|x| *x /= n);
        p
    }

    /// First `n` samples and the rest, e.g. a train/test split of a shuffled set.
    pub fn split(&self, n: usize) -> (NoisyDataset, NoisyDataset) {
        let n = n.min(self.len());
        let part = |r: std::ops::Range<usize>| NoisyDataset {
            inputs: self.inputs[r.clone()].to_vec(),
            clean_labels: self.clean_labels[r.clone()].to_vec(),
            noisy_labels: self.noisy_labels[r.clone()].to_vec(),
            flipped: self.flipped[r].to_vec(),
            num_classes: self.num_classes,
            seed: self.seed,
        };
        (part(0..n), part(n..self.len()))
    }
}

/// Unit vectors with pairwise distance at least 1: the standard basis when
/// `k <= d`, otherwise rejection-sampled directions.
fn class_directions(k: usize, d: usize, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>> {
    if k <= d {
        return Ok((0..k)
            .map(|c| {
                let mut e = vec![0.0; d];
                e[c] = 1.0;
                e
            })
            .collect());
    }
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while dirs.len() < k {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidParameter(format!(
                "could not place {k} unit means at pairwise distance >= 1 in dimension {d}"
            )));
        }
        let cand = rng.unit_sphere(d);
        let ok = dirs
            .iter()
            .all(|m| norm2(&crate::numerics::sub(m, &cand)) >= 1.0);
        if ok {
            dirs.push(cand);
        }
    }
    Ok(dirs)
}

/// Isotropic Gaussian blobs; class `c` is centred at `separation · m_c`.
pub fn gen_classification_dataset(
    num_classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    rng: &mut SeededRng,
) -> Result<NoisyDataset> {
    if num_classes < 2 || dim < 2 || !(separation > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need K >= 2, d >= 2, separation > 0; got K={num_classes}, d={dim}, separation={separation}"
        )));
    }
    let seed = rng.seed();
    let dirs = class_directions(num_classes, dim, rng)?;
    let mut samples: Vec<(Vec<f64>, usize)> = Vec::with_capacity(num_classes * n_per_class);
    for (c, m) in dirs.iter().enumerate() {
        for _ in 0..n_per_class {
            let x = m
                .iter()
                .map(|&mi| separation * mi + rng.normal())
                .collect();
            samples.push((x, c));
        }
    }
    rng.shuffle(&mut samples);
    let (inputs, labels): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
    Ok(NoisyDataset {
        flipped: vec![false; inputs.len()],
        inputs,
        noisy_labels: labels.clone(),
        clean_labels: labels,
        num_classes,
        seed,
    })
}

/// With probability `rate` each label is redrawn uniformly from all `K`
/// classes (the true class included), so the expected flip fraction is
/// `rate · (K − 1)/K`.
pub fn apply_symmetric_noise(
    ds: &NoisyDataset,
    rate: f64,
    rng: &mut SeededRng,
) -> Result<NoisyDataset> {
    check_rate(rate)?;
    let mut out = ds.clone();
    for (noisy, &clean) in out.noisy_labels.iter_mut().zip(&ds.clean_labels) {
        // Draw both numbers for every sample so the stream position does not
        // depend on earlier outcomes.
        let coin = rng.uniform();
        let class = rng.below(ds.num_classes);
        *noisy = if coin < rate { class } else { clean };
    }
    out.refresh_flipped();
    Ok(out)
}

/// Relabels a uniformly random `rate` fraction of the samples whose clean
/// class is a key of `pair_map` to the mapped class.
pub fn apply_asymmetric_noise(
    ds: &NoisyDataset,
    pair_map: &BTreeMap<usize, usize>,
    rate: f64,
    rng: &mut SeededRng,
) -> Result<NoisyDataset> {
    check_rate(rate)?;
    if let Some((&a, &b)) = pair_map
        .iter()
        .find(|(&a, &b)| a >= ds.num_classes || b >= ds.num_classes)
    {
        return Err(Error::InvalidParameter(format!(
            "pair map {a}->{b} names a class outside 0..{}",
            ds.num_classes
        )));
    }
    let candidates: Vec<usize> = (0..ds.len())
        .filter(|&i| pair_map.contains_key(&ds.clean_labels[i]))
        .collect();
    let count = (rate * candidates.len() as f64).round() as usize;
    let mut out = ds.clone();
    out.noisy_labels = ds.clean_labels.clone();
    for pick in rng.choose_without_replacement(candidates.len(), count) {
        let i = candidates[pick];
        out.noisy_labels[i] = pair_map[&ds.clean_labels[i]];
    }
    out.refresh_flipped();
    Ok(out)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!(
            "noise rate must lie in [0, 1], got {rate}"
        )));
    }
    Ok(())
}
