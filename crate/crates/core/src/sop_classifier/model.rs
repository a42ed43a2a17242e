use crate::error::{check_len, Error, Result};
use crate::numerics::SeededRng;

/// One-hidden-layer rectifier network with softmax output.
///
/// All weights live in one flat vector laid out as `W₁ (h×d), b₁ (h),
/// W₂ (K×h), b₂ (K)`, row-major, so gradients and optimizer state share the
/// same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    input_dim: usize,
    hidden: usize,
    classes: usize,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ToyModel {
    /// He-scaled Gaussian weights, zero biases.
    pub fn new(input_dim: usize, hidden: usize, classes: usize, rng: &mut SeededRng) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "model needs d ≥ 1, h ≥ 1, K ≥ 2; got ({input_dim}, {hidden}, {classes})"
            )));
        }
        let mut m = Self {
            input_dim,
            hidden,
            classes,
            params: vec![0.0; Self::param_count(input_dim, hidden, classes)],
        };
        let s1 = (2.0 / input_dim as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        let (w1, w2) = (m.w1_range(), m.w2_range());
        for p in &mut m.params[w1] {
            *p = s1 * rng.normal();
        }
        for p in &mut m.params[w2] {
            *p = s2 * rng.normal();
        }
        Ok(m)
    }

    pub fn from_params(input_dim: usize, hidden: usize, classes: usize, params: Vec<f64>) -> Result<Self> {
        check_len("params", params.len(), Self::param_count(input_dim, hidden, classes))?;
        Ok(Self {
            input_dim,
            hidden,
            classes,
            params,
        })
    }

    pub fn param_count(d: usize, h: usize, k: usize) -> usize {
        h * d + h + k * h + k
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w1_range(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.input_dim
    }

    fn b1_offset(&self) -> usize {
        self.hidden * self.input_dim
    }

    fn w2_range(&self) -> std::ops::Range<usize> {
        let start = self.b1_offset() + self.hidden;
        start..start + self.classes * self.hidden
    }

    fn b2_offset(&self) -> usize {
        self.w2_range().end
    }

    /// Indices of the `W₁` and `W₂` blocks (biases excluded), for weight decay.
    pub fn weight_ranges(&self) -> [std::ops::Range<usize>; 2] {
        [self.w1_range(), self.w2_range()]
    }

    pub fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        debug_assert_eq!(x.len(), self.input_dim);
        let (d, h, k) = (self.input_dim, self.hidden, self.classes);
        let p = &self.params;
        let b1 = self.b1_offset();
        let mut hidden_pre = vec![0.0; h];
        for (a, out) in hidden_pre.iter_mut().enumerate() {
            let row = &p[a * d..(a + 1) * d];
            *out = p[b1 + a] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&z| z.max(0.0)).collect();
        let w2 = self.w2_range().start;
        let b2 = self.b2_offset();
        let mut logits = vec![0.0; k];
        for (c, out) in logits.iter_mut().enumerate() {
            let row = &p[w2 + c * h..w2 + (c + 1) * h];
            *out = p[b2 + c] + row.iter().zip(&hidden).map(|(w, z)| w * z).sum::<f64>();
        }
        ForwardCache {
            hidden_pre,
            hidden,
            probs: softmax(&logits),
        }
    }

    /// Class probabilities.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).probs
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.forward(x))
    }

    /// Adds `∂L/∂params` to `grad` given `∂L/∂probs` for one input.
    pub fn backward(&self, x: &[f64], cache: &ForwardCache, grad_probs: &[f64], grad: &mut [f64]) {
        let (d, h, k) = (self.input_dim, self.hidden, self.classes);
        let p = &self.params;
        let f = &cache.probs;
        let inner: f64 = grad_probs.iter().zip(f).map(|(g, fi)| g * fi).sum();
        let g_logits: Vec<f64> = (0..k).map(|c| f[c] * (grad_probs[c] - inner)).collect();
        let w2 = self.w2_range().start;
        let b2 = self.b2_offset();
        let mut g_hidden = vec![0.0; h];
        for c in 0..k {
            let gc = g_logits[c];
            if gc == 0.0 {
                continue;
            }
            grad[b2 + c] += gc;
            for a in 0..h {
                grad[w2 + c * h + a] += gc * cache.hidden[a];
                g_hidden[a] += gc * p[w2 + c * h + a];
            }
        }
        let b1 = self.b1_offset();
        for a in 0..h {
            if cache.hidden_pre[a] <= 0.0 {
                continue;
            }
            let ga = g_hidden[a];
            grad[b1 + a] += ga;
            let row = &mut grad[a * d..(a + 1) * d];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += ga * xi;
            }
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_a_distribution() {
        let mut rng = SeededRng::new(1);
        let m = ToyModel::new(5, 16, 3, &mut rng).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = rng.normal_vec(5).into_iter().map(|v| 10.0 * v).collect();
            let f = m.forward(&x);
            assert!(f.iter().all(|&p| p > 0.0 && p < 1.0));
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[1001.0, 1002.0, 1003.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeededRng::new(2);
        let m = ToyModel::new(4, 6, 3, &mut rng).unwrap();
        let x = rng.normal_vec(4);
        let weights = rng.normal_vec(3);
        let loss = |model: &ToyModel| -> f64 {
            model.forward(&x).iter().zip(&weights).map(|(f, w)| f * w).sum()
        };
        let cache = m.forward_cached(&x);
        let mut grad = vec![0.0; m.params().len()];
        m.backward(&x, &cache, &weights, &mut grad);
        let h = 1e-6;
        for i in 0..grad.len() {
            let mut plus = m.clone();
            plus.params_mut()[i] += h;
            let mut minus = m.clone();
            minus.params_mut()[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-7 + 1e-5 * fd.abs(), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = SeededRng::new(3);
        assert!(ToyModel::new(0, 4, 3, &mut rng).is_err());
        assert!(ToyModel::new(2, 4, 1, &mut rng).is_err());
        assert!(ToyModel::from_params(2, 2, 2, vec![0.0; 3]).is_err());
    }
}
