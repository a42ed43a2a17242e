use super::model::{argmax, ToyModel};
use super::SopClassifierState;
use crate::error::{check_len, Error, Result};
use crate::instances::NoisyDataset;

/// Floor at `ε` then ℓ1-normalize.
pub fn phi(w: &[f64], epsilon: f64) -> Vec<f64> {
    let floored: Vec<f64> = w.iter().map(|&x| x.max(epsilon)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|x| x / total).collect()
}

/// `s = u⊙u⊙y − v⊙v⊙(1−y)` for one-hot `y = e_label`.
pub fn noise_term(u: &[f64], v: &[f64], label: usize) -> Vec<f64> {
    (0..u.len())
        .map(|c| if c == label { u[c] * u[c] } else { -v[c] * v[c] })
        .collect()
}

/// Model output, noise term and their sum for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SopForward {
    pub f: Vec<f64>,
    pub s: Vec<f64>,
    pub corrected: Vec<f64>,
}

pub fn sop_forward(
    state: &SopClassifierState,
    i: usize,
    x: &[f64],
    label: usize,
) -> Result<SopForward> {
    if i >= state.u.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: state.u.len(),
        });
    }
    check_len("x", x.len(), state.model.input_dim())?;
    if label >= state.model.classes() {
        return Err(Error::IndexOutOfRange {
            index: label,
            len: state.model.classes(),
        });
    }
    let f = state.model.forward(x);
    let s = noise_term(&state.u[i], &state.v[i], label);
    let corrected = f.iter().zip(&s).map(|(a, b)| a + b).collect();
    Ok(SopForward { f, s, corrected })
}

/// `−log φ(w)_label` and its (sub)gradient in `w`; floored entries get 0.
pub(crate) fn ce_on_phi(w: &[f64], label: usize, epsilon: f64) -> (f64, Vec<f64>) {
    let m: Vec<f64> = w.iter().map(|&x| x.max(epsilon)).collect();
    let total: f64 = m.iter().sum();
    let loss = total.ln() - m[label].ln();
    let grad = w
        .iter()
        .enumerate()
        .map(|(c, &x)| {
            if x > epsilon {
                1.0 / total - if c == label { 1.0 / m[c] } else { 0.0 }
            } else {
                0.0
            }
        })
        .collect();
    (loss, grad)
}

/// Mean cross-entropy of `φ(f + s)` against noisy labels over a batch and its
/// gradients for the network weights and for each `uᵢ` in the batch.
#[derive(Clone, Debug)]
pub struct CeGrads {
    pub loss: f64,
    pub theta: Vec<f64>,
    /// One entry per batch element, in batch order.
    pub u: Vec<Vec<f64>>,
}

pub fn ce_loss_and_grads(
    state: &SopClassifierState,
    ds: &NoisyDataset,
    batch: &[usize],
    epsilon: f64,
) -> Result<CeGrads> {
    check_batch(state, ds, batch)?;
    let scale = 1.0 / batch.len() as f64;
    let mut theta = vec![0.0; state.model.params().len()];
    let mut grads_u = Vec::with_capacity(batch.len());
    let mut loss = 0.0;
    for &i in batch {
        let x = &ds.inputs[i];
        let label = ds.noisy_labels[i];
        let cache = state.model.forward_cached(x);
        let s = noise_term(&state.u[i], &state.v[i], label);
        let w: Vec<f64> = cache.probs.iter().zip(&s).map(|(a, b)| a + b).collect();
        let (l, g_w) = ce_on_phi(&w, label, epsilon);
        loss += scale * l;
        let g_f: Vec<f64> = g_w.iter().map(|g| scale * g).collect();
        state.model.backward(x, &cache, &g_f, &mut theta);
        let mut gu = vec![0.0; g_w.len()];
        gu[label] = g_f[label] * 2.0 * state.u[i][label];
        grads_u.push(gu);
    }
    Ok(CeGrads {
        loss,
        theta,
        u: grads_u,
    })
}

/// Gradient of the batch-mean cross-entropy with respect to each `vᵢ`.
/// Training never uses it; it documents why `v` is fit with squared error.
pub fn ce_grad_v(
    state: &SopClassifierState,
    ds: &NoisyDataset,
    batch: &[usize],
    epsilon: f64,
) -> Result<Vec<Vec<f64>>> {
    check_batch(state, ds, batch)?;
    let scale = 1.0 / batch.len() as f64;
    Ok(batch
        .iter()
        .map(|&i| {
            let label = ds.noisy_labels[i];
            let f = state.model.forward(&ds.inputs[i]);
            let s = noise_term(&state.u[i], &state.v[i], label);
            let w: Vec<f64> = f.iter().zip(&s).map(|(a, b)| a + b).collect();
            let (_, g_w) = ce_on_phi(&w, label, epsilon);
            (0..g_w.len())
                .map(|c| if c == label { 0.0 } else { -2.0 * scale * g_w[c] * state.v[i][c] })
                .collect()
        })
        .collect())
}

/// Projection of a prediction to the one-hot vector of its argmax.
pub fn one_hot_of_argmax(f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    out[argmax(f)] = 1.0;
    out
}

/// Mean of `‖f̃ + s − y‖²` over a batch and its gradient for each `vᵢ`, where
/// `f̃` is `f` or its one-hot projection (held constant).
pub fn mse_loss_and_grad_v(
    state: &SopClassifierState,
    ds: &NoisyDataset,
    batch: &[usize],
    one_hot_projection: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_batch(state, ds, batch)?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for &i in batch {
        let f = state.model.forward(&ds.inputs[i]);
        let (l, g) = mse_sample(&f, &state.u[i], &state.v[i], ds.noisy_labels[i], one_hot_projection);
        loss += scale * l;
        grads.push(g.into_iter().map(|x| scale * x).collect());
    }
    Ok((loss, grads))
}

/// Per-sample squared error and its `v`-gradient `−4(f̃+s−y)⊙v⊙(1−y)`.
pub(crate) fn mse_sample(
    f: &[f64],
    u: &[f64],
    v: &[f64],
    label: usize,
    one_hot_projection: bool,
) -> (f64, Vec<f64>) {
    let ft = if one_hot_projection { one_hot_of_argmax(f) } else { f.to_vec() };
    let s = noise_term(u, v, label);
    let mut loss = 0.0;
    let mut grad = vec![0.0; f.len()];
    for c in 0..f.len() {
        let y = if c == label { 1.0 } else { 0.0 };
        let e = ft[c] + s[c] - y;
        loss += e * e;
        if c != label {
            grad[c] = -4.0 * e * v[c];
        }
    }
    (loss, grad)
}

fn check_batch(state: &SopClassifierState, ds: &NoisyDataset, batch: &[usize]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("batch must be nonempty".into()));
    }
    check_len("noise variables", state.u.len(), ds.len())?;
    if let Some(&i) = batch.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::IndexOutOfRange { index: i, len: ds.len() });
    }
    Ok(())
}

/// Mean `KL(f(x) ‖ f(x'))` between clean and augmented inputs, with gradient
/// through both branches.
pub fn consistency_reg(model: &ToyModel, xs: &[&[f64]], xs_aug: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    check_len("augmented batch", xs_aug.len(), xs.len())?;
    if xs.is_empty() {
        return Err(Error::InvalidParameter("batch must be nonempty".into()));
    }
    let scale = 1.0 / xs.len() as f64;
    let mut grad = vec![0.0; model.params().len()];
    let mut loss = 0.0;
    for (x, xa) in xs.iter().zip(xs_aug) {
        let c = model.forward_cached(x);
        let ca = model.forward_cached(xa);
        let (p, q) = (&c.probs, &ca.probs);
        let mut gp = vec![0.0; p.len()];
        let mut gq = vec![0.0; p.len()];
        for k in 0..p.len() {
            let ratio = (p[k] / q[k]).ln();
            loss += scale * p[k] * ratio;
            gp[k] = scale * (ratio + 1.0);
            gq[k] = -scale * p[k] / q[k];
        }
        model.backward(x, &c, &gp, &mut grad);
        model.backward(xa, &ca, &gq, &mut grad);
    }
    Ok((loss, grad))
}

/// `−Σₖ pₖ log f̄ₖ` with `f̄` the batch-mean prediction.
pub fn class_balance_reg(model: &ToyModel, xs: &[&[f64]], prior: &[f64]) -> Result<(f64, Vec<f64>)> {
    if xs.is_empty() {
        return Err(Error::InvalidParameter("batch must be nonempty".into()));
    }
    check_len("prior", prior.len(), model.classes())?;
    let scale = 1.0 / xs.len() as f64;
    let caches: Vec<_> = xs.iter().map(|x| model.forward_cached(x)).collect();
    let mut mean = vec![0.0; model.classes()];
    for c in &caches {
        for (m, p) in mean.iter_mut().zip(&c.probs) {
            *m += scale * p;
        }
    }
    let loss = -prior.iter().zip(&mean).map(|(p, m)| p * m.ln()).sum::<f64>();
    let g_f: Vec<f64> = prior.iter().zip(&mean).map(|(p, m)| -scale * p / m).collect();
    let mut grad = vec![0.0; model.params().len()];
    for (x, c) in xs.iter().zip(&caches) {
        model.backward(x, c, &g_f, &mut grad);
    }
    Ok((loss, grad))
}
