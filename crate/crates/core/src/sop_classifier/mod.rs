//! Toy-scale classifier trained jointly with per-sample over-parameterized
//! noise terms `sᵢ = uᵢ⊙uᵢ⊙yᵢ − vᵢ⊙vᵢ⊙(1−yᵢ)`.
//!
//! The network is fit with cross-entropy on `φ(f + s)`; `u` follows the same
//! loss and `v` follows squared error, each projected to `[−1, 1]`.

mod losses;
mod model;
mod train;

use std::io::{BufRead, Write};

pub use losses::{
    ce_grad_v, ce_loss_and_grads, class_balance_reg, consistency_reg, mse_loss_and_grad_v, noise_term,
    one_hot_of_argmax, phi, sop_forward, CeGrads, SopForward,
};
pub use model::{argmax, softmax, ForwardCache, ToyModel};
pub use train::{corrected_prediction, evaluate_accuracy, noise_detection_metrics, train_sop, DETECTION_THRESHOLD};

use crate::error::{Error, Result};

/// Network plus one `(uᵢ, vᵢ)` pair per training sample; entries stay in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SopClassifierState {
    pub model: ToyModel,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl SopClassifierState {
    pub fn noise(&self, i: usize, label: usize) -> Vec<f64> {
        noise_term(&self.u[i], &self.v[i], label)
    }

    pub fn noise_l1(&self, i: usize, label: usize) -> f64 {
        self.noise(i, label).iter().map(|x| x.abs()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SopHyper {
    /// Base learning rate τ.
    pub tau: f64,
    /// `u` moves with rate `α_u·τ`.
    pub alpha_u: f64,
    /// `v` moves with rate `α_v·τ`.
    pub alpha_v: f64,
    pub init_std: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Applied to the network weights only.
    pub weight_decay: f64,
    pub momentum: f64,
    pub lambda_c: f64,
    pub lambda_b: f64,
    /// Floor inside φ.
    pub epsilon: f64,
    pub hidden: usize,
    /// Fractions of `epochs` after which τ is multiplied by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    /// Jitter std for the consistency view, relative to each feature's std.
    pub augment_std: f64,
    pub one_hot_projection: bool,
    pub seed: u64,
}

impl Default for SopHyper {
    fn default() -> Self {
        Self {
            tau: 0.02,
            alpha_u: 10.0,
            alpha_v: 10.0,
            init_std: 1e-8,
            batch_size: 128,
            epochs: 200,
            weight_decay: 5e-4,
            momentum: 0.9,
            lambda_c: 0.0,
            lambda_b: 0.0,
            epsilon: 1e-2,
            hidden: 512,
            lr_milestones: vec![0.4, 0.8],
            lr_decay: 0.1,
            augment_std: 0.1,
            one_hot_projection: true,
            seed: 0,
        }
    }
}

impl SopHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.alpha_u >= 0.0 && self.alpha_v >= 0.0) {
            return bad("alpha_u and alpha_v must be non-negative");
        }
        if !(self.init_std >= 0.0) {
            return bad("init_std must be non-negative");
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch_size and hidden must be positive");
        }
        if !(self.weight_decay >= 0.0 && (0.0..1.0).contains(&self.momentum)) {
            return bad("need weight_decay >= 0 and momentum in [0, 1)");
        }
        if !(self.lambda_c >= 0.0 && self.lambda_b >= 0.0) {
            return bad("lambda_c and lambda_b must be non-negative");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(self.lr_decay > 0.0) || self.lr_milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return bad("lr_decay must be positive and milestones in [0, 1]");
        }
        if !(self.augment_std >= 0.0) {
            return bad("augment_std must be non-negative");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&m| epoch >= (m * self.epochs as f64).round() as usize)
            .count();
        self.tau * self.lr_decay.powi(passed as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_acc_noisy: f64,
    pub train_acc_clean: f64,
    pub test_acc: f64,
    pub mean_s_l1: f64,
    pub ce_loss: f64,
    pub mse_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsHistory {
    pub epochs: Vec<EpochMetrics>,
}

impl MetricsHistory {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

const CHECKPOINT_HEADER: &str = "sop-classifier-checkpoint v1";

fn write_row(out: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let row: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    writeln!(out, "{}", row.join(" "))
}

/// Text dump: header, dimensions `d h K N`, network weights, then `N` rows of
/// `u` and `N` rows of `v`.
pub fn write_checkpoint(state: &SopClassifierState, out: &mut impl Write) -> Result<()> {
    let m = &state.model;
    writeln!(out, "{CHECKPOINT_HEADER}")?;
    writeln!(out, "{} {} {} {}", m.input_dim(), m.hidden(), m.classes(), state.u.len())?;
    write_row(out, m.params())?;
    for row in state.u.iter().chain(&state.v) {
        write_row(out, row)?;
    }
    Ok(())
}

pub fn read_checkpoint(input: impl BufRead) -> Result<SopClassifierState> {
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Parse("truncated checkpoint".into()))?
            .map_err(Error::from)
    };
    if next()?.trim() != CHECKPOINT_HEADER {
        return Err(Error::Parse("unrecognized checkpoint header".into()));
    }
    let nums = |line: String| -> Result<Vec<f64>> {
        line.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{t}: {e}"))))
            .collect()
    };
    let dims: Vec<usize> = next()?
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| Error::Parse(format!("{t}: {e}"))))
        .collect::<Result<_>>()?;
    let [d, h, k, n] = dims[..] else {
        return Err(Error::Parse("expected four dimensions".into()));
    };
    let model = ToyModel::from_params(d, h, k, nums(next()?)?)?;
    let mut rows = Vec::with_capacity(2 * n);
    for _ in 0..2 * n {
        let row = nums(next()?)?;
        crate::error::check_len("noise row", row.len(), k)?;
        rows.push(row);
    }
    let v = rows.split_off(n);
    Ok(SopClassifierState { model, u: rows, v })
}
