use super::losses::{ce_on_phi, class_balance_reg, consistency_reg, mse_sample, noise_term};
use super::model::{argmax, ToyModel};
use super::{EpochMetrics, MetricsHistory, SopClassifierState, SopHyper};
use crate::error::{check_len, Error, Result};
use crate::instances::NoisyDataset;
use crate::numerics::SeededRng;

/// `‖sᵢ‖₁` above this flags sample `i` as relabeled.
pub const DETECTION_THRESHOLD: f64 = 0.5;

/// Fraction of samples whose predicted class equals `labels`.
pub fn evaluate_accuracy(model: &ToyModel, inputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    if inputs.is_empty() {
        return 0.0;
    }
    let hits = inputs
        .iter()
        .zip(labels)
        .filter(|(x, &y)| model.predict(x) == y)
        .count();
    hits as f64 / inputs.len() as f64
}

fn feature_std(inputs: &[Vec<f64>]) -> Vec<f64> {
    let n = inputs.len() as f64;
    let d = inputs[0].len();
    (0..d)
        .map(|j| {
            let mean = inputs.iter().map(|x| x[j]).sum::<f64>() / n;
            (inputs.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// Trains network and noise variables; the test set only feeds the metrics.
///
/// Each epoch runs minibatch SGD with momentum on the network (mean
/// cross-entropy on `φ(f + s)`, plus the optional consistency and
/// class-balance terms), then one pass over all samples updating `uᵢ` from the
/// cross-entropy gradient and `vᵢ` from the squared-error gradient, each
/// clamped to `[−1, 1]`.
pub fn train_sop(
    ds: &NoisyDataset,
    test: &NoisyDataset,
    hyper: &SopHyper,
) -> Result<(SopClassifierState, MetricsHistory)> {
    hyper.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    if !test.is_empty() {
        check_len("test input dimension", test.dim(), ds.dim())?;
    }
    let k = ds.num_classes;
    let n = ds.len();
    let mut rng = SeededRng::new(hyper.seed);
    let model = ToyModel::new(ds.dim(), hyper.hidden, k, &mut rng)?;
    let draw = |rng: &mut SeededRng| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..k).map(|_| (hyper.init_std * rng.normal()).clamp(-1.0, 1.0)).collect())
            .collect()
    };
    let u = draw(&mut rng);
    let v = draw(&mut rng);
    let mut state = SopClassifierState { model, u, v };
    let prior = ds.noisy_class_prior();
    let jitter: Vec<f64> = feature_std(&ds.inputs)
        .into_iter()
        .map(|s| hyper.augment_std * s)
        .collect();
    let mut velocity = vec![0.0; state.model.params().len()];
    let mut decay = vec![0.0; velocity.len()];
    for r in state.model.weight_ranges() {
        decay[r].fill(hyper.weight_decay);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = MetricsHistory::default();

    for epoch in 0..hyper.epochs {
        let lr = hyper.lr_at(epoch);
        rng.shuffle(&mut order);
        let mut ce_total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(hyper.batch_size) {
            let mut g = super::ce_loss_and_grads(&state, ds, batch, hyper.epsilon)?;
            if hyper.lambda_c > 0.0 || hyper.lambda_b > 0.0 {
                let xs: Vec<&[f64]> = batch.iter().map(|&i| ds.inputs[i].as_slice()).collect();
                if hyper.lambda_c > 0.0 {
                    let aug: Vec<Vec<f64>> = xs
                        .iter()
                        .map(|x| x.iter().zip(&jitter).map(|(xi, s)| xi + s * rng.normal()).collect())
                        .collect();
                    let (lc, gc) = consistency_reg(&state.model, &xs, &aug)?;
                    g.loss += hyper.lambda_c * lc;
                    axpy_into(&mut g.theta, hyper.lambda_c, &gc);
                }
                if hyper.lambda_b > 0.0 {
                    let (lb, gb) = class_balance_reg(&state.model, &xs, &prior)?;
                    g.loss += hyper.lambda_b * lb;
                    axpy_into(&mut g.theta, hyper.lambda_b, &gb);
                }
            }
            if !g.loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            ce_total += g.loss;
            batches += 1;
            let params = state.model.params_mut();
            for (((p, vel), gi), wd) in params.iter_mut().zip(velocity.iter_mut()).zip(&g.theta).zip(&decay) {
                *vel = hyper.momentum * *vel + gi + wd * *p;
                *p -= lr * *vel;
            }
        }

        let mut mse_total = 0.0;
        for i in 0..n {
            let label = ds.noisy_labels[i];
            let f = state.model.forward(&ds.inputs[i]);
            let s = noise_term(&state.u[i], &state.v[i], label);
            let w: Vec<f64> = f.iter().zip(&s).map(|(a, b)| a + b).collect();
            let (_, g_w) = ce_on_phi(&w, label, hyper.epsilon);
            let (mse, g_v) = mse_sample(&f, &state.u[i], &state.v[i], label, hyper.one_hot_projection);
            mse_total += mse;
            let ui = &mut state.u[i][label];
            *ui = (*ui - hyper.alpha_u * lr * g_w[label] * 2.0 * *ui).clamp(-1.0, 1.0);
            for (vc, gc) in state.v[i].iter_mut().zip(&g_v) {
                *vc = (*vc - hyper.alpha_v * lr * gc).clamp(-1.0, 1.0);
            }
        }
        if !mse_total.is_finite() || state.model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }

        let mean_s_l1 = (0..n).map(|i| state.noise_l1(i, ds.noisy_labels[i])).sum::<f64>() / n as f64;
        history.epochs.push(EpochMetrics {
            epoch,
            train_acc_noisy: evaluate_accuracy(&state.model, &ds.inputs, &ds.noisy_labels),
            train_acc_clean: evaluate_accuracy(&state.model, &ds.inputs, &ds.clean_labels),
            test_acc: evaluate_accuracy(&state.model, &test.inputs, &test.clean_labels),
            mean_s_l1,
            ce_loss: ce_total / batches as f64,
            mse_loss: mse_total / n as f64,
        });
    }
    Ok((state, history))
}

fn axpy_into(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Precision and recall of `‖sᵢ‖₁ > 0.5` as a detector of relabeled samples.
/// With no predicted (or no actual) positives the corresponding value is 1.
pub fn noise_detection_metrics(state: &SopClassifierState, ds: &NoisyDataset) -> Result<(f64, f64)> {
    check_len("noise variables", state.u.len(), ds.len())?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for i in 0..ds.len() {
        let predicted = state.noise_l1(i, ds.noisy_labels[i]) > DETECTION_THRESHOLD;
        match (predicted, ds.flipped[i]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok((ratio(tp, tp + fp), ratio(tp, tp + fneg)))
}

/// Class of the largest corrected probability `φ(f + s)`.
pub fn corrected_prediction(state: &SopClassifierState, ds: &NoisyDataset, i: usize, epsilon: f64) -> usize {
    let f = state.model.forward(&ds.inputs[i]);
    let s = noise_term(&state.u[i], &state.v[i], ds.noisy_labels[i]);
    let w: Vec<f64> = f.iter().zip(&s).map(|(a, b)| a + b).collect();
    argmax(&super::phi(&w, epsilon))
}
