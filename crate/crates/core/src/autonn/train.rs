//! SGD-with-momentum training over precomputed feature tensors.

use serde::{Deserialize, Serialize};

use super::kernels;
use super::model::Model;
use super::tape::ReluMode;
use crate::error::{CoreError, Result};
use crate::rng::derive_rng;
use crate::tensor::Tensor;
use crate::{scalar, Scalar};
use rand_core::RngCore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 32, learning_rate: 0.002, epochs: 50, seed: 0, momentum: 0.9 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(CoreError::invalid("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::invalid("momentum must be in [0, 1)"));
        }
        Ok(())
    }
}

/// One sample for the trainer: a `[h, w]` feature map and its class.
#[derive(Debug, Clone)]
pub struct LabeledSample<T> {
    pub features: Tensor<T>,
    pub label: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

pub type TrainHistory = Vec<EpochStats>;

fn stack_batch<T: Scalar>(samples: &[&LabeledSample<T>]) -> Result<(Tensor<T>, Vec<usize>)> {
    let dims = samples[0].features.dims();
    if dims.len() != 2 {
        return Err(CoreError::shape("sample features must be rank-2".into()));
    }
    let (h, w) = (dims[0], dims[1]);
    let mut data = Vec::with_capacity(samples.len() * h * w);
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        if s.features.dims() != dims {
            return Err(CoreError::shape("inconsistent feature shapes in batch".into()));
        }
        data.extend_from_slice(s.features.data());
        labels.push(s.label);
    }
    Ok((Tensor::from_vec(&[samples.len(), 1, h, w], data)?, labels))
}

/// Batched argmax-accuracy of a frozen model.
pub fn evaluate_accuracy<T: Scalar>(
    model: &Model<T>,
    data: &[LabeledSample<T>],
    batch_size: usize,
) -> Result<(f64, Vec<usize>)> {
    if data.is_empty() {
        return Err(CoreError::invalid("empty evaluation set"));
    }
    let mut preds = Vec::with_capacity(data.len());
    let refs: Vec<&LabeledSample<T>> = data.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let (batch, _) = stack_batch(chunk)?;
        let run = model.forward_features(&batch)?;
        let logits = run.tape.value(run.logits);
        for i in 0..chunk.len() {
            let row = logits.row(i);
            let argmax = row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            preds.push(argmax);
        }
    }
    let correct = preds.iter().zip(data).filter(|(p, s)| **p == s.label).count();
    Ok((correct as f64 / data.len() as f64, preds))
}

/// Trains in place. Deterministic given the seed: fixed init (from the
/// model), fixed shuffle order, sequential updates.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &[LabeledSample<T>],
    val_set: Option<&[LabeledSample<T>]>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(CoreError::invalid("empty training set"));
    }
    let n_classes = model.config.n_classes;
    if let Some(bad) = train_set.iter().find(|s| s.label >= n_classes) {
        return Err(CoreError::invalid(format!(
            "label {} out of range for {} classes",
            bad.label, n_classes
        )));
    }

    let lr = scalar::<T>(cfg.learning_rate);
    let mu = scalar::<T>(cfg.momentum);
    let mut velocity: Vec<Tensor<T>> =
        model.params().iter().map(|p| Tensor::zeros(p.dims())).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        // Fisher-Yates with the per-epoch derived stream.
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = derive_rng(cfg.seed, "train-shuffle", epoch as u64);
        for i in (1..order.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&LabeledSample<T>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (batch, labels) = stack_batch(&samples)?;
            let run = model.forward_features(&batch)?;
            let mut tape = run.tape;
            let loss_node = tape.softmax_cross_entropy(run.logits, labels.clone())?;
            let loss: f64 = num_traits::cast(tape.value(loss_node).data()[0]).unwrap();
            if !loss.is_finite() {
                return Err(CoreError::Numerical(format!(
                    "loss diverged to {loss} at epoch {epoch}"
                )));
            }
            loss_sum += loss * chunk.len() as f64;

            let logits = tape.value(run.logits);
            for (i, &label) in labels.iter().enumerate() {
                let row = logits.row(i);
                let argmax =
                    row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
                if argmax == label {
                    correct += 1;
                }
            }

            let seed = Tensor::from_vec(&[1], vec![T::one()])?;
            let grads = tape.backward(loss_node, seed, ReluMode::Standard)?;
            for (slot, (param, vel)) in
                run.param_nodes.iter().zip(model.params_mut().iter_mut().zip(&mut velocity))
            {
                let Some(g) = &grads[*slot] else { continue };
                for ((v, p), &gv) in
                    vel.data_mut().iter_mut().zip(param.data_mut()).zip(g.data())
                {
                    *v = mu * *v + gv;
                    *p = *p - lr * *v;
                }
            }
        }

        let val_acc = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate_accuracy(model, v, cfg.batch_size)?.0),
            _ => None,
        };
        history.push(EpochStats {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
        });
    }
    Ok(history)
}
