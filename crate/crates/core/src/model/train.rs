use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward_on_tape, Masks, ModelError, ModelIR, Split};
use crate::numerics::{apply_mask, Sgd, SgdConfig, Tape, Tensor, Var};

/// SGD schedule with multi-step learning-rate decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplicative decay applied at each milestone.
    pub gamma: f64,
    pub milestones: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainSchedule {
    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.gamma.powi(passed as i32)
    }
}

/// Mini-batch SGD over `split`, returning the mean loss of every epoch.
///
/// With `masks`, the forward pass uses masked weights and gradients are
/// zeroed at masked positions before each update, so weights that start at
/// zero there stay exactly zero.
pub fn train(
    model: &mut ModelIR,
    split: &Split,
    schedule: &TrainSchedule,
    masks: Option<&Masks>,
) -> Result<Vec<f64>, ModelError> {
    if split.is_empty() {
        return Err(ModelError::EmptySplit("training"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut sgd = Sgd::new(SgdConfig {
        lr: schedule.lr,
        momentum: schedule.momentum,
        weight_decay: schedule.weight_decay,
    });
    let names: Vec<String> = model.weights.keys().cloned().collect();
    let mut order: Vec<usize> = (0..split.len()).collect();
    let mut losses = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        sgd.set_lr(schedule.lr_at(epoch));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(schedule.batch_size.max(1)) {
            let batch = split.subset(chunk)?;
            let tape = Tape::new();
            let vars: BTreeMap<String, Var> = names
                .iter()
                .map(|n| (n.clone(), tape.param(model.weights[n].clone())))
                .collect();
            let x = tape.constant(batch.inputs);
            let logits = forward_on_tape(model, &vars, x, masks)?;
            let loss = logits.cross_entropy(&batch.labels)?;
            total += loss.value().data()[0] * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = names
                .iter()
                .map(|n| {
                    let g = grads.wrt(vars[n]);
                    match masks.and_then(|m| m.get(n)) {
                        Some(mask) => apply_mask(&g, mask),
                        None => g,
                    }
                })
                .collect();
            let mut params: Vec<&mut Tensor> = model.weights.values_mut().collect();
            sgd.step(&mut params, &grads)?;
        }
        losses.push(total / split.len() as f64);
    }
    Ok(losses)
}

/// Zero the masked weights, then retrain with frozen masks.
pub fn fine_tune(
    model: &ModelIR,
    masks: &Masks,
    split: &Split,
    schedule: &TrainSchedule,
) -> Result<ModelIR, ModelError> {
    if split.is_empty() {
        return Err(ModelError::EmptySplit("training"));
    }
    let mut tuned = model.clone();
    for (name, mask) in &masks.0 {
        let w = tuned
            .weights
            .get_mut(name)
            .ok_or_else(|| ModelError::UnknownOperator(name.clone()))?;
        *w = apply_mask(w, mask);
    }
    train(&mut tuned, split, schedule, Some(masks))?;
    Ok(tuned)
}
