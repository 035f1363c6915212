use std::collections::BTreeMap;
use std::rc::Rc;

use rayon::prelude::*;

use super::{Masks, ModelError, ModelIR, ModelKind, OpKind, Split};
use crate::numerics::{Tape, Tensor, Var};

const EVAL_CHUNK: usize = 64;

/// Forward pass on an existing tape. `weights` holds one bound variable per
/// weight name; when `masks` is given each masked weight is zeroed at its
/// dropped positions before use.
pub fn forward_on_tape<'t>(
    model: &ModelIR,
    weights: &BTreeMap<String, Var<'t>>,
    input: Var<'t>,
    masks: Option<&Masks>,
) -> Result<Var<'t>, ModelError> {
    let w = |name: &str| -> Result<Var<'t>, ModelError> {
        let v = *weights
            .get(name)
            .ok_or_else(|| ModelError::MissingWeight(name.to_string()))?;
        match masks.and_then(|m| m.get(name)) {
            Some(mask) => Ok(v.mask(Rc::new(mask.clone()))?),
            None => Ok(v),
        }
    };
    let batch = input.shape()[0];
    let last = model.operators.len() - 1;
    let mut outputs: BTreeMap<&str, Var<'t>> = BTreeMap::new();
    let mut x = input;
    let tokens = match model.kind() {
        ModelKind::Transformer => {
            let (t, d) = (model.input_shape[0], model.input_shape[1]);
            x = x.reshape(&[batch * t, d])?;
            t
        }
        ModelKind::Cnn => 0,
    };
    let mut pooled = false;
    for (i, op) in model.operators.iter().enumerate() {
        x = match &op.kind {
            OpKind::Conv2d(p) => {
                let mut y = x.conv2d(w(&op.id)?, p.stride, p.padding)?.relu();
                if let Some(src) = &p.skip_from {
                    let skip = *outputs
                        .get(src.as_str())
                        .ok_or_else(|| ModelError::UnknownOperator(src.clone()))?;
                    y = y.add(skip)?;
                }
                y
            }
            OpKind::Linear(_) => {
                if model.kind() == ModelKind::Cnn && x.shape().len() > 2 {
                    let flat: usize = x.shape()[1..].iter().product();
                    x = x.reshape(&[batch, flat])?;
                } else if model.kind() == ModelKind::Transformer && !pooled {
                    let seg: Rc<Vec<usize>> = Rc::new((0..batch * tokens).map(|r| r / tokens).collect());
                    x = x.segment_sum(seg, batch)?.scale(1.0 / tokens as f64);
                    pooled = true;
                }
                let y = x.matmul(w(&op.id)?)?;
                if i == last {
                    y
                } else {
                    y.relu()
                }
            }
            OpKind::Attention(p) => {
                let q = x.matmul(w(&format!("{}.q", op.id))?)?;
                let k = x.matmul(w(&format!("{}.k", op.id))?)?;
                let v = x.matmul(w(&format!("{}.v", op.id))?)?;
                let scale = 1.0 / (p.head_dim as f64).sqrt();
                let mut heads = Vec::with_capacity(batch);
                for b in 0..batch {
                    let qb = q.slice_rows(b * tokens, tokens)?;
                    let kb = k.slice_rows(b * tokens, tokens)?;
                    let vb = v.slice_rows(b * tokens, tokens)?;
                    let scores = qb.matmul(kb.transpose()?)?.scale(scale).softmax(1)?;
                    heads.push(scores.matmul(vb)?);
                }
                let attended = Var::concat_rows(&heads)?.pad_cols(p.embed_dim)?;
                x.add(attended)?
            }
            OpKind::MlpBlock(_) => {
                let hidden = x.matmul(w(&format!("{}.w1", op.id))?)?.relu();
                x.add(hidden.matmul(w(&format!("{}.w2", op.id))?)?)?
            }
        };
        outputs.insert(op.id.as_str(), x);
    }
    Ok(x)
}

fn check_batch(model: &ModelIR, batch: &Tensor) -> Result<(), ModelError> {
    if batch.shape().len() != model.input_shape.len() + 1 || batch.shape()[1..] != model.input_shape[..] {
        return Err(ModelError::BatchShape {
            expected: model.input_shape.clone(),
            found: batch.shape().to_vec(),
        });
    }
    Ok(())
}

/// Logits `[batch, class_count]` for a batch `[batch, ..input_shape]`.
pub fn forward(model: &ModelIR, batch: &Tensor, masks: Option<&Masks>) -> Result<Tensor, ModelError> {
    check_batch(model, batch)?;
    if let Some(m) = masks {
        if let Some(name) = m.0.keys().find(|k| !model.weights.contains_key(*k)) {
            return Err(ModelError::UnknownOperator(name.clone()));
        }
    }
    let tape = Tape::new();
    let weights: BTreeMap<String, Var> = model
        .weights
        .iter()
        .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
        .collect();
    let x = tape.constant(batch.clone());
    let logits = forward_on_tape(model, &weights, x, masks)?;
    let out = (*logits.value()).clone();
    Ok(out)
}

/// Index of the first maximum of every row.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Top-1 accuracy. Chunks are evaluated in parallel; the result is an
/// order-independent count.
pub fn evaluate_accuracy(model: &ModelIR, split: &Split, masks: Option<&Masks>) -> Result<f64, ModelError> {
    if split.is_empty() {
        return Err(ModelError::EmptySplit("evaluation"));
    }
    let n = split.len();
    let starts: Vec<usize> = (0..n).step_by(EVAL_CHUNK).collect();
    let correct: usize = starts
        .par_iter()
        .map(|&s| -> Result<usize, ModelError> {
            let len = EVAL_CHUNK.min(n - s);
            let batch = split.inputs.slice_leading(s, len)?;
            let preds = argmax_rows(&forward(model, &batch, masks)?);
            Ok(preds
                .iter()
                .zip(&split.labels[s..s + len])
                .filter(|(p, l)| p == l)
                .count())
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / n as f64)
}
