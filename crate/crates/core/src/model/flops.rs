use serde::{Deserialize, Serialize};

use super::{Masks, ModelError, ModelIR, OpKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorFlops {
    pub id: String,
    pub dense_macs: u64,
    pub effective_macs: u64,
}

/// Multiply-accumulate counts of one forward pass over a single sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub dense_macs: u64,
    pub effective_macs: u64,
    pub per_operator: Vec<OperatorFlops>,
    pub flops_reduction: f64,
}

/// MAC accounting per sample.
///
/// Every weight element of a conv layer takes part in `H'*W'` MACs, so the
/// effective count of a masked layer is `kept * H' * W'`, which equals the
/// dense count times the realized keep fraction. Linear: one MAC per weight.
/// Attention: `3*T*d*d_k` projection MACs (scaled per projection mask) plus
/// `2*T^2*d_k` for scores and value mixing, which no weight mask touches.
/// MLP block: `T` MACs per weight element.
pub fn count_flops(model: &ModelIR, masks: Option<&Masks>) -> Result<FlopsReport, ModelError> {
    let shapes = model.output_shapes()?;
    let tokens = match model.kind() {
        super::ModelKind::Transformer => model.input_shape[0] as u64,
        super::ModelKind::Cnn => 1,
    };
    let mut per_operator = Vec::with_capacity(model.operators.len());
    for (op, out_shape) in model.operators.iter().zip(&shapes) {
        let uses_per_weight: u64 = match &op.kind {
            OpKind::Conv2d(_) => (out_shape[1] * out_shape[2]) as u64,
            OpKind::Linear(_) => 1,
            OpKind::Attention(_) | OpKind::MlpBlock(_) => tokens,
        };
        let mut dense = 0u64;
        let mut effective = 0u64;
        for slot in op.weight_slots() {
            let total: usize = slot.shape.iter().product();
            let kept = masks.and_then(|m| m.kept(&slot.name)).unwrap_or(total);
            dense += total as u64 * uses_per_weight;
            effective += kept as u64 * uses_per_weight;
        }
        if let OpKind::Attention(p) = &op.kind {
            let mix = 2 * tokens * tokens * p.head_dim as u64;
            dense += mix;
            effective += mix;
        }
        per_operator.push(OperatorFlops {
            id: op.id.clone(),
            dense_macs: dense,
            effective_macs: effective,
        });
    }
    let dense_macs: u64 = per_operator.iter().map(|o| o.dense_macs).sum();
    let effective_macs: u64 = per_operator.iter().map(|o| o.effective_macs).sum();
    let flops_reduction = if dense_macs == 0 {
        0.0
    } else {
        1.0 - effective_macs as f64 / dense_macs as f64
    };
    Ok(FlopsReport {
        dense_macs,
        effective_macs,
        per_operator,
        flops_reduction,
    })
}
