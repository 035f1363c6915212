use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ConvParams, ModelIR, OpKind, OperatorSpec, SlotKind};
use crate::numerics::Tensor;

/// Uniform initialization scaled by fan-in; every weight gets its own stream.
pub fn init_weights(operators: &[OperatorSpec], seed: u64) -> BTreeMap<String, Tensor> {
    let mut weights = BTreeMap::new();
    let slots = operators.iter().flat_map(|o| o.weight_slots());
    for (i, slot) in slots.enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let (fan_in, gain) = match slot.kind {
            SlotKind::ConvKernel => (slot.shape[1..].iter().product::<usize>(), 6.0),
            SlotKind::Matrix => (slot.shape[0], 3.0),
        };
        let bound = (gain / fan_in as f64).sqrt();
        weights.insert(slot.name, Tensor::uniform(&slot.shape, bound, &mut rng));
    }
    weights
}

/// One 3x3 conv layer of a plain CNN.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnLayer {
    pub out_channels: usize,
    pub stride: usize,
    pub residual_group: Option<String>,
    pub skip_from: Option<String>,
}

impl CnnLayer {
    pub fn plain(out_channels: usize, stride: usize) -> Self {
        Self {
            out_channels,
            stride,
            residual_group: None,
            skip_from: None,
        }
    }
}

/// Conv layers `conv1..convN` (3x3, padding 1) followed by a fixed linear head.
pub fn cnn_from_channels(
    input_shape: [usize; 3],
    layers: &[CnnLayer],
    class_count: usize,
    seed: u64,
) -> Result<ModelIR, super::ModelError> {
    let [mut c, mut h, mut w] = input_shape;
    let mut ops = Vec::with_capacity(layers.len() + 1);
    for (i, l) in layers.iter().enumerate() {
        ops.push(OperatorSpec {
            id: format!("conv{}", i + 1),
            kind: OpKind::Conv2d(ConvParams {
                in_channels: c,
                out_channels: l.out_channels,
                kernel: 3,
                stride: l.stride,
                padding: 1,
                skip_from: l.skip_from.clone(),
            }),
            residual_group: l.residual_group.clone(),
            prunable: true,
        });
        c = l.out_channels;
        h = (h + 2 - 3) / l.stride + 1;
        w = (w + 2 - 3) / l.stride + 1;
    }
    ops.push(OperatorSpec::linear("head", c * h * w, class_count, false));
    let weights = init_weights(&ops, seed);
    ModelIR::new(input_shape.to_vec(), class_count, ops, weights)
}

/// Three 3x3 conv layers with 8/16/16 filters on a 1x16x16 input. `conv3`
/// adds the output of `conv2` back in, so the two share a residual group.
pub fn demo_cnn(seed: u64) -> ModelIR {
    demo_cnn_for([1, 16, 16], 4, seed)
}

pub(crate) fn demo_cnn_for(input_shape: [usize; 3], class_count: usize, seed: u64) -> ModelIR {
    let layers = [
        CnnLayer::plain(8, 1),
        CnnLayer {
            residual_group: Some("res1".into()),
            ..CnnLayer::plain(16, 2)
        },
        CnnLayer {
            residual_group: Some("res1".into()),
            skip_from: Some("conv2".into()),
            ..CnnLayer::plain(16, 1)
        },
    ];
    cnn_from_channels(input_shape, &layers, class_count, seed).expect("demo CNN is well formed")
}

/// Two encoder blocks (d = 32, d_k = 16, T = 16, MLP hidden 64) and a head.
pub fn demo_transformer(seed: u64) -> ModelIR {
    demo_transformer_for(4, seed)
}

pub(crate) fn demo_transformer_for(classes: usize, seed: u64) -> ModelIR {
    let (t, d, dk, hidden) = (16, 32, 16, 64);
    let ops = vec![
        OperatorSpec::attention("enc0_attn", d, dk),
        OperatorSpec::mlp_block("enc0_mlp", d, hidden),
        OperatorSpec::attention("enc1_attn", d, dk),
        OperatorSpec::mlp_block("enc1_mlp", d, hidden),
        OperatorSpec::linear("head", d, classes, false),
    ];
    let weights = init_weights(&ops, seed);
    ModelIR::new(vec![t, d], classes, ops, weights).expect("demo transformer is well formed")
}
