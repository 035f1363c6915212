//! Small random models for property tests.

use autosculpt::model::{cnn_from_channels, init_weights, CnnLayer, ModelIR, OperatorSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// CNN with `channels.len()` conv layers; `groups[l]` names the residual
/// group of layer `l`, if any.
pub fn cnn_with_groups(channels: &[usize], groups: &[Option<usize>], seed: u64) -> ModelIR {
    let layers: Vec<CnnLayer> = channels
        .iter()
        .zip(groups)
        .map(|(&c, g)| CnnLayer {
            residual_group: g.map(|g| format!("g{g}")),
            ..CnnLayer::plain(c, 1)
        })
        .collect();
    cnn_from_channels([1, 5, 5], &layers, 2, seed).expect("valid cnn")
}

/// `encoders` attention + MLP pairs and a linear head.
pub fn transformer(encoders: usize, tokens: usize, d: usize, dk: usize, hidden: usize, seed: u64) -> ModelIR {
    let mut ops = Vec::new();
    for e in 0..encoders {
        ops.push(OperatorSpec::attention(&format!("enc{e}_attn"), d, dk));
        ops.push(OperatorSpec::mlp_block(&format!("enc{e}_mlp"), d, hidden));
    }
    ops.push(OperatorSpec::linear("head", d, 3, false));
    let weights = init_weights(&ops, seed);
    ModelIR::new(vec![tokens, d], 3, ops, weights).expect("valid transformer")
}

pub fn random_transformer(rng: &mut ChaCha8Rng) -> ModelIR {
    let d = rng.gen_range(4..=10);
    transformer(
        rng.gen_range(1..=3),
        rng.gen_range(2..=5),
        d,
        rng.gen_range(1..=d),
        rng.gen_range(2..=12),
        rng.gen(),
    )
}
