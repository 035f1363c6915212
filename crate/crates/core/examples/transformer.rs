//! The demo Transformer: graph size, MACs under a pattern assignment, and
//! agreement between masked and pruned forward passes.

use autosculpt::graph::build_graph;
use autosculpt::model::{count_flops, demo_transformer, forward};
use autosculpt::numerics::Tensor;
use autosculpt::patterns::{apply_pruning, realize_masks, sample_assignment, PatternLibrary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = demo_transformer(0);
    let library = PatternLibrary::default_library(3, 6)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sample = sample_assignment(&[1.0 / 6.0; 6], &model, &library, false, &mut rng)?;
    let graph = build_graph(&model, &library, &sample.assignment, 0)?;
    println!("{} nodes, {} edges", graph.nodes.len(), graph.edges.len());
    let masks = realize_masks(&model, &library, &sample.assignment)?;
    let report = count_flops(&model, Some(&masks))?;
    println!("MACs {} -> {} (reduction {:.4})", report.dense_macs, report.effective_macs, report.flops_reduction);
    let x = Tensor::uniform(&[4, 16, 32], 1.0, &mut rng);
    let masked = forward(&model, &x, Some(&masks))?;
    let pruned = forward(&apply_pruning(&model, &library, &sample.assignment)?, &x, None)?;
    println!("masked and pruned logits identical: {}", masked.bit_eq(&pruned));
    Ok(())
}
