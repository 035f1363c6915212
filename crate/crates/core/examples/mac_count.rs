//! Per-operator MAC accounting for both demo models, dense and under a
//! pattern assignment.

use autosculpt::model::{count_flops, demo_cnn, demo_transformer};
use autosculpt::patterns::{realize_masks, PatternAssignment, PatternLibrary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let library = PatternLibrary::default_library(3, 6)?;
    for model in [demo_cnn(0), demo_transformer(0)] {
        let assignment = PatternAssignment::uniform(&model, 4);
        let masks = realize_masks(&model, &library, &assignment)?;
        let report = count_flops(&model, Some(&masks))?;
        println!("{:?}: {} dense MACs, {} effective, reduction {:.4}", model.kind(), report.dense_macs, report.effective_macs, report.flops_reduction);
        for op in &report.per_operator {
            println!("  {:<8} {:>8} -> {:>8}", op.id, op.dense_macs, op.effective_macs);
        }
    }
    Ok(())
}
