//! Encode the demo CNN graph into its 256-dim state and show how the state
//! moves when one layer changes pattern.

use autosculpt::encoder::{encode_with_trace, EncoderConfig, EncoderParams};
use autosculpt::graph::build_graph;
use autosculpt::model::demo_cnn;
use autosculpt::patterns::{PatternAssignment, PatternLibrary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = demo_cnn(0);
    let library = PatternLibrary::default_library(3, 6)?;
    let params = EncoderParams::init(&EncoderConfig::default(), 1);
    let base = PatternAssignment::uniform(&model, 0);
    let (g0, trace) = encode_with_trace(&build_graph(&model, &library, &base, 0)?, &params)?;
    let worst = trace.row_sums().iter().flatten().fold(0.0f64, |m, s| m.max((s - 1.0).abs()));
    println!("state dim {}, attention row sums within {worst:.1e} of 1", g0.len());
    let mut changed = base.clone();
    changed.0.insert("conv1".into(), vec![3]);
    let (g1, _) = encode_with_trace(&build_graph(&model, &library, &changed, 0)?, &params)?;
    let dist = g0.iter().zip(&g1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    println!("first entries {:.4?}", &g0[..6]);
    println!("distance after switching conv1 to pattern 3: {dist:.4}");
    Ok(())
}
