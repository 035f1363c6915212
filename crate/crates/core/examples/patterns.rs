//! The default pattern library, a sampled assignment for the demo CNN and
//! the realized masks.

use autosculpt::model::demo_cnn;
use autosculpt::patterns::{realize_masks, sample_assignment, PatternLibrary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let library = PatternLibrary::default_library(3, 6)?;
    for (i, p) in library.patterns().iter().enumerate() {
        let rows: Vec<String> = p.to_rows().iter().map(|r| r.iter().map(|b| if *b == 1 { '#' } else { '.' }).collect()).collect();
        println!("pattern {i} keeps {}/9: {}", p.kept(), rows.join(" "));
    }
    let model = demo_cnn(0);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let probs = [0.3, 0.1, 0.2, 0.15, 0.15, 0.1];
    let sample = sample_assignment(&probs, &model, &library, true, &mut rng)?;
    println!("log-probability of the draw {:.4}", sample.log_prob);
    let masks = realize_masks(&model, &library, &sample.assignment)?;
    for (name, choice) in &sample.assignment.0 {
        let mask = masks.get(name).expect("mask per prunable operator");
        println!("{name}: patterns {choice:?}, keeps {}/{}", mask.sum(), mask.numel());
    }
    Ok(())
}
