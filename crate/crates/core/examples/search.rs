//! Pattern search on a briefly trained demo CNN with a small episode budget.

use autosculpt::agent::{run_model_search, SearchConfig};
use autosculpt::harness::{synth_dataset, RunConfig, SynthSpec};
use autosculpt::model::{demo_cnn, evaluate_accuracy, train, ConstraintSet};
use autosculpt::patterns::PatternLibrary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_dataset(&SynthSpec::default())?;
    let mut model = demo_cnn(0);
    train(&mut model, &data.train, &RunConfig::default().train_schedule(), None)?;
    let dense = evaluate_accuracy(&model, &data.val, None)?;
    let library = PatternLibrary::default_library(3, 6)?;
    let constraints = ConstraintSet::new(0.5, dense - 0.1);
    let config = SearchConfig { episodes: 24, ..SearchConfig::default() };
    let out = run_model_search(&model, &library, &constraints, &data.val, &config, 0)?;
    println!("dense accuracy {dense:.3}");
    for r in out.log.iter().filter(|r| r.step == 0).take(8) {
        println!("episode {:>3}: reduction {:.3}, accuracy {:.3}, reward {:.3}", r.episode, r.flops_reduction, r.accuracy, r.reward);
    }
    println!(
        "best: {:?} reduction {:.3} accuracy {:.3} constraints met {} after {} episodes",
        out.best.0, out.best_metrics.flops_reduction, out.best_metrics.accuracy, out.constraints_met, out.episodes_run
    );
    Ok(())
}
