//! Two-pattern bandit: keeping every weight pays 1, dropping pays 0. The
//! policy should put most of its mass on the keep-all pattern within a few
//! updates.

use autosculpt::agent::{run_search, AgentError, AlphaSchedule, Environment, SearchConfig};
use autosculpt::model::{cnn_from_channels, CnnLayer, ConstraintSet, Metrics};
use autosculpt::patterns::{PatternAssignment, PatternLibrary};

struct Bandit;

impl Environment for Bandit {
    fn evaluate(&mut self, a: &PatternAssignment) -> Result<Metrics, AgentError> {
        let hit = a.0.values().flatten().all(|&i| i == 0);
        Ok(Metrics {
            flops_reduction: 0.0,
            accuracy: if hit { 1.0 } else { 0.0 },
        })
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = cnn_from_channels([1, 4, 4], &[CnnLayer::plain(2, 1)], 2, 0)?;
    let library = PatternLibrary::default_library(3, 2)?;
    let config = SearchConfig {
        episodes: 20 * 32,
        alpha: AlphaSchedule::Constant { value: 0.0 },
        ..SearchConfig::default()
    };
    for seed in [1u64, 2, 3] {
        let out = run_search(&model, &library, &ConstraintSet::new(0.0, 0.0), &mut Bandit, &config, seed)?;
        let p0: Vec<String> = out.start_probs.iter().map(|p| format!("{:.3}", p[0])).collect();
        println!("seed {seed}: F[0] after each update {}", p0.join(" "));
    }
    Ok(())
}
