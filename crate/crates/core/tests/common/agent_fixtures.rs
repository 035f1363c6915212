//! Bandit environment and buffer fixtures for the agent.

use autosculpt::agent::{act, compute_reward, ActorCritic, AgentError, Environment, ReplayBuffer, Transition};
use autosculpt::encoder::GraphInputs;
use autosculpt::graph::build_graph;
use autosculpt::model::{cnn_from_channels, CnnLayer, Metrics, ModelIR};
use autosculpt::patterns::{sample_assignment, PatternAssignment, PatternLibrary};
use rand_chacha::ChaCha8Rng;

/// Keep-all on every unit pays 1, anything else pays 0.
pub struct Bandit {
    pub calls: usize,
}

impl Environment for Bandit {
    fn evaluate(&mut self, a: &PatternAssignment) -> Result<Metrics, AgentError> {
        self.calls += 1;
        let hit = a.0.values().flatten().all(|&i| i == 0);
        Ok(Metrics {
            flops_reduction: 0.0,
            accuracy: if hit { 1.0 } else { 0.0 },
        })
    }
}

/// One 3x3 conv with two filters on a 1x4x4 input.
pub fn bandit_model() -> ModelIR {
    cnn_from_channels([1, 4, 4], &[CnnLayer::plain(2, 1)], 2, 0).expect("tiny cnn")
}

/// Fill a buffer by acting with `ac` from a chain of states, rewarding with
/// the bandit rule.
pub fn filled_buffer(
    ac: &ActorCritic,
    model: &ModelIR,
    lib: &PatternLibrary,
    capacity: usize,
    graph_seed: u64,
    rng: &mut ChaCha8Rng,
) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(capacity);
    let mut state = PatternAssignment::uniform(model, 0);
    let mut step = 0;
    while !buf.is_full() {
        let g = build_graph(model, lib, &state, graph_seed).unwrap();
        let probs = act(&ac.state(&GraphInputs::from_graph(&g).unwrap()).unwrap(), ac).unwrap();
        let s = sample_assignment(&probs, model, lib, false, rng).unwrap();
        let hit = s.assignment.0.values().flatten().all(|&i| i == 0);
        let done = step == 3;
        buf.push(Transition {
            state: state.clone(),
            probs,
            assignment: s.assignment.clone(),
            choices: s.choices,
            log_prob: s.log_prob,
            reward: compute_reward(0.0, hit as u8 as f64, 0.0).unwrap(),
            episode: 0,
            step,
            done,
        });
        state = if done { PatternAssignment::uniform(model, 0) } else { s.assignment };
        step = if done { 0 } else { step + 1 };
    }
    buf
}
