//! Policy search over pattern assignments: actor-critic heads on top of the
//! graph encoder, reward shaping, a replay buffer and clipped policy updates.

mod ppo;
mod search;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{encode_on_tape, Activation, EncoderConfig, EncoderError, EncoderParams, GraphInputs};
use crate::graph::GraphError;
use crate::model::{io, ModelError};
use crate::numerics::{Tape, Tensor, TensorError, Var};
use crate::patterns::{PatternAssignment, PatternError};

pub use ppo::{advantages, ppo_update, ppo_update_with_advantages, PpoConfig, PpoOptimizers, PreparedBatch, UpdateStats};
pub use search::{
    run_model_search, run_search, Environment, ModelEnvironment, SearchConfig, SearchOutcome, SearchRecord,
};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;
const ACTOR_STREAM: u64 = 0x6163_746f_72;
const CRITIC_STREAM: u64 = 0x6372_6974_6963;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("replay buffer holds {len} of {capacity} transitions")]
    BufferNotFull { len: usize, capacity: usize },
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("no rewards to discount")]
    EmptyRewards,
    #[error("invalid constraint set")]
    InvalidConstraints,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Two-layer perceptron with a tanh hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: Tensor::uniform(&[input, hidden], 1.0 / (input as f64).sqrt(), rng),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::uniform(&[hidden, output], 1.0 / (hidden as f64).sqrt(), rng),
            b2: Tensor::zeros(&[output]),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors().into_iter().map(|t| tape.param(t.clone())).collect()
    }

    /// `tanh(x W1 + b1) W2 + b2` for `x: [batch, input]`.
    pub fn forward_on_tape<'t>(x: Var<'t>, vars: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
        x.matmul(vars[0])?.add(vars[1])?.tanh().matmul(vars[2])?.add(vars[3])
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        ["w1", "b1", "w2", "b2"]
            .iter()
            .map(|n| format!("{prefix}.{n}"))
            .zip(self.tensors())
            .collect()
    }

    fn from_named(map: &BTreeMap<String, Tensor>, prefix: &str) -> Result<Self, AgentError> {
        let get = |n: &str| {
            map.get(&format!("{prefix}.{n}"))
                .cloned()
                .ok_or_else(|| AgentError::Config(format!("checkpoint lacks `{prefix}.{n}`")))
        };
        Ok(Self {
            w1: get("w1")?,
            b1: get("b1")?,
            w2: get("w2")?,
            b2: get("b2")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCriticConfig {
    pub encoder: EncoderConfig,
    pub hidden: usize,
    /// Softmax temperature applied to the tanh head.
    pub temperature: f64,
}

impl Default for ActorCriticConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            hidden: 128,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// Encoder plus policy and value heads. The encoder belongs to the policy
/// side: the value head reads a detached copy of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub encoder: EncoderParams,
    pub actor: Mlp,
    pub critic: Mlp,
    pub temperature: f64,
}

impl ActorCritic {
    pub fn new(config: &ActorCriticConfig, patterns: usize, seed: u64) -> Self {
        let encoder = EncoderParams::init(&config.encoder, seed);
        let state = config.encoder.out_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ACTOR_STREAM);
        let actor = Mlp::init(state, config.hidden, patterns, &mut rng);
        rng.set_stream(CRITIC_STREAM);
        rng.set_word_pos(0);
        let critic = Mlp::init(state, config.hidden, 1, &mut rng);
        Self {
            encoder,
            actor,
            critic,
            temperature: config.temperature,
        }
    }

    pub fn pattern_count(&self) -> usize {
        self.actor.b2.numel()
    }

    /// Encoder then actor tensors, the set the policy loss updates.
    pub fn policy_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.actor.tensors_mut());
        v
    }

    /// State vector of a prepared graph.
    pub fn state(&self, inputs: &GraphInputs) -> Result<Vec<f64>, AgentError> {
        let tape = Tape::new();
        let vars: Vec<Var> = self.encoder.tensors().into_iter().map(|t| tape.constant(t.clone())).collect();
        let (g, _) = encode_on_tape(&tape, inputs, &vars, self.encoder.activation)?;
        let out = g.value().data().to_vec();
        Ok(out)
    }

    /// Tanh head outputs for one state.
    pub fn raw_outputs(&self, g: &[f64]) -> Result<Vec<f64>, AgentError> {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, g.len()], g.to_vec())?);
        let vars: Vec<Var> = self.actor.tensors().into_iter().map(|t| tape.constant(t.clone())).collect();
        let raw = Mlp::forward_on_tape(x, &vars)?.tanh();
        let out = raw.value().data().to_vec();
        Ok(out)
    }

    pub fn value(&self, g: &[f64]) -> Result<f64, AgentError> {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, g.len()], g.to_vec())?);
        let vars: Vec<Var> = self.critic.tensors().into_iter().map(|t| tape.constant(t.clone())).collect();
        let v = Mlp::forward_on_tape(x, &vars)?.value().data()[0];
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let mut named: Vec<(String, &Tensor)> = self.encoder.named();
        named.extend(self.actor.named("actor"));
        named.extend(self.critic.named("critic"));
        let temp = Tensor::scalar(self.temperature);
        named.push(("policy.temperature".into(), &temp));
        io::save_tensors(path, named.iter().map(|(n, t)| (n.as_str(), *t)))?;
        Ok(())
    }

    pub fn load(path: &Path, activation: Activation) -> Result<Self, AgentError> {
        let map = io::load_tensors(path)?;
        let temperature = map
            .get("policy.temperature")
            .map(|t| t.data()[0])
            .unwrap_or(DEFAULT_TEMPERATURE);
        Ok(Self {
            encoder: EncoderParams::from_named(&map, activation)?,
            actor: Mlp::from_named(&map, "actor")?,
            critic: Mlp::from_named(&map, "critic")?,
            temperature,
        })
    }
}

/// Pattern distribution for state `g`: softmax of the tanh head divided by
/// the temperature.
pub fn act(g: &[f64], ac: &ActorCritic) -> Result<Vec<f64>, AgentError> {
    let raw = ac.raw_outputs(g)?;
    Ok(softmax_with_temperature(&raw, ac.temperature))
}

pub fn softmax_with_temperature(raw: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = raw.iter().map(|r| r / temperature).collect();
    crate::encoder::softmax_slice(&scaled)
}

/// `alpha * flops_reduction + (1 - alpha) * accuracy`.
pub fn compute_reward(flops_reduction: f64, accuracy: f64, alpha: f64) -> Result<f64, AgentError> {
    for (name, value) in [("flops_reduction", flops_reduction), ("accuracy", accuracy), ("alpha", alpha)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(AgentError::OutOfRange { name, value });
        }
    }
    Ok(alpha * flops_reduction + (1.0 - alpha) * accuracy)
}

/// Backward recursion `Dr_t = r_t + gamma * Dr_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Result<Vec<f64>, AgentError> {
    if rewards.is_empty() {
        return Err(AgentError::EmptyRewards);
    }
    let mut out = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        running = r + gamma * running;
        *o = running;
    }
    Ok(out)
}

/// Reward trade-off weight per episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AlphaSchedule {
    Constant { value: f64 },
    /// Linear from `start` at episode 0 to `end` at `episodes`, then held.
    Linear { start: f64, end: f64, episodes: usize },
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule::Constant { value: 0.5 }
    }
}

pub fn alpha_schedule(episode: usize, schedule: &AlphaSchedule) -> f64 {
    match *schedule {
        AlphaSchedule::Constant { value } => value,
        AlphaSchedule::Linear { start, end, episodes } => {
            if episodes == 0 {
                return end;
            }
            let t = (episode as f64 / episodes as f64).min(1.0);
            start * (1.0 - t) + end * t
        }
    }
}

/// One inner step of the search.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Assignment the state graph was built from.
    pub state: PatternAssignment,
    pub probs: Vec<f64>,
    pub assignment: PatternAssignment,
    /// Chosen index per sampling unit.
    pub choices: Vec<usize>,
    pub log_prob: f64,
    pub reward: f64,
    pub episode: usize,
    pub step: usize,
    /// Last step of its episode.
    pub done: bool,
}

impl Transition {
    /// Log-probability recomputed from the stored distribution.
    pub fn recomputed_log_prob(&self) -> f64 {
        self.choices.iter().map(|&c| self.probs[c].ln()).sum()
    }
}

/// Bounded transition store, emptied after every update.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
        }
    }

    /// Appends; returns `false` (and drops the item) when already full.
    pub fn push(&mut self, t: Transition) -> bool {
        if self.is_full() {
            return false;
        }
        self.items.push(t);
        true
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.items
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    /// Discounted returns, restarting after every `done` transition.
    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.items.len()];
        let mut running = 0.0;
        for (o, t) in out.iter_mut().zip(&self.items).rev() {
            if t.done {
                running = 0.0;
            }
            running = t.reward + gamma * running;
            *o = running;
        }
        out
    }
}
