use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{ActorCritic, AgentError, Mlp, ReplayBuffer};
use crate::encoder::{encode_on_tape, GraphInputs};
use crate::graph::build_graph;
use crate::model::ModelIR;
use crate::numerics::{Adam, AdamConfig, Tape, Tensor, Var};
use crate::patterns::{PatternAssignment, PatternLibrary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub clip: f64,
    pub update_iters: usize,
    pub buffer_capacity: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            actor_lr: 3e-3,
            critic_lr: 1e-3,
            gamma: 0.9,
            clip: 0.2,
            update_iters: 15,
            buffer_capacity: 32,
        }
    }
}

/// Adam state kept across updates: one optimizer for encoder plus actor,
/// one for the critic.
#[derive(Debug, Clone)]
pub struct PpoOptimizers {
    pub policy: Adam,
    pub critic: Adam,
}

impl PpoOptimizers {
    pub fn new(config: &PpoConfig) -> Self {
        Self {
            policy: Adam::new(AdamConfig::with_lr(config.actor_lr)),
            critic: Adam::new(AdamConfig::with_lr(config.critic_lr)),
        }
    }
}

/// Everything an update needs, with graphs already rebuilt. Transitions
/// that start from the same assignment share one graph.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    /// Distinct state graphs.
    pub inputs: Vec<GraphInputs>,
    /// Index into `inputs` for every transition.
    pub state_of: Vec<usize>,
    pub choices: Vec<Vec<usize>>,
    pub old_log_probs: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PreparedBatch {
    pub fn from_buffer(
        buffer: &ReplayBuffer,
        model: &ModelIR,
        library: &PatternLibrary,
        graph_seed: u64,
        gamma: f64,
    ) -> Result<Self, AgentError> {
        let mut inputs = Vec::new();
        let mut seen: HashMap<&PatternAssignment, usize> = HashMap::new();
        let mut state_of = Vec::with_capacity(buffer.len());
        for t in buffer.transitions() {
            let idx = match seen.get(&t.state) {
                Some(&i) => i,
                None => {
                    let graph = build_graph(model, library, &t.state, graph_seed)?;
                    inputs.push(GraphInputs::from_graph(&graph)?);
                    seen.insert(&t.state, inputs.len() - 1);
                    inputs.len() - 1
                }
            };
            state_of.push(idx);
        }
        Ok(Self {
            inputs,
            state_of,
            choices: buffer.transitions().iter().map(|t| t.choices.clone()).collect(),
            old_log_probs: buffer.transitions().iter().map(|t| t.log_prob).collect(),
            returns: buffer.returns(gamma),
        })
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.state_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state_of.is_empty()
    }

    /// One transition per graph, in order.
    pub fn unshared(inputs: Vec<GraphInputs>, choices: Vec<Vec<usize>>, old_log_probs: Vec<f64>, returns: Vec<f64>) -> Self {
        Self {
            state_of: (0..inputs.len()).collect(),
            inputs,
            choices,
            old_log_probs,
            returns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Largest `|ratio - 1|` seen on the first pass.
    pub first_pass_ratio_dev: f64,
    pub actor_loss: Vec<f64>,
    pub critic_loss: Vec<f64>,
}

/// Advantages `Dr - V(g)` with the current critic, detached.
pub fn advantages(ac: &ActorCritic, batch: &PreparedBatch) -> Result<Vec<f64>, AgentError> {
    let values = batch
        .inputs
        .iter()
        .map(|inp| ac.value(&ac.state(inp)?))
        .collect::<Result<Vec<f64>, AgentError>>()?;
    Ok(batch.state_of.iter().zip(&batch.returns).map(|(&s, r)| r - values[s]).collect())
}

/// Clipped policy update on a full buffer, then clears it.
pub fn ppo_update(
    buffer: &mut ReplayBuffer,
    ac: &mut ActorCritic,
    opt: &mut PpoOptimizers,
    model: &ModelIR,
    library: &PatternLibrary,
    graph_seed: u64,
    config: &PpoConfig,
) -> Result<UpdateStats, AgentError> {
    if !buffer.is_full() {
        return Err(AgentError::BufferNotFull {
            len: buffer.len(),
            capacity: buffer.capacity(),
        });
    }
    let batch = PreparedBatch::from_buffer(buffer, model, library, graph_seed, config.gamma)?;
    let adv = advantages(ac, &batch)?;
    let stats = ppo_update_with_advantages(&batch, &adv, ac, opt, config)?;
    buffer.clear();
    Ok(stats)
}

/// `update_iters` full-batch passes with fixed advantages.
///
/// Policy loss: `-mean(min(r A, clip(r, 1-eps, 1+eps) A))` with
/// `r = exp(log_prob_new - log_prob_old)`. Value loss: `mean((V - Dr)^2)`
/// on detached states.
pub fn ppo_update_with_advantages(
    batch: &PreparedBatch,
    advantages: &[f64],
    ac: &mut ActorCritic,
    opt: &mut PpoOptimizers,
    config: &PpoConfig,
) -> Result<UpdateStats, AgentError> {
    let b = batch.len();
    if b == 0 || advantages.len() != b || batch.choices.len() != b || batch.returns.len() != b {
        return Err(AgentError::Config(format!("{} advantages for {b} transitions", advantages.len())));
    }
    let n = ac.pattern_count();
    let mut flat = Vec::new();
    let mut owner = Vec::new();
    for (i, ch) in batch.choices.iter().enumerate() {
        for &c in ch {
            flat.push(i * n + c);
            owner.push(i);
        }
    }
    let owner = Rc::new(owner);
    let state_of = Rc::new(batch.state_of.clone());
    let column = |v: &[f64]| Tensor::new(vec![v.len(), 1], v.to_vec());
    let (adv_t, ret_t, old_t) = (column(advantages)?, column(&batch.returns)?, column(&batch.old_log_probs)?);
    let mut stats = UpdateStats {
        first_pass_ratio_dev: 0.0,
        actor_loss: Vec::with_capacity(config.update_iters),
        critic_loss: Vec::with_capacity(config.update_iters),
    };
    for pass in 0..config.update_iters {
        let tape = Tape::new();
        let enc = ac.encoder.bind(&tape);
        let actor = ac.actor.bind(&tape);
        let critic = ac.critic.bind(&tape);
        let states = batch
            .inputs
            .iter()
            .map(|inp| Ok(encode_on_tape(&tape, inp, &enc, ac.encoder.activation)?.0))
            .collect::<Result<Vec<Var>, AgentError>>()?;
        let g = Var::concat_rows(&states)?.index_rows(state_of.clone())?;
        let log_f = Mlp::forward_on_tape(g, &actor)?
            .tanh()
            .scale(1.0 / ac.temperature)
            .log_softmax(1)?;
        let new_lp = log_f
            .gather(&flat)?
            .reshape(&[flat.len(), 1])?
            .segment_sum(owner.clone(), b)?;
        let ratio = new_lp.sub(tape.constant(old_t.clone()))?.exp();
        if pass == 0 {
            stats.first_pass_ratio_dev = ratio.value().data().iter().fold(0.0f64, |m, r| m.max((r - 1.0).abs()));
        }
        let a = tape.constant(adv_t.clone());
        let unclipped = ratio.mul(a)?;
        let clipped = ratio.clamp(1.0 - config.clip, 1.0 + config.clip).mul(a)?;
        let actor_loss = unclipped.minimum(clipped)?.mean().scale(-1.0);
        let detached = tape.constant((*g.value()).clone());
        let v = Mlp::forward_on_tape(detached, &critic)?;
        let critic_loss = v.sub(tape.constant(ret_t.clone()))?.square().mean();
        let loss = actor_loss.add(critic_loss)?;
        stats.actor_loss.push(actor_loss.value().data()[0]);
        stats.critic_loss.push(critic_loss.value().data()[0]);
        let grads = tape.backward(loss)?;
        let policy_grads: Vec<Tensor> = enc.iter().chain(&actor).map(|v| grads.wrt(*v)).collect();
        let critic_grads: Vec<Tensor> = critic.iter().map(|v| grads.wrt(*v)).collect();
        drop(grads);
        opt.policy.step(&mut ac.policy_tensors_mut(), &policy_grads)?;
        opt.critic.step(&mut ac.critic.tensors_mut(), &critic_grads)?;
    }
    Ok(stats)
}
