use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    act, alpha_schedule, compute_reward, ppo_update, ActorCritic, ActorCriticConfig, AgentError, AlphaSchedule,
    PpoConfig, PpoOptimizers, ReplayBuffer, Transition, UpdateStats,
};
use crate::encoder::GraphInputs;
use crate::graph::build_graph;
use crate::model::{check_constraints, count_flops, evaluate_accuracy, ConstraintSet, Metrics, ModelIR, Split};
use crate::patterns::{apply_pruning, realize_masks, sample_assignment, PatternAssignment, PatternLibrary};

const SAMPLING_STREAM: u64 = 0x7361_6d70_6c65;

/// Scores a candidate assignment.
pub trait Environment {
    fn evaluate(&mut self, assignment: &PatternAssignment) -> Result<Metrics, AgentError>;
}

/// Masked accuracy on a held-out split plus exact MAC reduction. Results
/// are memoized per assignment.
pub struct ModelEnvironment<'a> {
    model: &'a ModelIR,
    library: &'a PatternLibrary,
    split: &'a Split,
    cache: HashMap<PatternAssignment, Metrics>,
}

impl<'a> ModelEnvironment<'a> {
    pub fn new(model: &'a ModelIR, library: &'a PatternLibrary, split: &'a Split) -> Self {
        Self {
            model,
            library,
            split,
            cache: HashMap::new(),
        }
    }

    pub fn distinct_evaluations(&self) -> usize {
        self.cache.len()
    }
}

impl Environment for ModelEnvironment<'_> {
    fn evaluate(&mut self, assignment: &PatternAssignment) -> Result<Metrics, AgentError> {
        if let Some(m) = self.cache.get(assignment) {
            return Ok(*m);
        }
        let masks = realize_masks(self.model, self.library, assignment)?;
        let flops = count_flops(self.model, Some(&masks))?;
        let accuracy = evaluate_accuracy(self.model, self.split, Some(&masks))?;
        let m = Metrics {
            flops_reduction: flops.flops_reduction,
            accuracy,
        };
        self.cache.insert(assignment.clone(), m);
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub episodes: usize,
    pub ppo: PpoConfig,
    pub alpha: AlphaSchedule,
    pub per_kernel: bool,
    pub policy: ActorCriticConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            ppo: PpoConfig::default(),
            alpha: AlphaSchedule::default(),
            per_kernel: false,
            policy: ActorCriticConfig::default(),
        }
    }
}

/// One line of the search log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub episode: usize,
    pub step: usize,
    pub flops_reduction: f64,
    pub accuracy: f64,
    pub reward: f64,
    pub assignment_digest: String,
    pub constraints_met: bool,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: PatternAssignment,
    pub best_metrics: Metrics,
    pub best_reward: f64,
    pub constraints_met: bool,
    pub pruned: ModelIR,
    pub log: Vec<SearchRecord>,
    pub updates: Vec<UpdateStats>,
    /// Distribution at the keep-all state after every update.
    pub start_probs: Vec<Vec<f64>>,
    pub episodes_run: usize,
    pub policy: ActorCritic,
}

impl SearchOutcome {
    /// Newline-delimited JSON, one record per inner step.
    pub fn log_ndjson(&self) -> String {
        let mut s = String::new();
        for r in &self.log {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }
}

struct Candidate {
    assignment: PatternAssignment,
    metrics: Metrics,
    reward: f64,
    met: bool,
    flops_ok: bool,
}

impl Candidate {
    /// Satisfying beats not; then meeting the MAC target; then reward.
    /// Ties keep the earlier candidate.
    fn beats(&self, other: &Candidate) -> bool {
        (self.met, self.flops_ok) > (other.met, other.flops_ok)
            || ((self.met, self.flops_ok) == (other.met, other.flops_ok) && self.reward > other.reward)
    }
}

/// Episodic search with the default model environment on `split`.
pub fn run_model_search(
    model: &ModelIR,
    library: &PatternLibrary,
    constraints: &ConstraintSet,
    split: &Split,
    config: &SearchConfig,
    seed: u64,
) -> Result<SearchOutcome, AgentError> {
    let mut env = ModelEnvironment::new(model, library, split);
    run_search(model, library, constraints, &mut env, config, seed)
}

/// Every episode starts from the keep-all assignment. Each inner step
/// rebuilds the graph from the current assignment, samples a new one from
/// the policy, scores it and stores the transition, stopping once the
/// constraints hold or the step guard is hit. A full buffer triggers an
/// update.
pub fn run_search<E: Environment>(
    model: &ModelIR,
    library: &PatternLibrary,
    constraints: &ConstraintSet,
    env: &mut E,
    config: &SearchConfig,
    seed: u64,
) -> Result<SearchOutcome, AgentError> {
    if !constraints.is_valid() {
        return Err(AgentError::InvalidConstraints);
    }
    if config.episodes == 0 || config.ppo.buffer_capacity == 0 {
        return Err(AgentError::Config("episodes and buffer capacity must be positive".into()));
    }
    let mut policy = ActorCritic::new(&config.policy, library.len(), seed);
    let mut opt = PpoOptimizers::new(&config.ppo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLING_STREAM);
    let mut buffer = ReplayBuffer::new(config.ppo.buffer_capacity);
    let start = PatternAssignment::uniform(model, 0);
    let start_inputs = GraphInputs::from_graph(&build_graph(model, library, &start, seed)?)?;
    let mut log = Vec::new();
    let mut updates = Vec::new();
    let mut start_probs = Vec::new();
    let mut best: Option<Candidate> = None;

    for episode in 0..config.episodes {
        let alpha = alpha_schedule(episode, &config.alpha);
        let mut state = start.clone();
        for step in 0..constraints.max_inner_steps {
            let inputs = if state == start {
                start_inputs.clone()
            } else {
                GraphInputs::from_graph(&build_graph(model, library, &state, seed)?)?
            };
            let probs = act(&policy.state(&inputs)?, &policy)?;
            let sample = sample_assignment(&probs, model, library, config.per_kernel, &mut rng)?;
            let metrics = env.evaluate(&sample.assignment)?;
            let reward = compute_reward(metrics.flops_reduction, metrics.accuracy, alpha)?;
            let met = check_constraints(metrics, constraints);
            let done = met || step + 1 == constraints.max_inner_steps;
            log.push(SearchRecord {
                episode,
                step,
                flops_reduction: metrics.flops_reduction,
                accuracy: metrics.accuracy,
                reward,
                assignment_digest: sample.assignment.digest(),
                constraints_met: met,
            });
            let cand = Candidate {
                assignment: sample.assignment.clone(),
                metrics,
                reward,
                met,
                flops_ok: metrics.flops_reduction >= constraints.flops_target,
            };
            if best.as_ref().map_or(true, |b| cand.beats(b)) {
                best = Some(cand);
            }
            buffer.push(Transition {
                state: std::mem::take(&mut state),
                probs,
                assignment: sample.assignment.clone(),
                choices: sample.choices,
                log_prob: sample.log_prob,
                reward,
                episode,
                step,
                done,
            });
            if buffer.is_full() {
                updates.push(ppo_update(&mut buffer, &mut policy, &mut opt, model, library, seed, &config.ppo)?);
                start_probs.push(act(&policy.state(&start_inputs)?, &policy)?);
            }
            state = sample.assignment;
            if met {
                break;
            }
        }
    }

    let best = best.expect("at least one step ran");
    let pruned = apply_pruning(model, library, &best.assignment)?;
    Ok(SearchOutcome {
        best: best.assignment,
        best_metrics: best.metrics,
        best_reward: best.reward,
        constraints_met: best.met,
        pruned,
        log,
        updates,
        start_probs,
        episodes_run: config.episodes,
        policy,
    })
}
