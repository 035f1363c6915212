use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::{ActorCriticConfig, AlphaSchedule, PpoConfig, SearchConfig};
use crate::encoder::{Activation, EncoderConfig};
use crate::model::{ConstraintSet, TrainSchedule};
use crate::patterns::{MAX_PATTERNS, MIN_PATTERNS};

/// Flat run configuration. Every key is optional in the file; defaults
/// follow the published pruning and fine-tuning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// `demo_cnn` or `demo_transformer`, used when no model files are given.
    pub model: String,
    pub model_path: Option<PathBuf>,
    pub weights_path: Option<PathBuf>,

    pub patterns: usize,
    pub patterns_path: Option<PathBuf>,
    pub per_kernel: bool,

    pub flops_target: f64,
    /// Absolute accuracy floor; when absent the floor is dense accuracy
    /// minus `acc_floor_drop`.
    pub acc_floor: Option<f64>,
    pub acc_floor_drop: f64,
    pub max_inner_steps: usize,
    pub episodes: usize,

    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub clip: f64,
    pub buffer_size: usize,
    pub update_iters: usize,
    pub temperature: f64,
    pub node_dim: usize,
    pub encoder_rounds: usize,
    pub graph_dim: usize,
    pub actor_hidden: usize,

    /// `constant` or `linear`.
    pub alpha_mode: String,
    pub alpha: f64,
    pub alpha_end: f64,
    pub alpha_episodes: usize,

    pub train_lr: f64,
    pub train_momentum: f64,
    pub train_weight_decay: f64,
    pub train_gamma: f64,
    pub train_milestones: Vec<usize>,
    pub train_epochs: usize,
    pub train_batch: usize,

    pub ft_lr: f64,
    pub ft_momentum: f64,
    pub ft_weight_decay: f64,
    pub ft_gamma: f64,
    pub ft_milestones: Vec<usize>,
    pub ft_epochs: usize,
    pub ft_batch: usize,

    /// `synthetic` or `cifar10`.
    pub dataset: String,
    pub data_dir: Option<PathBuf>,
    pub samples: usize,
    pub classes: usize,
    pub noise: f64,

    pub report_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            model: "demo_cnn".into(),
            model_path: None,
            weights_path: None,
            patterns: 6,
            patterns_path: None,
            per_kernel: false,
            flops_target: 0.5,
            acc_floor: None,
            acc_floor_drop: 0.10,
            max_inner_steps: 50,
            episodes: 100,
            actor_lr: ppo.actor_lr,
            critic_lr: ppo.critic_lr,
            gamma: ppo.gamma,
            clip: ppo.clip,
            buffer_size: ppo.buffer_capacity,
            update_iters: ppo.update_iters,
            temperature: crate::agent::DEFAULT_TEMPERATURE,
            node_dim: 64,
            encoder_rounds: 2,
            graph_dim: 256,
            actor_hidden: 128,
            alpha_mode: "constant".into(),
            alpha: 0.5,
            alpha_end: 0.5,
            alpha_episodes: 100,
            train_lr: 3e-2,
            train_momentum: 0.9,
            train_weight_decay: 4e-5,
            train_gamma: 0.1,
            train_milestones: vec![12, 16],
            train_epochs: 20,
            train_batch: 32,
            ft_lr: 3e-2,
            ft_momentum: 0.9,
            ft_weight_decay: 4e-5,
            ft_gamma: 0.1,
            ft_milestones: vec![30, 50, 70, 80, 90],
            ft_epochs: 100,
            ft_batch: 32,
            dataset: "synthetic".into(),
            data_dir: None,
            samples: 2000,
            classes: 4,
            noise: 1.0,
            report_wall_time: false,
        }
    }
}

impl RunConfig {
    /// Desk-scale preset: 20 fine-tuning epochs with proportionally moved milestones.
    pub fn desk() -> Self {
        Self {
            ft_epochs: 20,
            ft_milestones: vec![6, 10, 14, 16, 18],
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.patterns_path.is_none() && !(MIN_PATTERNS..=MAX_PATTERNS).contains(&self.patterns) {
            return bad(format!("patterns = {} outside {MIN_PATTERNS}..={MAX_PATTERNS}", self.patterns));
        }
        for (name, v) in [
            ("flops_target", self.flops_target),
            ("acc_floor_drop", self.acc_floor_drop),
            ("alpha", self.alpha),
            ("alpha_end", self.alpha_end),
            ("gamma", self.gamma),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if let Some(f) = self.acc_floor {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("acc_floor = {f} outside [0, 1]"));
            }
        }
        if self.episodes == 0 || self.max_inner_steps == 0 || self.buffer_size == 0 {
            return bad("episodes, max_inner_steps and buffer_size must be positive".into());
        }
        if self.temperature <= 0.0 || self.clip <= 0.0 {
            return bad("temperature and clip must be positive".into());
        }
        if self.node_dim == 0 || self.graph_dim == 0 || self.encoder_rounds == 0 || self.actor_hidden == 0 {
            return bad("encoder and policy sizes must be positive".into());
        }
        if !matches!(self.alpha_mode.as_str(), "constant" | "linear") {
            return bad(format!("alpha_mode `{}` is not constant or linear", self.alpha_mode));
        }
        if !matches!(self.model.as_str(), "demo_cnn" | "demo_transformer") && self.model_path.is_none() {
            return bad(format!("unknown model `{}`", self.model));
        }
        if self.model_path.is_some() != self.weights_path.is_some() {
            return bad("model_path and weights_path go together".into());
        }
        if !matches!(self.dataset.as_str(), "synthetic" | "cifar10") {
            return bad(format!("unknown dataset `{}`", self.dataset));
        }
        if self.dataset == "cifar10" && self.data_dir.is_none() {
            return bad("cifar10 needs data_dir".into());
        }
        if self.train_batch == 0 || self.ft_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        Ok(())
    }

    pub fn alpha_schedule(&self) -> AlphaSchedule {
        match self.alpha_mode.as_str() {
            "linear" => AlphaSchedule::Linear {
                start: self.alpha,
                end: self.alpha_end,
                episodes: self.alpha_episodes,
            },
            _ => AlphaSchedule::Constant { value: self.alpha },
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            episodes: self.episodes,
            ppo: PpoConfig {
                actor_lr: self.actor_lr,
                critic_lr: self.critic_lr,
                gamma: self.gamma,
                clip: self.clip,
                update_iters: self.update_iters,
                buffer_capacity: self.buffer_size,
            },
            alpha: self.alpha_schedule(),
            per_kernel: self.per_kernel,
            policy: ActorCriticConfig {
                encoder: EncoderConfig {
                    hidden_dim: self.node_dim,
                    rounds: self.encoder_rounds,
                    out_dim: self.graph_dim,
                    activation: Activation::Elu,
                    ..EncoderConfig::default()
                },
                hidden: self.actor_hidden,
                temperature: self.temperature,
            },
        }
    }

    pub fn constraints(&self, acc_dense: f64) -> ConstraintSet {
        let floor = self
            .acc_floor
            .unwrap_or_else(|| (acc_dense - self.acc_floor_drop).max(0.0));
        ConstraintSet {
            flops_target: self.flops_target,
            acc_floor: floor,
            max_inner_steps: self.max_inner_steps,
        }
    }

    pub fn train_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            lr: self.train_lr,
            momentum: self.train_momentum,
            weight_decay: self.train_weight_decay,
            gamma: self.train_gamma,
            milestones: self.train_milestones.clone(),
            epochs: self.train_epochs,
            batch_size: self.train_batch,
            seed: self.seed,
        }
    }

    pub fn finetune_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            lr: self.ft_lr,
            momentum: self.ft_momentum,
            weight_decay: self.ft_weight_decay,
            gamma: self.ft_gamma,
            milestones: self.ft_milestones.clone(),
            epochs: self.ft_epochs,
            batch_size: self.ft_batch,
            seed: self.seed,
        }
    }

    /// Set one sweepable axis from its textual value.
    pub fn set_axis(&mut self, axis: &str, value: &str) -> Result<(), HarnessError> {
        let parse_err = || HarnessError::Config(format!("bad value `{value}` for axis `{axis}`"));
        match axis {
            "patterns" => self.patterns = value.parse().map_err(|_| parse_err())?,
            "node_dim" => self.node_dim = value.parse().map_err(|_| parse_err())?,
            "flops_target" => self.flops_target = value.parse().map_err(|_| parse_err())?,
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown sweep axis `{other}` (patterns, node_dim, flops_target)"
                )))
            }
        }
        self.validate()
    }
}
