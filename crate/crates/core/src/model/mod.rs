//! Target networks: operator list, weights, masked forward pass, MAC
//! accounting, (fine-)training and on-disk formats.

mod constraints;
mod demo;
mod flops;
mod forward;
pub mod io;
mod train;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{conv_out_dim, Tensor, TensorError};

pub use constraints::{check_constraints, ConstraintSet, Metrics};
pub use demo::{cnn_from_channels, demo_cnn, demo_transformer, init_weights, CnnLayer};
pub(crate) use demo::{demo_cnn_for, demo_transformer_for};
pub use flops::{count_flops, FlopsReport, OperatorFlops};
pub use forward::{argmax_rows, evaluate_accuracy, forward, forward_on_tape};
pub use train::{fine_tune, train, TrainSchedule};

pub const TOPOLOGY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("unknown operator or weight `{0}`")]
    UnknownOperator(String),
    #[error("weight `{name}` has shape {found:?}, topology expects {expected:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing weight `{0}`")]
    MissingWeight(String),
    #[error("batch shape {found:?} does not match input shape {expected:?}")]
    BatchShape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Operator whose (activated) output is added to this operator's output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearParams {
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub embed_dim: usize,
    pub head_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpParams {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum OpKind {
    Conv2d(ConvParams),
    Linear(LinearParams),
    Attention(AttentionParams),
    MlpBlock(MlpParams),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: OpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_group: Option<String>,
    pub prunable: bool,
}

/// How a pattern is laid over a weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    /// `[filters, channels, k, k]`; patterns cover the `k x k` window.
    ConvKernel,
    /// 2-D matrix; patterns are tiled.
    Matrix,
}

/// One named weight tensor of an operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: SlotKind,
}

impl OperatorSpec {
    pub fn conv(id: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            id: id.into(),
            kind: OpKind::Conv2d(ConvParams {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                skip_from: None,
            }),
            residual_group: None,
            prunable: true,
        }
    }

    pub fn linear(id: &str, in_features: usize, out_features: usize, prunable: bool) -> Self {
        Self {
            id: id.into(),
            kind: OpKind::Linear(LinearParams {
                in_features,
                out_features,
            }),
            residual_group: None,
            prunable,
        }
    }

    pub fn attention(id: &str, embed_dim: usize, head_dim: usize) -> Self {
        Self {
            id: id.into(),
            kind: OpKind::Attention(AttentionParams { embed_dim, head_dim }),
            residual_group: None,
            prunable: true,
        }
    }

    pub fn mlp_block(id: &str, embed_dim: usize, hidden_dim: usize) -> Self {
        Self {
            id: id.into(),
            kind: OpKind::MlpBlock(MlpParams {
                embed_dim,
                hidden_dim,
            }),
            residual_group: None,
            prunable: true,
        }
    }

    /// Named weights in canonical order.
    pub fn weight_slots(&self) -> Vec<WeightSlot> {
        let m = |suffix: &str, shape: Vec<usize>| WeightSlot {
            name: format!("{}.{suffix}", self.id),
            shape,
            kind: SlotKind::Matrix,
        };
        match &self.kind {
            OpKind::Conv2d(p) => vec![WeightSlot {
                name: self.id.clone(),
                shape: vec![p.out_channels, p.in_channels, p.kernel, p.kernel],
                kind: SlotKind::ConvKernel,
            }],
            OpKind::Linear(p) => vec![WeightSlot {
                name: self.id.clone(),
                shape: vec![p.in_features, p.out_features],
                kind: SlotKind::Matrix,
            }],
            OpKind::Attention(p) => vec![
                m("q", vec![p.embed_dim, p.head_dim]),
                m("k", vec![p.embed_dim, p.head_dim]),
                m("v", vec![p.embed_dim, p.head_dim]),
            ],
            OpKind::MlpBlock(p) => vec![
                m("w1", vec![p.embed_dim, p.hidden_dim]),
                m("w2", vec![p.hidden_dim, p.embed_dim]),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnn,
    Transformer,
}

/// Serialized topology (weights live in a separate container).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub version: u32,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    pub operators: Vec<OperatorSpec>,
}

/// A bias-free network: ordered operators plus their named weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelIR {
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    pub operators: Vec<OperatorSpec>,
    pub weights: BTreeMap<String, Tensor>,
}

/// Labeled samples; `inputs` has a leading sample axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Split, TensorError> {
        Ok(Split {
            inputs: self.inputs.select_leading(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// Realized binary masks keyed by weight name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Masks(pub BTreeMap<String, Tensor>);

impl Masks {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    /// Kept (nonzero) entries of the named mask, or `None` when unmasked.
    pub fn kept(&self, name: &str) -> Option<usize> {
        self.0.get(name).map(|m| m.data().iter().filter(|&&v| v != 0.0).count())
    }
}

impl ModelIR {
    pub fn new(
        input_shape: Vec<usize>,
        class_count: usize,
        operators: Vec<OperatorSpec>,
        weights: BTreeMap<String, Tensor>,
    ) -> Result<Self, ModelError> {
        let model = Self {
            input_shape,
            class_count,
            operators,
            weights,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn from_topology(topology: Topology, weights: BTreeMap<String, Tensor>) -> Result<Self, ModelError> {
        if topology.version != TOPOLOGY_VERSION {
            return Err(ModelError::Invalid(format!(
                "unsupported topology version {}",
                topology.version
            )));
        }
        Self::new(topology.input_shape, topology.class_count, topology.operators, weights)
    }

    pub fn topology(&self) -> Topology {
        Topology {
            version: TOPOLOGY_VERSION,
            input_shape: self.input_shape.clone(),
            class_count: self.class_count,
            operators: self.operators.clone(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        if self.input_shape.len() == 3 {
            ModelKind::Cnn
        } else {
            ModelKind::Transformer
        }
    }

    pub fn operator(&self, id: &str) -> Option<&OperatorSpec> {
        self.operators.iter().find(|o| o.id == id)
    }

    pub fn weight(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.weights
            .get(name)
            .ok_or_else(|| ModelError::MissingWeight(name.to_string()))
    }

    pub fn weight_slots(&self) -> Vec<WeightSlot> {
        self.operators.iter().flat_map(|o| o.weight_slots()).collect()
    }

    pub fn prunable_operators(&self) -> impl Iterator<Item = &OperatorSpec> {
        self.operators.iter().filter(|o| o.prunable)
    }

    /// Per-sample output shape of every operator, in order.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.operators.len());
        for op in &self.operators {
            shape = match &op.kind {
                OpKind::Conv2d(p) => {
                    let [c, h, w] = shape[..] else {
                        return Err(ModelError::Invalid(format!("{}: conv needs [C,H,W] input, got {shape:?}", op.id)));
                    };
                    if c != p.in_channels {
                        return Err(ModelError::Invalid(format!("{}: expects {} channels, gets {c}", op.id, p.in_channels)));
                    }
                    let oh = conv_out_dim(h, p.kernel, p.stride, p.padding);
                    let ow = conv_out_dim(w, p.kernel, p.stride, p.padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => vec![p.out_channels, oh, ow],
                        _ => return Err(ModelError::Invalid(format!("{}: kernel larger than padded input", op.id))),
                    }
                }
                OpKind::Linear(p) => {
                    let flat: usize = match self.kind() {
                        ModelKind::Cnn => shape.iter().product(),
                        ModelKind::Transformer => *shape.last().unwrap_or(&0),
                    };
                    if flat != p.in_features {
                        return Err(ModelError::Invalid(format!("{}: expects {} inputs, gets {flat}", op.id, p.in_features)));
                    }
                    vec![p.out_features]
                }
                OpKind::Attention(p) => {
                    if shape.len() != 2 || shape[1] != p.embed_dim || p.head_dim > p.embed_dim {
                        return Err(ModelError::Invalid(format!("{}: attention on {shape:?} with d={} d_k={}", op.id, p.embed_dim, p.head_dim)));
                    }
                    shape.clone()
                }
                OpKind::MlpBlock(p) => {
                    if shape.len() != 2 || shape[1] != p.embed_dim {
                        return Err(ModelError::Invalid(format!("{}: mlp on {shape:?} with d={}", op.id, p.embed_dim)));
                    }
                    shape.clone()
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Structural checks: unique ids, chained shapes, weights, residual groups.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.class_count < 2 {
            return Err(ModelError::Invalid("class_count must be at least 2".into()));
        }
        if !(self.input_shape.len() == 2 || self.input_shape.len() == 3) || self.input_shape.contains(&0) {
            return Err(ModelError::Invalid(format!("unsupported input shape {:?}", self.input_shape)));
        }
        let mut seen = BTreeSet::new();
        for op in &self.operators {
            if !seen.insert(op.id.as_str()) {
                return Err(ModelError::Invalid(format!("duplicate operator id `{}`", op.id)));
            }
            let ok = matches!(
                (self.kind(), &op.kind),
                (ModelKind::Cnn, OpKind::Conv2d(_) | OpKind::Linear(_))
                    | (ModelKind::Transformer, OpKind::Attention(_) | OpKind::MlpBlock(_) | OpKind::Linear(_))
            );
            if !ok {
                return Err(ModelError::Invalid(format!("operator `{}` does not fit a {:?} model", op.id, self.kind())));
            }
        }
        let shapes = self.output_shapes()?;
        match shapes.last() {
            Some(last) if *last == [self.class_count] => {}
            _ => return Err(ModelError::Invalid("last operator must be a linear head onto class_count".into())),
        }
        let linear_seen = self.operators.iter().position(|o| matches!(o.kind, OpKind::Linear(_)));
        if let Some(first_linear) = linear_seen {
            if self.operators[first_linear..].iter().any(|o| !matches!(o.kind, OpKind::Linear(_))) {
                return Err(ModelError::Invalid("linear operators must come last".into()));
            }
        }
        for (i, op) in self.operators.iter().enumerate() {
            if let OpKind::Conv2d(ConvParams { skip_from: Some(src), .. }) = &op.kind {
                let j = self.operators[..i]
                    .iter()
                    .position(|o| &o.id == src)
                    .ok_or_else(|| ModelError::Invalid(format!("{}: skip source `{src}` must precede it", op.id)))?;
                if shapes[j] != shapes[i] {
                    return Err(ModelError::Invalid(format!(
                        "{}: skip from `{src}` joins {:?} onto {:?}",
                        op.id, shapes[j], shapes[i]
                    )));
                }
            }
        }
        for slot in self.weight_slots() {
            let w = self.weight(&slot.name)?;
            if w.shape() != slot.shape.as_slice() {
                return Err(ModelError::WeightShape {
                    name: slot.name,
                    expected: slot.shape,
                    found: w.shape().to_vec(),
                });
            }
        }
        let expected: BTreeSet<String> = self.weight_slots().into_iter().map(|s| s.name).collect();
        if let Some(extra) = self.weights.keys().find(|k| !expected.contains(*k)) {
            return Err(ModelError::UnknownOperator(extra.clone()));
        }
        for (group, members) in self.residual_groups() {
            let kernels: BTreeSet<Option<usize>> = members
                .iter()
                .map(|id| match &self.operator(id).map(|o| &o.kind) {
                    Some(OpKind::Conv2d(p)) => Some(p.kernel),
                    _ => None,
                })
                .collect();
            if kernels.len() != 1 || kernels.contains(&None) {
                return Err(ModelError::Invalid(format!(
                    "residual group `{group}` must contain conv operators with one kernel size"
                )));
            }
            if members.iter().any(|id| !self.operator(id).is_some_and(|o| o.prunable)) {
                return Err(ModelError::Invalid(format!("residual group `{group}` mixes prunable and fixed operators")));
            }
        }
        Ok(())
    }

    /// Residual groups in first-appearance order, members in operator order.
    pub fn residual_groups(&self) -> Vec<(String, Vec<String>)> {
        let mut groups: Vec<(String, Vec<String>)> = Vec::new();
        for op in &self.operators {
            if let Some(g) = &op.residual_group {
                match groups.iter_mut().find(|(name, _)| name == g) {
                    Some((_, members)) => members.push(op.id.clone()),
                    None => groups.push((g.clone(), vec![op.id.clone()])),
                }
            }
        }
        groups
    }
}
