//! Edge-aware dynamic graph attention, mean pooling and a final projection
//! that turns a [`DnnGraph`] into a fixed-size state vector.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DnnGraph, EDGE_DIM, NODE_DIM};
use crate::model::ModelError;
use crate::numerics::{Tape, Tensor, TensorError, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
const ENCODER_STREAM: u64 = 0x656e_636f_6465;
pub const PARAM_PREFIX: &str = "encoder.";

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("node {0} has no neighbors")]
    IsolatedNode(usize),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("missing encoder parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: Var<'_>) -> Var<'_> {
        match self {
            Activation::Elu => v.elu(),
            Activation::Relu => v.relu(),
            Activation::Tanh => v.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub hidden_dim: usize,
    pub rounds: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            node_dim: NODE_DIM,
            edge_dim: EDGE_DIM,
            hidden_dim: 64,
            rounds: 2,
            out_dim: 256,
            activation: Activation::Elu,
        }
    }
}

/// Weights of one message-passing round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundParams {
    /// Projects the receiving node for scoring.
    pub w_src: Tensor,
    /// Projects the neighbor for scoring.
    pub w_nbr: Tensor,
    /// Projects the connecting edge for scoring.
    pub w_edge: Tensor,
    /// Attention vector `[out, 1]`.
    pub attn: Tensor,
    /// Message (value) projection.
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub rounds: Vec<RoundParams>,
    /// Pooled features to the state vector.
    pub proj: Tensor,
    pub activation: Activation,
}

const ROUND_FIELDS: [&str; 5] = ["w_src", "w_nbr", "w_edge", "attn", "value"];

impl EncoderParams {
    /// Uniform in `±1/sqrt(fan_in)` from a dedicated stream of `seed`.
    pub fn init(config: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ENCODER_STREAM);
        let mut u = |rows: usize, cols: usize| Tensor::uniform(&[rows, cols], 1.0 / (rows as f64).sqrt(), &mut rng);
        let mut rounds = Vec::with_capacity(config.rounds);
        let mut input = config.node_dim;
        let h = config.hidden_dim;
        for _ in 0..config.rounds {
            rounds.push(RoundParams {
                w_src: u(input, h),
                w_nbr: u(input, h),
                w_edge: u(config.edge_dim, h),
                attn: u(h, 1),
                value: u(input, h),
            });
            input = h;
        }
        let proj = u(input, config.out_dim);
        Self {
            rounds,
            proj,
            activation: config.activation,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.proj.shape()[1]
    }

    /// All tensors in binding order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::new();
        for r in &self.rounds {
            v.extend([&r.w_src, &r.w_nbr, &r.w_edge, &r.attn, &r.value]);
        }
        v.push(&self.proj);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        for r in &mut self.rounds {
            v.extend([&mut r.w_src, &mut r.w_nbr, &mut r.w_edge, &mut r.attn, &mut r.value]);
        }
        v.push(&mut self.proj);
        v
    }

    /// Names matching [`tensors`](Self::tensors), prefixed with `encoder.`.
    pub fn names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.rounds.len() {
            v.extend(ROUND_FIELDS.iter().map(|f| format!("{PARAM_PREFIX}r{i}.{f}")));
        }
        v.push(format!("{PARAM_PREFIX}proj"));
        v
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        self.names().into_iter().zip(self.tensors()).collect()
    }

    /// Rebuild from named tensors (as read from a weight container).
    pub fn from_named(
        tensors: &std::collections::BTreeMap<String, Tensor>,
        activation: Activation,
    ) -> Result<Self, EncoderError> {
        let get = |n: String| tensors.get(&n).cloned().ok_or(EncoderError::MissingParam(n));
        let mut rounds = Vec::new();
        while tensors.contains_key(&format!("{PARAM_PREFIX}r{}.w_src", rounds.len())) {
            let i = rounds.len();
            let f = |field: &str| format!("{PARAM_PREFIX}r{i}.{field}");
            rounds.push(RoundParams {
                w_src: get(f("w_src"))?,
                w_nbr: get(f("w_nbr"))?,
                w_edge: get(f("w_edge"))?,
                attn: get(f("attn"))?,
                value: get(f("value"))?,
            });
        }
        let proj = get(format!("{PARAM_PREFIX}proj"))?;
        Ok(Self {
            rounds,
            proj,
            activation,
        })
    }

    /// Register every tensor as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors().into_iter().map(|t| tape.param(t.clone())).collect()
    }
}

/// Tensors and neighbor lists derived from a graph. Every directed edge
/// contributes one pair in each direction; there are no self loops.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInputs {
    pub nodes: Tensor,
    pub edges: Tensor,
    /// Receiving node of every pair.
    pub targets: Rc<Vec<usize>>,
    /// Neighbor of every pair.
    pub sources: Rc<Vec<usize>>,
    /// Edge of every pair.
    pub edge_ids: Rc<Vec<usize>>,
}

impl GraphInputs {
    pub fn from_graph(graph: &DnnGraph) -> Result<Self, EncoderError> {
        if graph.nodes.is_empty() {
            return Err(EncoderError::EmptyGraph);
        }
        let mut targets = Vec::with_capacity(2 * graph.edges.len());
        let mut sources = Vec::with_capacity(2 * graph.edges.len());
        let mut edge_ids = Vec::with_capacity(2 * graph.edges.len());
        for (i, e) in graph.edges.iter().enumerate() {
            for (t, s) in [(e.dst, e.src), (e.src, e.dst)] {
                targets.push(t);
                sources.push(s);
                edge_ids.push(i);
            }
        }
        let mut has = vec![false; graph.nodes.len()];
        for &t in &targets {
            has[t] = true;
        }
        if let Some(k) = has.iter().position(|h| !h) {
            return Err(EncoderError::IsolatedNode(k));
        }
        Ok(Self {
            nodes: graph.node_matrix(),
            edges: graph.edge_matrix(),
            targets: Rc::new(targets),
            sources: Rc::new(sources),
            edge_ids: Rc::new(edge_ids),
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.shape()[0]
    }
}

/// Per-round attention weights, one entry per (target, source) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub targets: Rc<Vec<usize>>,
    pub sources: Rc<Vec<usize>>,
    pub alpha: Vec<Vec<f64>>,
}

impl AttentionTrace {
    /// Sum of attention weights received by every node, per round.
    pub fn row_sums(&self) -> Vec<Vec<f64>> {
        let n = self.targets.iter().copied().max().map_or(0, |m| m + 1);
        self.alpha
            .iter()
            .map(|a| {
                let mut s = vec![0.0; n];
                for (&t, &v) in self.targets.iter().zip(a) {
                    s[t] += v;
                }
                s
            })
            .collect()
    }
}

fn check_dims(inputs: &GraphInputs, params: &[Var<'_>]) -> Result<(), EncoderError> {
    if params.is_empty() || (params.len() - 1) % ROUND_FIELDS.len() != 0 {
        return Err(EncoderError::Dim(format!("{} encoder tensors", params.len())));
    }
    let want = params[0].shape()[0];
    let got = inputs.nodes.shape()[1];
    if want != got {
        return Err(EncoderError::Dim(format!("node features {got}, encoder expects {want}")));
    }
    let want_e = params[2].shape()[0];
    let got_e = inputs.edges.shape()[1];
    if want_e != got_e {
        return Err(EncoderError::Dim(format!("edge features {got_e}, encoder expects {want_e}")));
    }
    Ok(())
}

/// One message-passing round on the tape.
///
/// For pair `(k, j)` over edge `e` the score is
/// `attn . leaky_relu(h_k W_src + h_j W_nbr + e W_edge)`; scores are
/// softmax-normalized over the pairs of each `k`, and the new feature of `k`
/// is `act(sum_j alpha_kj h_j W_value)`.
pub fn gat_round<'t>(
    h: Var<'t>,
    edges: Var<'t>,
    inputs: &GraphInputs,
    round: &[Var<'t>],
    activation: Activation,
) -> Result<(Var<'t>, Var<'t>), EncoderError> {
    let [w_src, w_nbr, w_edge, attn, value] = round else {
        return Err(EncoderError::Dim("round needs five tensors".into()));
    };
    let n = h.shape()[0];
    let z = h
        .matmul(*w_src)?
        .index_rows(inputs.targets.clone())?
        .add(h.matmul(*w_nbr)?.index_rows(inputs.sources.clone())?)?
        .add(edges.matmul(*w_edge)?.index_rows(inputs.edge_ids.clone())?)?;
    let scores = z.leaky_relu(LEAKY_SLOPE).matmul(*attn)?;
    let alpha = scores.segment_softmax(inputs.targets.clone())?;
    let messages = h.matmul(*value)?.index_rows(inputs.sources.clone())?.scale_rows(alpha)?;
    let out = activation.apply(messages.segment_sum(inputs.targets.clone(), n)?);
    Ok((out, alpha))
}

/// Mean over node rows.
pub fn pool_graph<'t>(h: Var<'t>) -> Result<Var<'t>, EncoderError> {
    if h.shape()[0] == 0 {
        return Err(EncoderError::EmptyGraph);
    }
    Ok(h.mean_rows()?)
}

/// All rounds, pooling and projection; returns `[1, out_dim]` and the
/// attention weights of every round.
pub fn encode_on_tape<'t>(
    tape: &'t Tape,
    inputs: &GraphInputs,
    params: &[Var<'t>],
    activation: Activation,
) -> Result<(Var<'t>, Vec<Var<'t>>), EncoderError> {
    check_dims(inputs, params)?;
    let mut h = tape.constant(inputs.nodes.clone());
    let edges = tape.constant(inputs.edges.clone());
    let (rounds, proj) = params.split_at(params.len() - 1);
    let mut alphas = Vec::new();
    for r in rounds.chunks(ROUND_FIELDS.len()) {
        let (next, alpha) = gat_round(h, edges, inputs, r, activation)?;
        h = next;
        alphas.push(alpha);
    }
    Ok((pool_graph(h)?.matmul(proj[0])?, alphas))
}

/// State vector of `graph` (length `out_dim`).
pub fn encode(graph: &DnnGraph, params: &EncoderParams) -> Result<Vec<f64>, EncoderError> {
    Ok(encode_with_trace(graph, params)?.0)
}

pub fn encode_with_trace(graph: &DnnGraph, params: &EncoderParams) -> Result<(Vec<f64>, AttentionTrace), EncoderError> {
    let inputs = GraphInputs::from_graph(graph)?;
    let tape = Tape::new();
    let vars: Vec<Var> = params.tensors().into_iter().map(|t| tape.constant(t.clone())).collect();
    let (g, alphas) = encode_on_tape(&tape, &inputs, &vars, params.activation)?;
    let trace = AttentionTrace {
        targets: inputs.targets.clone(),
        sources: inputs.sources.clone(),
        alpha: alphas.iter().map(|a| a.value().data().to_vec()).collect(),
    };
    let out = g.value().data().to_vec();
    Ok((out, trace))
}

/// Attention weights of one node over its neighbors, computed directly from
/// row vectors: `h_k`, and `(h_j, e_kj)` for every neighbor.
pub fn attention_coefficients(
    h_k: &[f64],
    neighbors: &[(Vec<f64>, Vec<f64>)],
    round: &RoundParams,
) -> Result<Vec<f64>, EncoderError> {
    if neighbors.is_empty() {
        return Err(EncoderError::IsolatedNode(0));
    }
    let vecmat = |x: &[f64], w: &Tensor| -> Result<Vec<f64>, EncoderError> {
        let (r, c) = (w.shape()[0], w.shape()[1]);
        if x.len() != r {
            return Err(EncoderError::Dim(format!("vector {} vs matrix {r}x{c}", x.len())));
        }
        let mut out = vec![0.0; c];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(&w.data()[i * c..(i + 1) * c]) {
                *o += xi * wv;
            }
        }
        Ok(out)
    };
    let base = vecmat(h_k, &round.w_src)?;
    let mut scores = Vec::with_capacity(neighbors.len());
    for (h_j, e) in neighbors {
        let nb = vecmat(h_j, &round.w_nbr)?;
        let ed = vecmat(e, &round.w_edge)?;
        let s: f64 = (0..base.len())
            .map(|i| {
                let z = base[i] + nb[i] + ed[i];
                let z = if z > 0.0 { z } else { LEAKY_SLOPE * z };
                round.attn.data()[i] * z
            })
            .sum();
        scores.push(s);
    }
    Ok(softmax_slice(&scores))
}

/// Max-subtracted softmax of a slice.
pub fn softmax_slice(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
