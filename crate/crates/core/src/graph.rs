//! Graph view of a network: feature-map nodes, one node per filter or weight
//! matrix, and edges whose features carry the assigned patterns.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelIR, ModelKind, OpKind, SlotKind};
use crate::numerics::Tensor;
use crate::patterns::{Pattern, PatternAssignment, PatternLibrary};

pub const NODE_DIM: usize = 32;
pub const EDGE_DIM: usize = 32;
const GRAPH_STREAM: u64 = 0x6772_6170_68;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("expected a {expected:?} model, got {found:?}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("pattern has {0} entries, edge features hold {EDGE_DIM}")]
    PatternTooLarge(usize),
    #[error("no pattern assigned to `{0}`")]
    Unassigned(String),
    #[error("invalid graph input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Input,
    Kernel,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeRole {
    /// Feature map into a kernel node; carries the pattern.
    #[serde(rename = "in")]
    In,
    /// Kernel node into the next feature map.
    #[serde(rename = "out")]
    Out,
    #[serde(rename = "residual")]
    Residual,
}

impl EdgeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeRole::In => "in",
            EdgeRole::Out => "out",
            EdgeRole::Residual => "residual",
        }
    }
}

/// Which weight (and filter) a kernel node stands for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightRef {
    pub weight: String,
    pub filter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub role: NodeRole,
    pub layer: usize,
    pub features: Vec<f64>,
    pub source: Option<WeightRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub src: usize,
    pub dst: usize,
    pub role: EdgeRole,
    pub features: Vec<f64>,
}

/// Directed graph; nodes are referenced by index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DnnGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl DnnGraph {
    /// Node features stacked `[nodes, NODE_DIM]`.
    pub fn node_matrix(&self) -> Tensor {
        let data = self.nodes.iter().flat_map(|n| n.features.iter().copied()).collect();
        Tensor::new(vec![self.nodes.len(), NODE_DIM], data).expect("node features have fixed width")
    }

    /// Edge features stacked `[edges, EDGE_DIM]`.
    pub fn edge_matrix(&self) -> Tensor {
        let data = self.edges.iter().flat_map(|e| e.features.iter().copied()).collect();
        Tensor::new(vec![self.edges.len(), EDGE_DIM], data).expect("edge features have fixed width")
    }

    pub fn count_role(&self, role: EdgeRole) -> usize {
        self.edges.iter().filter(|e| e.role == role).count()
    }

    /// One `src dst role` line per edge.
    pub fn edge_list(&self) -> String {
        let mut s = String::new();
        for e in &self.edges {
            let _ = writeln!(s, "{} {} {}", e.src, e.dst, e.role.as_str());
        }
        s
    }

    /// `node <i> <features...>` then `edge <i> <features...>`, full precision.
    pub fn features_text(&self) -> String {
        let mut s = String::new();
        let rows = self
            .nodes
            .iter()
            .map(|n| ("node", &n.features))
            .chain(self.edges.iter().map(|e| ("edge", &e.features)));
        let mut counters = [0usize; 2];
        for (tag, f) in rows {
            let c = &mut counters[(tag == "edge") as usize];
            let _ = write!(s, "{tag} {c}");
            for v in f {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
            *c += 1;
        }
        s
    }

    pub fn write_dump(&self, edges_path: &std::path::Path, features_path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(edges_path, self.edge_list())?;
        std::fs::write(features_path, self.features_text())
    }
}

/// Summary of a conv filter `[c,k,k]` or a matrix.
///
/// Every window position gets the mean absolute value and the population
/// standard deviation of the entries that fall on it (over channels for a
/// filter, over the tiling grid for a matrix). Means come first, then
/// deviations; the vector is zero-padded or truncated to `NODE_DIM` and
/// divided by its largest magnitude.
pub fn embed_node_features(weight: &Tensor, window: [usize; 2]) -> Result<Vec<f64>, GraphError> {
    let [p, q] = window;
    if p == 0 || q == 0 {
        return Err(GraphError::Invalid("empty window".into()));
    }
    let cells = p * q;
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); cells];
    match weight.shape() {
        [_, kh, kw] => {
            if [*kh, *kw] != window {
                return Err(GraphError::Invalid(format!("filter {:?} vs window {window:?}", weight.shape())));
            }
            for (i, &v) in weight.data().iter().enumerate() {
                buckets[i % cells].push(v);
            }
        }
        [_, cols] => {
            for (i, &v) in weight.data().iter().enumerate() {
                let (r, c) = (i / cols, i % cols);
                buckets[(r % p) * q + c % q].push(v);
            }
        }
        other => return Err(GraphError::Invalid(format!("cannot embed weight of shape {other:?}"))),
    }
    let mut feats = vec![0.0; NODE_DIM];
    for (cell, b) in buckets.iter().enumerate() {
        if b.is_empty() {
            continue;
        }
        let n = b.len() as f64;
        let mean_abs = b.iter().map(|v| v.abs()).sum::<f64>() / n;
        let mean = b.iter().sum::<f64>() / n;
        let var = b.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if cell < NODE_DIM {
            feats[cell] = mean_abs;
        }
        if cells + cell < NODE_DIM {
            feats[cells + cell] = var.sqrt();
        }
    }
    let max = feats.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        for v in &mut feats {
            *v /= max;
        }
    }
    Ok(feats)
}

/// Flattened 0/1 mask, zero-padded to `EDGE_DIM`.
pub fn embed_edge_features(pattern: &Pattern) -> Result<Vec<f64>, GraphError> {
    let e = pattern.entries();
    if e.len() > EDGE_DIM {
        return Err(GraphError::PatternTooLarge(e.len()));
    }
    let mut v = vec![0.0; EDGE_DIM];
    for (slot, &keep) in v.iter_mut().zip(e) {
        *slot = keep as u8 as f64;
    }
    Ok(v)
}

struct Builder {
    graph: DnnGraph,
    rng: ChaCha8Rng,
}

impl Builder {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(GRAPH_STREAM);
        Self {
            graph: DnnGraph::default(),
            rng,
        }
    }

    fn random(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.rng.gen_range(-1.0..=1.0)).collect()
    }

    fn map_node(&mut self, role: NodeRole, layer: usize) -> usize {
        let features = self.random(NODE_DIM);
        self.push_node(GraphNode {
            role,
            layer,
            features,
            source: None,
        })
    }

    fn push_node(&mut self, node: GraphNode) -> usize {
        self.graph.nodes.push(node);
        self.graph.nodes.len() - 1
    }

    fn edge(&mut self, src: usize, dst: usize, role: EdgeRole, features: Option<Vec<f64>>) {
        let features = features.unwrap_or_else(|| self.random(EDGE_DIM));
        self.graph.edges.push(GraphEdge { src, dst, role, features });
    }
}

fn pattern_features(
    library: &PatternLibrary,
    assignment: &PatternAssignment,
    weight: &str,
    filter: usize,
    prunable: bool,
) -> Result<Vec<f64>, GraphError> {
    let index = if prunable {
        assignment
            .index_for(weight, filter)
            .ok_or_else(|| GraphError::Unassigned(weight.to_string()))?
    } else {
        0
    };
    let pattern = library
        .get(index)
        .ok_or_else(|| GraphError::Invalid(format!("pattern index {index} outside library")))?;
    embed_edge_features(pattern)
}

fn require_kind(model: &ModelIR, expected: ModelKind) -> Result<(), GraphError> {
    let found = model.kind();
    if found != expected {
        return Err(GraphError::WrongKind { expected, found });
    }
    Ok(())
}

/// Conv layers as `map -> filters -> map`, adjacent layers sharing the map
/// node between them. Kernel nodes embed their filter; `in` edges embed the
/// assigned pattern. Each residual group adds an edge from the map feeding
/// its first member to the map produced by its last member. Map nodes,
/// `out` edges and residual edges get seeded uniform `[-1, 1]` features.
pub fn build_cnn_graph(
    model: &ModelIR,
    library: &PatternLibrary,
    assignment: &PatternAssignment,
    seed: u64,
) -> Result<DnnGraph, GraphError> {
    require_kind(model, ModelKind::Cnn)?;
    let mut b = Builder::new(seed);
    let mut current = b.map_node(NodeRole::Input, 0);
    let mut map_before = Vec::new();
    let mut map_after = Vec::new();
    let convs: Vec<_> = model.operators.iter().filter(|o| matches!(o.kind, OpKind::Conv2d(_))).collect();
    for (layer, op) in convs.iter().enumerate() {
        let OpKind::Conv2d(p) = &op.kind else { unreachable!() };
        let weight = model.weights.get(&op.id).ok_or_else(|| GraphError::Unassigned(op.id.clone()))?;
        let filters = p.out_channels;
        let mut kernels = Vec::with_capacity(filters);
        for f in 0..filters {
            let filter = weight.slice_leading(f, 1).map_err(|e| GraphError::Invalid(e.to_string()))?;
            let filter = filter
                .reshape(&[p.in_channels, p.kernel, p.kernel])
                .map_err(|e| GraphError::Invalid(e.to_string()))?;
            let features = embed_node_features(&filter, [p.kernel, p.kernel])?;
            kernels.push(b.push_node(GraphNode {
                role: NodeRole::Kernel,
                layer,
                features,
                source: Some(WeightRef {
                    weight: op.id.clone(),
                    filter: Some(f),
                }),
            }));
        }
        let output = b.map_node(NodeRole::Output, layer);
        for (f, &k) in kernels.iter().enumerate() {
            let feats = pattern_features(library, assignment, &op.id, f, op.prunable)?;
            b.edge(current, k, EdgeRole::In, Some(feats));
        }
        for &k in &kernels {
            b.edge(k, output, EdgeRole::Out, None);
        }
        map_before.push(current);
        map_after.push(output);
        current = output;
    }
    for (_, members) in model.residual_groups() {
        let layer_of = |id: &str| convs.iter().position(|o| o.id == id);
        if let (Some(first), Some(last)) = (layer_of(&members[0]), layer_of(&members[members.len() - 1])) {
            b.edge(map_before[first], map_after[last], EdgeRole::Residual, None);
        }
    }
    Ok(b.graph)
}

/// Each encoder (an attention operator followed by an MLP block) becomes
/// `map -> {Q, K, V, MLP1, MLP2} -> map`, with residual edges from the
/// incoming map to MLP1 (around attention) and to the outgoing map (around
/// the whole block). Adjacent encoders share their boundary map node.
pub fn build_transformer_graph(
    model: &ModelIR,
    library: &PatternLibrary,
    assignment: &PatternAssignment,
    seed: u64,
) -> Result<DnnGraph, GraphError> {
    require_kind(model, ModelKind::Transformer)?;
    let window = library.kernel();
    let blocks: Vec<_> = model
        .operators
        .iter()
        .filter(|o| matches!(o.kind, OpKind::Attention(_) | OpKind::MlpBlock(_)))
        .collect();
    if blocks.len() % 2 != 0
        || blocks.chunks(2).any(|c| {
            !matches!(c[0].kind, OpKind::Attention(_)) || !matches!(c[1].kind, OpKind::MlpBlock(_))
        })
    {
        return Err(GraphError::Invalid("encoders must pair an attention operator with an MLP block".into()));
    }
    let mut b = Builder::new(seed);
    let mut current = b.map_node(NodeRole::Input, 0);
    for (layer, pair) in blocks.chunks(2).enumerate() {
        let mut weight_nodes = Vec::with_capacity(5);
        for op in pair {
            for slot in op.weight_slots() {
                debug_assert_eq!(slot.kind, SlotKind::Matrix);
                let w = model
                    .weights
                    .get(&slot.name)
                    .ok_or_else(|| GraphError::Unassigned(slot.name.clone()))?;
                let features = embed_node_features(w, window)?;
                let id = b.push_node(GraphNode {
                    role: NodeRole::Kernel,
                    layer,
                    features,
                    source: Some(WeightRef {
                        weight: slot.name.clone(),
                        filter: None,
                    }),
                });
                weight_nodes.push((id, slot.name, op.prunable));
            }
        }
        let output = b.map_node(NodeRole::Output, layer);
        for (k, name, prunable) in &weight_nodes {
            let feats = pattern_features(library, assignment, name, 0, *prunable)?;
            b.edge(current, *k, EdgeRole::In, Some(feats));
        }
        for (k, _, _) in &weight_nodes {
            b.edge(*k, output, EdgeRole::Out, None);
        }
        b.edge(current, weight_nodes[3].0, EdgeRole::Residual, None);
        b.edge(current, output, EdgeRole::Residual, None);
        current = output;
    }
    Ok(b.graph)
}

/// Dispatches on the model kind.
pub fn build_graph(
    model: &ModelIR,
    library: &PatternLibrary,
    assignment: &PatternAssignment,
    seed: u64,
) -> Result<DnnGraph, GraphError> {
    match model.kind() {
        ModelKind::Cnn => build_cnn_graph(model, library, assignment, seed),
        ModelKind::Transformer => build_transformer_graph(model, library, assignment, seed),
    }
}
