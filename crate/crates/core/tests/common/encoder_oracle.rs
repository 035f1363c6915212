//! Helpers for encoder properties: graph relabeling, compensated means and
//! a sampled end-to-end gradient check.

use autosculpt::encoder::{encode_on_tape, EncoderParams, GraphInputs};
use autosculpt::graph::{DnnGraph, GraphEdge};
use autosculpt::numerics::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::numerics_oracle::{fd_check_at, weighted_sum};

/// Same graph with nodes and edges listed in a random order.
pub fn permuted(graph: &DnnGraph, rng: &mut ChaCha8Rng) -> DnnGraph {
    let n = graph.nodes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut new_id = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_id[old] = new;
    }
    let nodes = order.iter().map(|&o| graph.nodes[o].clone()).collect();
    let mut edges: Vec<GraphEdge> = graph
        .edges
        .iter()
        .map(|e| GraphEdge {
            src: new_id[e.src],
            dst: new_id[e.dst],
            ..e.clone()
        })
        .collect();
    edges.shuffle(rng);
    DnnGraph { nodes, edges }
}

/// Column means via Kahan summation.
pub fn kahan_mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d)
        .map(|c| {
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for r in rows {
                let y = r[c] - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            sum / rows.len() as f64
        })
        .collect()
}

/// Max relative error of d(weighted g)/d(params) against central
/// differences at `probes` random parameter coordinates.
pub fn encoder_gradcheck(graph: &DnnGraph, params: &EncoderParams, probes: usize, rng: &mut ChaCha8Rng) -> f64 {
    let inputs = GraphInputs::from_graph(graph).expect("inputs");
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let mut coords = Vec::with_capacity(probes);
    // Cover every tensor at least once, then sample at random.
    for (i, t) in tensors.iter().enumerate() {
        coords.push((i, rng.gen_range(0..t.numel())));
    }
    while coords.len() < probes {
        let i = rng.gen_range(0..tensors.len());
        coords.push((i, rng.gen_range(0..tensors[i].numel())));
    }
    let act = params.activation;
    fd_check_at(&tensors, &coords, |tape, vars| {
        let (g, _) = encode_on_tape(tape, &inputs, vars, act).expect("encode");
        weighted_sum(tape, g, 7)
    })
}
