mod common;

use autosculpt::encoder::{
    attention_coefficients, encode, encode_with_trace, gat_round, pool_graph, softmax_slice, Activation,
    EncoderConfig, EncoderParams, GraphInputs, RoundParams,
};
use autosculpt::graph::{build_graph, DnnGraph, GraphEdge, GraphNode, NodeRole, EdgeRole, EDGE_DIM, NODE_DIM};
use autosculpt::model::{demo_cnn, demo_transformer, ModelIR};
use autosculpt::numerics::{Tape, Tensor};
use autosculpt::patterns::{PatternAssignment, PatternLibrary};
use common::builders::{cnn_with_groups, transformer};
use common::encoder_oracle::{encoder_gradcheck, kahan_mean_rows, permuted};
use common::numerics_oracle::FD_REL_TOL;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lib() -> PatternLibrary {
    PatternLibrary::default_library(3, 6).unwrap()
}

fn graph_of(model: &ModelIR, index: usize) -> DnnGraph {
    build_graph(model, &lib(), &PatternAssignment::uniform(model, index), 3).unwrap()
}

fn round(seed: u64) -> RoundParams {
    EncoderParams::init(&EncoderConfig::default(), seed).rounds.remove(0)
}

#[test]
fn symmetric_neighbors_split_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = round(1);
    let h = Tensor::uniform(&[NODE_DIM], 1.0, &mut rng).into_data();
    let hj = Tensor::uniform(&[NODE_DIM], 1.0, &mut rng).into_data();
    let e = Tensor::uniform(&[EDGE_DIM], 1.0, &mut rng).into_data();
    let a = attention_coefficients(&h, &[(hj.clone(), e.clone()), (hj.clone(), e.clone())], &r).unwrap();
    assert_eq!(a, vec![0.5, 0.5]);
    assert_eq!(attention_coefficients(&h, &[(hj, e)], &r).unwrap(), vec![1.0]);
    assert!(attention_coefficients(&h, &[], &r).is_err());
}

#[test]
fn two_score_softmax_closed_form() {
    let a = softmax_slice(&[1.0, 0.0]);
    let p = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((a[0] - p).abs() < 1e-15 && (a[1] - (1.0 - p)).abs() < 1e-15);
    assert!((a[0] - 0.7311).abs() < 5e-5);
}

#[test]
fn attention_rows_sum_to_one() {
    let params = EncoderParams::init(&EncoderConfig::default(), 4);
    for m in [demo_cnn(0), demo_transformer(0)] {
        let (_, trace) = encode_with_trace(&graph_of(&m, 0), &params).unwrap();
        assert_eq!(trace.alpha.len(), 2);
        for sums in trace.row_sums() {
            assert!(sums.iter().all(|s| (s - 1.0).abs() <= 1e-12));
        }
    }
}

#[test]
fn tape_attention_matches_direct_coefficients() {
    let params = EncoderParams::init(&EncoderConfig::default(), 5);
    let g = graph_of(&demo_cnn(1), 2);
    let (_, trace) = encode_with_trace(&g, &params).unwrap();
    let inputs = GraphInputs::from_graph(&g).unwrap();
    for k in [0, 3, 9, 40] {
        let pairs: Vec<usize> = (0..inputs.targets.len()).filter(|&p| inputs.targets[p] == k).collect();
        let nbrs: Vec<(Vec<f64>, Vec<f64>)> = pairs
            .iter()
            .map(|&p| (g.nodes[inputs.sources[p]].features.clone(), g.edges[inputs.edge_ids[p]].features.clone()))
            .collect();
        let direct = attention_coefficients(&g.nodes[k].features, &nbrs, &params.rounds[0]).unwrap();
        for (p, d) in pairs.iter().zip(direct) {
            assert!((trace.alpha[0][*p] - d).abs() < 1e-12);
        }
    }
}

fn constant_graph(n: usize, h: &[f64], e: &[f64]) -> DnnGraph {
    let node = |role| GraphNode { role, layer: 0, features: h.to_vec(), source: None };
    let mut nodes = vec![node(NodeRole::Input)];
    nodes.extend((0..n).map(|_| node(NodeRole::Kernel)));
    nodes.push(node(NodeRole::Output));
    let mut edges = Vec::new();
    for k in 1..=n {
        edges.push(GraphEdge { src: 0, dst: k, role: EdgeRole::In, features: e.to_vec() });
        edges.push(GraphEdge { src: k, dst: n + 1, role: EdgeRole::Out, features: e.to_vec() });
    }
    DnnGraph { nodes, edges }
}

#[test]
fn identical_messages_average_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = Tensor::uniform(&[NODE_DIM], 1.0, &mut rng).into_data();
    let e = Tensor::uniform(&[EDGE_DIM], 1.0, &mut rng).into_data();
    let g = constant_graph(3, &h, &e);
    let inputs = GraphInputs::from_graph(&g).unwrap();
    let r = round(6);
    let tape = Tape::new();
    let vars: Vec<_> = [&r.w_src, &r.w_nbr, &r.w_edge, &r.attn, &r.value].iter().map(|t| tape.constant((*t).clone())).collect();
    let (out, _) = gat_round(tape.constant(inputs.nodes.clone()), tape.constant(inputs.edges.clone()), &inputs, &vars, Activation::Elu).unwrap();
    let hw = tape.constant(Tensor::new(vec![1, NODE_DIM], h).unwrap()).matmul(vars[4]).unwrap().elu();
    let want = hw.value();
    let out = out.value();
    let d = want.numel();
    for k in 0..g.nodes.len() {
        for c in 0..d {
            assert!((out.data()[k * d + c] - want.data()[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_value_projection_gives_activation_of_zero() {
    let g = graph_of(&demo_cnn(0), 0);
    let inputs = GraphInputs::from_graph(&g).unwrap();
    let mut r = round(7);
    r.value = Tensor::zeros(r.value.shape());
    for act in [Activation::Elu, Activation::Tanh, Activation::Relu] {
        let tape = Tape::new();
        let vars: Vec<_> = [&r.w_src, &r.w_nbr, &r.w_edge, &r.attn, &r.value].iter().map(|t| tape.constant((*t).clone())).collect();
        let (out, _) = gat_round(tape.constant(inputs.nodes.clone()), tape.constant(inputs.edges.clone()), &inputs, &vars, act).unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn pooling() {
    let tape = Tape::new();
    let h = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 3.0, 3.0, 1.0]).unwrap());
    assert_eq!(pool_graph(h).unwrap().value().data(), &[2.0, 2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in [1, 7, 44, 300] {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let flat = Tensor::new(vec![n, 64], rows.concat()).unwrap();
        let got = pool_graph(tape.constant(flat)).unwrap().value();
        for (a, b) in got.data().iter().zip(kahan_mean_rows(&rows)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
    assert!(pool_graph(tape.constant(Tensor::zeros(&[0, 4]))).is_err());
}

#[test]
fn state_has_256_entries_and_is_deterministic() {
    let params = EncoderParams::init(&EncoderConfig::default(), 9);
    for m in [demo_cnn(0), demo_transformer(0), cnn_with_groups(&[2], &[None], 0)] {
        let g = graph_of(&m, 0);
        let a = encode(&g, &params).unwrap();
        assert_eq!(a.len(), 256);
        let b = encode(&g, &params).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn node_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let params = EncoderParams::init(&EncoderConfig::default(), 10);
    for m in [demo_cnn(0), demo_transformer(0)] {
        let g = graph_of(&m, 2);
        let base = encode(&g, &params).unwrap();
        for _ in 0..5 {
            let p = encode(&permuted(&g, &mut rng), &params).unwrap();
            for (a, b) in base.iter().zip(&p) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn end_to_end_gradients_on_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let small = [cnn_with_groups(&[4, 5], &[None, None], 1), cnn_with_groups(&[3, 3], &[Some(0), Some(0)], 2), transformer(1, 4, 8, 4, 6, 3)];
    for (i, m) in small.iter().enumerate() {
        let g = build_graph(m, &lib(), &PatternAssignment::uniform(m, 2), i as u64).unwrap();
        assert!(g.nodes.len() <= 12);
        for act in [Activation::Elu, Activation::Tanh] {
            let cfg = EncoderConfig { activation: act, ..EncoderConfig::default() };
            let params = EncoderParams::init(&cfg, 12 + i as u64);
            let err = encoder_gradcheck(&g, &params, 150, &mut rng);
            assert!(err <= FD_REL_TOL, "model {i} {act:?}: {err:e}");
        }
    }
}

#[test]
fn pattern_change_moves_the_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for seed in 0..5 {
        let params = EncoderParams::init(&EncoderConfig::default(), seed);
        for m in [demo_cnn(seed), demo_transformer(seed)] {
            let base = PatternAssignment::uniform(&m, 0);
            let mut changed = base.clone();
            let key = changed.0.keys().nth(rng.gen_range(0..changed.0.len())).unwrap().clone();
            changed.0.insert(key, vec![rng.gen_range(1..6)]);
            let a = encode(&build_graph(&m, &lib(), &base, 1).unwrap(), &params).unwrap();
            let b = encode(&build_graph(&m, &lib(), &changed, 1).unwrap(), &params).unwrap();
            let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            assert!(dist > 0.0);
        }
    }
}
