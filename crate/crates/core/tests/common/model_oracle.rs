//! Single-sample reference forward pass written as plain loops. It counts
//! every multiplication by a kept weight, which gives an independent MAC
//! count to compare against the analytic accounting.

use autosculpt::model::{Masks, ModelIR, ModelKind, OpKind};
use autosculpt::numerics::Tensor;
use autosculpt::patterns::{sample_assignment, PatternAssignment, PatternLibrary};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn kept(masks: Option<&Masks>, name: &str, i: usize) -> bool {
    masks.and_then(|m| m.get(name)).map_or(true, |t| t.data()[i] != 0.0)
}

fn weight_at(model: &ModelIR, masks: Option<&Masks>, name: &str, i: usize) -> f64 {
    if kept(masks, name, i) {
        model.weights[name].data()[i]
    } else {
        0.0
    }
}

fn naive_softmax(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// `[r, c] x [c, k]` with MAC counting against weight `name`.
fn mat_weight(x: &[f64], r: usize, model: &ModelIR, masks: Option<&Masks>, name: &str, macs: &mut u64) -> Vec<f64> {
    let shape = model.weights[name].shape();
    let (c, k) = (shape[0], shape[1]);
    let mut y = vec![0.0; r * k];
    for i in 0..r {
        for j in 0..k {
            let mut acc = 0.0;
            for p in 0..c {
                if kept(masks, name, p * k + j) {
                    *macs += 1;
                }
                acc += x[i * c + p] * weight_at(model, masks, name, p * k + j);
            }
            y[i * k + j] = acc;
        }
    }
    y
}

/// Logits for one sample plus the number of multiplications by kept weights
/// (attention score and mixing products always count).
pub fn naive_forward(model: &ModelIR, sample: &[f64], masks: Option<&Masks>) -> (Vec<f64>, u64) {
    let mut macs = 0u64;
    let mut outputs: Vec<(String, Vec<f64>)> = Vec::new();
    let last = model.operators.len() - 1;
    match model.kind() {
        ModelKind::Cnn => {
            let (mut c, mut h, mut w) = (model.input_shape[0], model.input_shape[1], model.input_shape[2]);
            let mut x = sample.to_vec();
            for (idx, op) in model.operators.iter().enumerate() {
                match &op.kind {
                    OpKind::Conv2d(p) => {
                        let k = p.kernel;
                        let oh = (h + 2 * p.padding - k) / p.stride + 1;
                        let ow = (w + 2 * p.padding - k) / p.stride + 1;
                        let mut y = vec![0.0; p.out_channels * oh * ow];
                        for f in 0..p.out_channels {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut acc = 0.0;
                                    for ci in 0..c {
                                        for ky in 0..k {
                                            for kx in 0..k {
                                                let wi = ((f * c + ci) * k + ky) * k + kx;
                                                if kept(masks, &op.id, wi) {
                                                    macs += 1;
                                                }
                                                let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                                                let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                                    continue;
                                                }
                                                let xv = x[(ci * h + iy as usize) * w + ix as usize];
                                                acc += xv * weight_at(model, masks, &op.id, wi);
                                            }
                                        }
                                    }
                                    y[(f * oh + oy) * ow + ox] = acc.max(0.0);
                                }
                            }
                        }
                        if let Some(src) = &p.skip_from {
                            let skip = &outputs.iter().find(|(n, _)| n == src).expect("skip source").1;
                            for (a, b) in y.iter_mut().zip(skip) {
                                *a += b;
                            }
                        }
                        x = y;
                        c = p.out_channels;
                        h = oh;
                        w = ow;
                    }
                    OpKind::Linear(_) => {
                        let mut y = mat_weight(&x, 1, model, masks, &op.id, &mut macs);
                        if idx != last {
                            y.iter_mut().for_each(|v| *v = v.max(0.0));
                        }
                        x = y;
                    }
                    _ => panic!("unexpected operator in a CNN"),
                }
                outputs.push((op.id.clone(), x.clone()));
            }
            (x, macs)
        }
        ModelKind::Transformer => {
            let (t, d) = (model.input_shape[0], model.input_shape[1]);
            let mut x = sample.to_vec();
            let mut pooled = false;
            for (idx, op) in model.operators.iter().enumerate() {
                match &op.kind {
                    OpKind::Attention(p) => {
                        let dk = p.head_dim;
                        let q = mat_weight(&x, t, model, masks, &format!("{}.q", op.id), &mut macs);
                        let kk = mat_weight(&x, t, model, masks, &format!("{}.k", op.id), &mut macs);
                        let v = mat_weight(&x, t, model, masks, &format!("{}.v", op.id), &mut macs);
                        let scale = 1.0 / (dk as f64).sqrt();
                        for i in 0..t {
                            let mut row = vec![0.0; t];
                            for j in 0..t {
                                let mut acc = 0.0;
                                for e in 0..dk {
                                    acc += q[i * dk + e] * kk[j * dk + e];
                                    macs += 1;
                                }
                                row[j] = acc * scale;
                            }
                            naive_softmax(&mut row);
                            for e in 0..dk {
                                let mut acc = 0.0;
                                for j in 0..t {
                                    acc += row[j] * v[j * dk + e];
                                    macs += 1;
                                }
                                x[i * d + e] += acc;
                            }
                        }
                    }
                    OpKind::MlpBlock(_) => {
                        let mut hid = mat_weight(&x, t, model, masks, &format!("{}.w1", op.id), &mut macs);
                        hid.iter_mut().for_each(|v| *v = v.max(0.0));
                        let back = mat_weight(&hid, t, model, masks, &format!("{}.w2", op.id), &mut macs);
                        for (a, b) in x.iter_mut().zip(back) {
                            *a += b;
                        }
                    }
                    OpKind::Linear(_) => {
                        if !pooled {
                            let mut mean = vec![0.0; d];
                            for i in 0..t {
                                for e in 0..d {
                                    mean[e] += x[i * d + e];
                                }
                            }
                            x = mean.iter().map(|v| v / t as f64).collect();
                            pooled = true;
                        }
                        let rows = 1;
                        let mut y = mat_weight(&x, rows, model, masks, &op.id, &mut macs);
                        if idx != last {
                            y.iter_mut().for_each(|v| *v = v.max(0.0));
                        }
                        x = y;
                    }
                    OpKind::Conv2d(_) => panic!("unexpected operator in a transformer"),
                }
            }
            (x, macs)
        }
    }
}

/// A batch of `n` uniform inputs for `model`.
pub fn random_batch(model: &ModelIR, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut shape = vec![n];
    shape.extend(&model.input_shape);
    Tensor::uniform(&shape, 1.0, rng)
}

/// Assignment drawn from a random distribution over the library.
pub fn random_assignment(model: &ModelIR, lib: &PatternLibrary, per_kernel: bool, rng: &mut ChaCha8Rng) -> PatternAssignment {
    let raw: Vec<f64> = (0..lib.len()).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|v| v / s).collect();
    sample_assignment(&probs, model, lib, per_kernel, rng).expect("sample").assignment
}
