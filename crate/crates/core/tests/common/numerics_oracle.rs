//! Independent oracles for the numerics core: central finite differences and
//! a naive convolution loop. Neither touches the tape's backward rules.

use std::rc::Rc;

use autosculpt::numerics::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Number of distinct cases `random_gradcheck` cycles through.
pub const GRADCHECK_CASES: usize = 20;

/// Relative error with a small absolute floor so that near-zero gradients are
/// judged on absolute agreement.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Max relative error between tape gradients and central differences of the
/// scalar function `f` over every element of every input.
pub fn fd_check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |ins: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.param(t.clone())).collect();
        f(&tape, &vars).value().data()[0]
    };
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        }
    }
    worst
}

/// Reduce an arbitrary output to a scalar with fixed pseudo-random weights.
pub fn weighted_sum<'t>(tape: &'t Tape, out: Var<'t>, salt: u64) -> Var<'t> {
    let shape = out.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed ^ salt);
    let w = Tensor::uniform(&shape, 1.0, &mut rng);
    out.mul(tape.constant(w)).unwrap().sum()
}

/// Naive convolution: for every output cell, accumulate channel, row, column
/// products in that order, skipping padded positions.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (oy * stride + ki) as isize - pad as isize;
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((b * c + ci) * h + iy as usize) * wd + ix as usize;
                                let wi = ((fi * c + ci) * k + ki) * k + kj;
                                acc += x.data()[xi] * w.data()[wi];
                            }
                        }
                    }
                    out[((b * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out).unwrap()
}

fn dims<R: Rng>(rng: &mut R, n: usize, max: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(1..=max)).collect()
}

/// Values bounded away from zero so kinked activations are evaluated off-kink.
fn away_from_zero<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) { m } else { -m }
    })
}

/// One random finite-difference instance of a named differentiable op.
/// Returns the op name and its max relative error.
pub fn random_gradcheck(op: usize, rng: &mut ChaCha8Rng) -> (&'static str, f64) {
    let salt = rng.gen::<u64>();
    match op % GRADCHECK_CASES {
        0 => {
            let (n, c, f) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
            let k = rng.gen_range(1..=3);
            let hw = rng.gen_range(k..=5);
            let stride = rng.gen_range(1..=2);
            let pad = rng.gen_range(0..=1);
            let x = Tensor::uniform(&[n, c, hw, hw], 1.0, rng);
            let w = Tensor::uniform(&[f, c, k, k], 1.0, rng);
            ("conv2d", fd_check(&[x, w], |t, v| {
                weighted_sum(t, v[0].conv2d(v[1], stride, pad).unwrap(), salt)
            }))
        }
        1 => {
            let d = dims(rng, 3, 4);
            let a = Tensor::uniform(&[d[0], d[1]], 1.0, rng);
            let b = Tensor::uniform(&[d[1], d[2]], 1.0, rng);
            ("matmul", fd_check(&[a, b], |t, v| weighted_sum(t, v[0].matmul(v[1]).unwrap(), salt)))
        }
        2 => {
            let nd = rng.gen_range(1..=4);
            let d = dims(rng, nd, 4);
            let axis = rng.gen_range(0..d.len());
            let x = Tensor::uniform(&d, 2.0, rng);
            ("softmax", fd_check(&[x], |t, v| weighted_sum(t, v[0].softmax(axis).unwrap(), salt)))
        }
        3 => {
            let nd = rng.gen_range(1..=4);
            let d = dims(rng, nd, 4);
            let x = Tensor::uniform(&d, 2.0, rng);
            ("tanh", fd_check(&[x], |t, v| weighted_sum(t, v[0].tanh(), salt)))
        }
        4 => {
            let nd = rng.gen_range(1..=4);
            let d = dims(rng, nd, 4);
            let x = away_from_zero(&d, rng);
            ("leaky_relu", fd_check(&[x], |t, v| weighted_sum(t, v[0].leaky_relu(0.2), salt)))
        }
        5 => {
            let nd = rng.gen_range(1..=4);
            let d = dims(rng, nd, 4);
            let x = away_from_zero(&d, rng);
            ("relu", fd_check(&[x], |t, v| weighted_sum(t, v[0].relu(), salt)))
        }
        6 => {
            let nd = rng.gen_range(1..=4);
            let d = dims(rng, nd, 4);
            let x = away_from_zero(&d, rng);
            ("elu", fd_check(&[x], |t, v| weighted_sum(t, v[0].elu(), salt)))
        }
        7 => {
            let nd = rng.gen_range(1..=4);
            let d = dims(rng, nd, 4);
            let split = rng.gen_range(0..d.len());
            let a = Tensor::uniform(&d, 1.0, rng);
            let b = Tensor::uniform(&d[split..], 1.0, rng);
            ("add", fd_check(&[a, b], |t, v| weighted_sum(t, v[0].add(v[1]).unwrap(), salt)))
        }
        8 => {
            let nd = rng.gen_range(1..=4);
            let d = dims(rng, nd, 4);
            let split = rng.gen_range(0..d.len());
            let a = Tensor::uniform(&d, 1.0, rng);
            let b = Tensor::uniform(&d[split..], 1.0, rng);
            ("mul", fd_check(&[a, b], |t, v| weighted_sum(t, v[0].mul(v[1]).unwrap(), salt)))
        }
        9 => {
            let nd = rng.gen_range(1..=4);
            let d = dims(rng, nd, 4);
            let x = Tensor::uniform(&d, 1.0, rng);
            ("mean", fd_check(&[x], |_, v| v[0].tanh().mean()))
        }
        10 => {
            let (b, c) = (rng.gen_range(1..=4), rng.gen_range(2..=4));
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
            let x = Tensor::uniform(&[b, c], 2.0, rng);
            ("cross_entropy", fd_check(&[x], |_, v| v[0].cross_entropy(&labels).unwrap()))
        }
        11 => {
            let d = dims(rng, 2, 4);
            let x = Tensor::uniform(&d, 1.0, rng);
            let axis = rng.gen_range(0..2);
            ("log_softmax", fd_check(&[x], |t, v| weighted_sum(t, v[0].log_softmax(axis).unwrap(), salt)))
        }
        12 => {
            let (n, d) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let p = rng.gen_range(1..=6);
            let idx: Rc<Vec<usize>> = Rc::new((0..p).map(|_| rng.gen_range(0..n)).collect());
            let x = Tensor::uniform(&[n, d], 1.0, rng);
            ("index_rows", fd_check(&[x], |t, v| weighted_sum(t, v[0].index_rows(idx.clone()).unwrap(), salt)))
        }
        13 => {
            let (p, d, n) = (rng.gen_range(1..=6), rng.gen_range(1..=4), rng.gen_range(1..=3));
            let seg: Rc<Vec<usize>> = Rc::new((0..p).map(|_| rng.gen_range(0..n)).collect());
            let x = Tensor::uniform(&[p, d], 1.0, rng);
            ("segment_sum", fd_check(&[x], |t, v| weighted_sum(t, v[0].segment_sum(seg.clone(), n).unwrap(), salt)))
        }
        14 => {
            let (p, n) = (rng.gen_range(1..=6), rng.gen_range(1..=3));
            let seg: Rc<Vec<usize>> = Rc::new((0..p).map(|_| rng.gen_range(0..n)).collect());
            let x = Tensor::uniform(&[p, 1], 2.0, rng);
            ("segment_softmax", fd_check(&[x], |t, v| weighted_sum(t, v[0].segment_softmax(seg.clone()).unwrap(), salt)))
        }
        15 => {
            let (p, d) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let x = Tensor::uniform(&[p, d], 1.0, rng);
            let w = Tensor::uniform(&[p, 1], 1.0, rng);
            ("scale_rows", fd_check(&[x, w], |t, v| weighted_sum(t, v[0].scale_rows(v[1]).unwrap(), salt)))
        }
        16 => {
            let (r, c) = (rng.gen_range(2..=4), rng.gen_range(1..=4));
            let x = Tensor::uniform(&[r, c], 1.0, rng);
            let y = Tensor::uniform(&[r, c], 1.0, rng);
            ("slice_concat_pad", fd_check(&[x, y], |t, v| {
                let top = v[0].slice_rows(0, 1).unwrap();
                let rest = v[1].slice_rows(1, r - 1).unwrap();
                let cat = Var::concat_rows(&[top, rest]).unwrap();
                weighted_sum(t, cat.pad_cols(c + 2).unwrap().transpose().unwrap(), salt)
            }))
        }
        17 => {
            let d = dims(rng, 2, 4);
            let a = away_from_zero(&d, rng);
            let b = Tensor::from_fn(&d, |i| a.data()[i] + if i % 2 == 0 { 0.3 } else { -0.3 });
            ("minimum_clamp_exp", fd_check(&[a, b], |t, v| {
                let r = v[0].exp().clamp(0.0, 1e9);
                weighted_sum(t, r.minimum(v[1].exp()).unwrap(), salt)
            }))
        }
        18 => {
            let (r, c) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let a = Tensor::uniform(&[r, c], 1.0, rng);
            let b = Tensor::uniform(&[r, c], 1.0, rng);
            let keep = Rc::new(Tensor::from_fn(&[r, c], |i| ((i * 7 + 3) % 3 != 0) as u8 as f64));
            let idx: Vec<usize> = (0..r * c).rev().step_by(2).collect();
            ("sub_scale_square_gather_mask", fd_check(&[a, b], |t, v| {
                let d = v[0].sub(v[1]).unwrap().scale(1.5).square().mask(keep.clone()).unwrap();
                let pooled = d.mean_rows().unwrap().sum();
                let picked = v[0].gather(&idx).unwrap().reshape(&[idx.len(), 1]).unwrap();
                weighted_sum(t, picked, salt).add(pooled).unwrap()
            }))
        }
        _ => {
            // Two-layer perceptron with a softmax cross-entropy head.
            let (b, i, h, o) = (3, rng.gen_range(2..=4), rng.gen_range(2..=4), 3);
            let x = Tensor::uniform(&[b, i], 1.0, rng);
            let w1 = Tensor::uniform(&[i, h], 1.0, rng);
            let b1 = Tensor::uniform(&[h], 0.5, rng);
            let w2 = Tensor::uniform(&[h, o], 1.0, rng);
            let labels = vec![0, 2, 1];
            ("mlp", fd_check(&[x, w1, b1, w2], |_, v| {
                let hid = v[0].matmul(v[1]).unwrap().add(v[2]).unwrap().tanh();
                hid.matmul(v[3]).unwrap().cross_entropy(&labels).unwrap()
            }))
        }
    }
}

/// Like [`fd_check`] but only probes the listed `(input, element)` pairs.
pub fn fd_check_at<F>(inputs: &[Tensor], coords: &[(usize, usize)], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    let eval = |ins: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.param(t.clone())).collect();
        f(&tape, &vars).value().data()[0]
    };
    let mut worst: f64 = 0.0;
    for &(i, j) in coords {
        let mut plus = inputs.to_vec();
        plus[i].data_mut()[j] += FD_STEP;
        let mut minus = inputs.to_vec();
        minus[i].data_mut()[j] -= FD_STEP;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[i].data()[j], numeric));
    }
    worst
}
