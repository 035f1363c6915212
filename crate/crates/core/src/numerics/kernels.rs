//! Forward and adjoint kernels on plain tensors. The tape in `tape.rs` wires
//! these together; they are also usable directly when no gradient is needed.

use super::{Tensor, TensorError};

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Output spatial extent of a convolution along one axis.
pub fn conv_out_dim(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel > size + 2 * padding {
        return None;
    }
    Some((size + 2 * padding - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub k: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(
        input: &Tensor,
        weight: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Self, TensorError> {
        let (is, ws) = (input.shape(), weight.shape());
        if is.len() != 4 || ws.len() != 4 || is[1] != ws[1] || ws[2] != ws[3] {
            return Err(mismatch("conv2d", input, weight));
        }
        let k = ws[2];
        let oh = conv_out_dim(is[2], k, stride, pad).ok_or_else(|| mismatch("conv2d", input, weight))?;
        let ow = conv_out_dim(is[3], k, stride, pad).ok_or_else(|| mismatch("conv2d", input, weight))?;
        Ok(Self {
            n: is[0],
            c: is[1],
            h: is[2],
            w: is[3],
            f: ws[0],
            k,
            oh,
            ow,
            stride,
            pad,
        })
    }

    /// Output columns `ox` whose input column `ox*stride + kj - pad` is in range.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        valid_range(self.w, self.ow, kj, self.stride, self.pad)
    }

    fn valid_rows(&self, ki: usize) -> (usize, usize) {
        valid_range(self.h, self.oh, ki, self.stride, self.pad)
    }
}

fn valid_range(size: usize, out: usize, offset: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o*stride + offset - pad in [0, size)
    let lo = if offset >= pad {
        0
    } else {
        (pad - offset).div_ceil(stride)
    };
    let hi = if size + pad > offset {
        ((size + pad - offset - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// 2-D cross-correlation, `input [N,C,H,W]`, `weight [F,C,k,k]`.
///
/// Each output cell accumulates its receptive field in (channel, row, column)
/// order starting from zero, skipping padded positions.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    let g = ConvGeom::new(input, weight, stride, padding)?;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0; g.n * g.f * g.oh * g.ow];
    for n in 0..g.n {
        for f in 0..g.f {
            let obase = (n * g.f + f) * g.oh * g.ow;
            for c in 0..g.c {
                let xbase = (n * g.c + c) * g.h * g.w;
                for ki in 0..g.k {
                    let (ylo, yhi) = g.valid_rows(ki);
                    for kj in 0..g.k {
                        let wv = wt[((f * g.c + c) * g.k + ki) * g.k + kj];
                        let (xlo, xhi) = g.valid_cols(kj);
                        for oy in ylo..yhi {
                            let iy = oy * g.stride + ki - g.pad;
                            let orow = &mut out[obase + oy * g.ow..obase + (oy + 1) * g.ow];
                            let xrow = &x[xbase + iy * g.w..xbase + (iy + 1) * g.w];
                            for ox in xlo..xhi {
                                orow[ox] += xrow[ox * g.stride + kj - g.pad] * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.f, g.oh, g.ow], out)
}

/// Gradients of `conv2d` with respect to input and weight.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor), TensorError> {
    let g = ConvGeom::new(input, weight, stride, padding)?;
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    for n in 0..g.n {
        for f in 0..g.f {
            let obase = (n * g.f + f) * g.oh * g.ow;
            for c in 0..g.c {
                let xbase = (n * g.c + c) * g.h * g.w;
                for ki in 0..g.k {
                    let (ylo, yhi) = g.valid_rows(ki);
                    for kj in 0..g.k {
                        let widx = ((f * g.c + c) * g.k + ki) * g.k + kj;
                        let wv = wt[widx];
                        let (xlo, xhi) = g.valid_cols(kj);
                        let mut acc = 0.0;
                        for oy in ylo..yhi {
                            let iy = oy * g.stride + ki - g.pad;
                            for ox in xlo..xhi {
                                let ix = ox * g.stride + kj - g.pad;
                                let d = go[obase + oy * g.ow + ox];
                                acc += d * x[xbase + iy * g.w + ix];
                                gx[xbase + iy * g.w + ix] += d * wv;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
    ))
}

/// `a [M,K] · b [K,N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(mismatch("matmul", a, b));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return Tensor::new(vec![m, n], out);
    }
    // Four rows at a time share each row of `b`; every output still
    // accumulates over `p` in increasing order.
    let mut blocks = out.chunks_exact_mut(4 * n);
    let mut i = 0;
    for block in &mut blocks {
        let (o0, rest) = block.split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(n);
        for p in 0..k {
            let (a0, a1, a2, a3) = (ad[i * k + p], ad[(i + 1) * k + p], ad[(i + 2) * k + p], ad[(i + 3) * k + p]);
            let brow = &bd[p * n..(p + 1) * n];
            let rows = o0.iter_mut().zip(o1.iter_mut()).zip(o2.iter_mut()).zip(o3.iter_mut());
            for ((((x0, x1), x2), x3), &bv) in rows.zip(brow) {
                *x0 += a0 * bv;
                *x1 += a1 * bv;
                *x2 += a2 * bv;
                *x3 += a3 * bv;
            }
        }
        i += 4;
    }
    for orow in blocks.into_remainder().chunks_exact_mut(n) {
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
        i += 1;
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor, TensorError> {
    let s = a.shape();
    if s.len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "transpose",
            left: s.to_vec(),
            right: vec![],
        });
    }
    let (m, n) = (s[0], s[1]);
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// (outer, len, inner) decomposition of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize), TensorError> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            ndim: shape.len(),
        });
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

/// Numerically stable softmax along `axis` (max subtracted before exponentiation).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |t: usize| (o * len + t) * inner + i;
            let m = (0..len).map(|t| d[idx(t)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for t in 0..len {
                let e = (d[idx(t)] - m).exp();
                out[idx(t)] = e;
                s += e;
            }
            for t in 0..len {
                out[idx(t)] /= s;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn log_softmax(x: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |t: usize| (o * len + t) * inner + i;
            let m = (0..len).map(|t| d[idx(t)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..len).map(|t| (d[idx(t)] - m).exp()).sum::<f64>().ln();
            for t in 0..len {
                out[idx(t)] = d[idx(t)] - lse;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// True when `small` is a trailing suffix of `big` (or equal).
pub(crate) fn trailing_broadcastable(big: &[usize], small: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

pub(crate) fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, TensorError> {
    if !trailing_broadcastable(a.shape(), b.shape()) {
        return Err(mismatch(op, a, b));
    }
    let bn = b.numel();
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bd[i % bn]))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Sum a full-shape gradient down to a trailing-suffix shape.
pub(crate) fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    for (i, &g) in grad.data().iter().enumerate() {
        out[i % n] += g;
    }
    Tensor::new(shape.to_vec(), out).expect("suffix shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_all_ones() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let w = Tensor::ones(&[1, 1, 2, 2]);
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_diagonal_filter() {
        let x = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.data(), &[6.0, 8.0, 12.0, 14.0]);
    }

    #[test]
    fn conv_zero_weight_annihilates() {
        let x = Tensor::from_fn(&[2, 3, 5, 5], |i| (i as f64).sin());
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let y = conv2d(&x, &w, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let x = Tensor::ones(&[1, 2, 3, 3]);
        let w = Tensor::ones(&[1, 3, 2, 2]);
        let err = conv2d(&x, &w, 1, 0).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 3, 3]") && err.contains("[1, 3, 2, 2]"), "{err}");
        let big = Tensor::ones(&[1, 2, 5, 5]);
        assert!(conv2d(&x, &big, 1, 0).is_err());
    }

    #[test]
    fn matmul_examples() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &Tensor::eye(2)).unwrap(), a);
        assert_eq!(matmul(&Tensor::eye(2), &a).unwrap(), a);
        let r = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let c = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&r, &c).unwrap().data(), &[11.0]);
        assert!(matmul(&r, &r).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::new(vec![2], vec![0.0, 0.0]).unwrap(), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::scalar(3.7), 0).unwrap();
        assert_eq!(s.data(), &[1.0]);
        let s = softmax(&Tensor::new(vec![2], vec![2f64.ln(), 0.0]).unwrap(), 0).unwrap();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(softmax(&s, 1).is_err());
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for size in 1..7 {
            for k in 1..4 {
                for stride in 1..4 {
                    for pad in 0..3 {
                        let Some(out) = conv_out_dim(size, k, stride, pad) else {
                            continue;
                        };
                        for off in 0..k {
                            let (lo, hi) = valid_range(size, out, off, stride, pad);
                            let brute: Vec<usize> = (0..out)
                                .filter(|o| {
                                    let p = (o * stride + off) as isize - pad as isize;
                                    p >= 0 && (p as usize) < size
                                })
                                .collect();
                            assert_eq!((lo..hi).collect::<Vec<_>>(), brute);
                        }
                    }
                }
            }
        }
    }
}
