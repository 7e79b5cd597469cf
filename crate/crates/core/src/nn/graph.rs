//! Reverse-mode differentiation over a per-sample tape of feature-map operations.
//!
//! A [`Graph`] borrows a [`ParameterSet`] immutably, records every operation applied to
//! its variables, and on [`Graph::backward`] returns gradients for every parameter touched.

use super::params::{Gradients, ParamId, ParameterSet};
use super::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const NORM_EPS: f32 = 1e-5;

enum Op {
    Input,
    Conv {
        x: Var,
        weight: ParamId,
        bias: Option<ParamId>,
        kernel: usize,
        stride: usize,
        pad: usize,
        cols: Vec<f32>,
    },
    GroupNorm {
        x: Var,
        scale: ParamId,
        shift: ParamId,
        groups: usize,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    LeakyRelu {
        x: Var,
        slope: f32,
    },
    Resize {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddBroadcast {
        x: Var,
        v: Var,
    },
    MulField {
        x: Var,
        field: Var,
    },
    Affine {
        x: Var,
        scale: f32,
    },
    GcPool {
        x: Var,
        logits: Var,
        attn: Vec<f32>,
    },
    MaxSoftmax {
        x: Var,
        probs: Vec<f32>,
        argmax: Vec<u32>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
    record: bool,
}

impl<'p> Graph<'p> {
    /// A graph that keeps the intermediates needed by [`Graph::backward`].
    pub fn new(params: &'p ParameterSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A forward-only graph; calling [`Graph::backward`] on it panics.
    pub fn inference(params: &'p ParameterSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(0, 0, 0))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// `kernel×kernel` convolution with zero padding `pad`. The weight array is laid out
    /// `[out, in, kernel, kernel]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: ParamId,
        bias: Option<ParamId>,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Var {
        let input = self.value(x);
        let (cin, h, w) = input.shape();
        let wparam = self.params.get(weight);
        let k_len = cin * kernel * kernel;
        assert_eq!(
            wparam.len() % k_len,
            0,
            "conv weight `{}` does not match {cin} input channels",
            wparam.name
        );
        let cout = wparam.len() / k_len;
        assert!(h + 2 * pad >= kernel && w + 2 * pad >= kernel);
        let ho = (h + 2 * pad - kernel) / stride + 1;
        let wo = (w + 2 * pad - kernel) / stride + 1;
        let positions = ho * wo;

        let pointwise = kernel == 1 && stride == 1 && pad == 0;
        let cols = if pointwise {
            Vec::new()
        } else {
            im2col(input, kernel, stride, pad, ho, wo)
        };
        let rhs: &[f32] = if pointwise { input.data() } else { &cols };

        let mut out = vec![0.0f32; cout * positions];
        if let Some(b) = bias {
            let bias = &self.params.get(b).data;
            for (row, &bv) in out.chunks_mut(positions).zip(bias) {
                row.fill(bv);
            }
        }
        gemm(cout, k_len, positions, &wparam.data, false, rhs, false, &mut out, 1.0);

        let value = Tensor::from_vec(cout, ho, wo, out);
        let cols = if self.record { cols } else { Vec::new() };
        self.push(
            value,
            Op::Conv {
                x,
                weight,
                bias,
                kernel,
                stride,
                pad,
                cols,
            },
        )
    }

    /// Group normalization over `groups` channel groups followed by a per-channel affine map.
    pub fn group_norm(&mut self, x: Var, scale: ParamId, shift: ParamId, groups: usize) -> Var {
        let input = self.value(x);
        let (c, h, w) = input.shape();
        assert!(groups > 0 && c % groups == 0, "{groups} groups do not divide {c} channels");
        let gamma = &self.params.get(scale).data;
        let beta = &self.params.get(shift).data;
        let per_group = c / groups * h * w;
        let plane = h * w;
        let mut xhat = vec![0.0f32; c * plane];
        let mut rstd = vec![0.0f32; groups];
        let mut out = vec![0.0f32; c * plane];
        for g in 0..groups {
            let range = g * per_group..(g + 1) * per_group;
            let src = &input.data()[range.clone()];
            let mean = src.iter().map(|&v| v as f64).sum::<f64>() / per_group as f64;
            let var = src
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / per_group as f64;
            let r = (1.0 / (var + NORM_EPS as f64).sqrt()) as f32;
            rstd[g] = r;
            let mean = mean as f32;
            for (i, (&v, xh)) in src.iter().zip(&mut xhat[range.clone()]).enumerate() {
                *xh = (v - mean) * r;
                let ch = g * (c / groups) + i / plane;
                out[range.start + i] = *xh * gamma[ch] + beta[ch];
            }
        }
        let xhat = if self.record { xhat } else { Vec::new() };
        self.push(
            Tensor::from_vec(c, h, w, out),
            Op::GroupNorm {
                x,
                scale,
                shift,
                groups,
                xhat,
                rstd,
            },
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v *= slope;
            }
        }
        self.push(out, Op::LeakyRelu { x, slope })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    /// Bilinear resampling to `height×width` with half-pixel centers (no corner alignment).
    pub fn resize(&mut self, x: Var, height: usize, width: usize) -> Var {
        let input = self.value(x);
        if input.height() == height && input.width() == width {
            let out = input.clone();
            return self.push(out, Op::Resize { x });
        }
        let out = bilinear_forward(input, height, width);
        self.push(out, Op::Resize { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.same_shape(vb), "add shape mismatch {:?} vs {:?}", va.shape(), vb.shape());
        let mut out = va.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(vb.data()) {
            *o += v;
        }
        self.push(out, Op::Add { a, b })
    }

    /// Adds the `C×1×1` vector `v` to every spatial position of `x`.
    pub fn add_broadcast(&mut self, x: Var, v: Var) -> Var {
        let (vx, vv) = (self.value(x), self.value(v));
        assert_eq!(vv.shape(), (vx.channels(), 1, 1), "broadcast vector shape");
        let mut out = vx.clone();
        let plane = out.plane();
        for (c, &bias) in vv.data().iter().enumerate() {
            for o in &mut out.data_mut()[c * plane..(c + 1) * plane] {
                *o += bias;
            }
        }
        self.push(out, Op::AddBroadcast { x, v })
    }

    /// Multiplies every channel of `x` pointwise by the `1×H×W` field.
    pub fn mul_field(&mut self, x: Var, field: Var) -> Var {
        let (vx, vf) = (self.value(x), self.value(field));
        assert_eq!(vf.shape(), (1, vx.height(), vx.width()), "field shape");
        let mut out = vx.clone();
        let plane = out.plane();
        for chunk in out.data_mut().chunks_mut(plane) {
            for (o, &f) in chunk.iter_mut().zip(vf.data()) {
                *o *= f;
            }
        }
        self.push(out, Op::MulField { x, field })
    }

    /// `scale·x + shift`, elementwise with constants.
    pub fn affine(&mut self, x: Var, scale: f32, shift: f32) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = scale * *v + shift;
        }
        self.push(out, Op::Affine { x, scale })
    }

    /// Attention pooling: softmax of the `1×H×W` logits over all positions, then the
    /// attention-weighted sum of `x`, giving a `C×1×1` context vector.
    pub fn gc_pool(&mut self, x: Var, logits: Var) -> Var {
        let (vx, vl) = (self.value(x), self.value(logits));
        assert_eq!(vl.shape(), (1, vx.height(), vx.width()), "attention logits shape");
        let attn = softmax(vl.data());
        let plane = vx.plane();
        let ctx: Vec<f32> = vx
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().zip(&attn).map(|(&a, &b)| a * b).sum())
            .collect();
        let c = vx.channels();
        self.push(Tensor::from_vec(c, 1, 1, ctx), Op::GcPool { x, logits, attn })
    }

    /// Per-pixel maximum of the softmax over channels: a `1×H×W` map in `[1/C, 1]`.
    pub fn max_softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let (c, h, w) = vx.shape();
        let plane = h * w;
        let mut probs = vec![0.0f32; c * plane];
        let mut argmax = vec![0u32; plane];
        let mut out = vec![0.0f32; plane];
        let data = vx.data();
        for p in 0..plane {
            let mut m = f32::NEG_INFINITY;
            for k in 0..c {
                m = m.max(data[k * plane + p]);
            }
            let mut sum = 0.0f32;
            for k in 0..c {
                let e = (data[k * plane + p] - m).exp();
                probs[k * plane + p] = e;
                sum += e;
            }
            let mut best = 0;
            for k in 0..c {
                probs[k * plane + p] /= sum;
                if probs[k * plane + p] > probs[best * plane + p] {
                    best = k;
                }
            }
            argmax[p] = best as u32;
            out[p] = probs[best * plane + p];
        }
        let (probs, argmax) = if self.record {
            (probs, argmax)
        } else {
            (Vec::new(), Vec::new())
        };
        self.push(
            Tensor::from_vec(1, h, w, out),
            Op::MaxSoftmax { x, probs, argmax },
        )
    }

    /// Back-propagates the given output gradients and returns the parameter gradients.
    pub fn backward(&self, seeds: &[(Var, &Tensor)]) -> Gradients {
        assert!(self.record, "backward on an inference graph");
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert!(self.value(*v).same_shape(g), "seed gradient shape mismatch");
            accumulate(&mut grads, *v, self.value(*v).data().len(), |buf| {
                for (b, &x) in buf.iter_mut().zip(g.data()) {
                    *b += x;
                }
            });
        }
        let mut pgrads = Gradients::zeros_like(self.params);

        for idx in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Conv {
                    x,
                    weight,
                    bias,
                    kernel,
                    stride,
                    pad,
                    cols,
                } => {
                    let input = self.value(*x);
                    let (cin, h, w) = input.shape();
                    let (cout, ho, wo) = node.value.shape();
                    let positions = ho * wo;
                    let k_len = cin * kernel * kernel;
                    let pointwise = *kernel == 1 && *stride == 1 && *pad == 0;
                    let rhs: &[f32] = if pointwise { input.data() } else { cols };
                    // dWᵀ = cols · dYᵀ keeps both operands streaming along positions.
                    let mut dwt = vec![0.0f32; k_len * cout];
                    gemm(k_len, positions, cout, rhs, false, &gout, true, &mut dwt, 0.0);
                    let dw = pgrads.get_mut(*weight);
                    for (kk, row) in dwt.chunks(cout).enumerate() {
                        for (co, &v) in row.iter().enumerate() {
                            dw[co * k_len + kk] += v;
                        }
                    }
                    if let Some(b) = bias {
                        for (gb, row) in pgrads.get_mut(*b).iter_mut().zip(gout.chunks(positions)) {
                            *gb += row.iter().sum::<f32>();
                        }
                    }
                    let wdata = &self.params.get(*weight).data;
                    if pointwise {
                        accumulate(&mut grads, *x, cin * h * w, |buf| {
                            gemm(k_len, cout, positions, wdata, true, &gout, false, buf, 1.0);
                        });
                    } else {
                        let mut dcols = vec![0.0f32; k_len * positions];
                        gemm(k_len, cout, positions, wdata, true, &gout, false, &mut dcols, 0.0);
                        accumulate(&mut grads, *x, cin * h * w, |buf| {
                            col2im(&dcols, buf, cin, h, w, *kernel, *stride, *pad, ho, wo);
                        });
                    }
                }
                Op::GroupNorm {
                    x,
                    scale,
                    shift,
                    groups,
                    xhat,
                    rstd,
                } => {
                    let (c, h, w) = node.value.shape();
                    let plane = h * w;
                    let cpg = c / groups;
                    let per_group = cpg * plane;
                    let gamma = &self.params.get(*scale).data;
                    {
                        let gs = pgrads.get_mut(*scale);
                        for ch in 0..c {
                            let r = ch * plane..(ch + 1) * plane;
                            gs[ch] += gout[r.clone()]
                                .iter()
                                .zip(&xhat[r])
                                .map(|(&a, &b)| a * b)
                                .sum::<f32>();
                        }
                    }
                    {
                        let gb = pgrads.get_mut(*shift);
                        for ch in 0..c {
                            gb[ch] += gout[ch * plane..(ch + 1) * plane].iter().sum::<f32>();
                        }
                    }
                    accumulate(&mut grads, *x, c * plane, |buf| {
                        let n = per_group as f32;
                        for g in 0..*groups {
                            let base = g * per_group;
                            let mut sum_d = 0.0f32;
                            let mut sum_dx = 0.0f32;
                            for i in 0..per_group {
                                let ch = g * cpg + i / plane;
                                let d = gout[base + i] * gamma[ch];
                                sum_d += d;
                                sum_dx += d * xhat[base + i];
                            }
                            let r = rstd[g];
                            for i in 0..per_group {
                                let ch = g * cpg + i / plane;
                                let d = gout[base + i] * gamma[ch];
                                buf[base + i] +=
                                    r / n * (n * d - sum_d - xhat[base + i] * sum_dx);
                            }
                        }
                    });
                }
                Op::LeakyRelu { x, slope } => {
                    let input = self.value(*x).data();
                    accumulate(&mut grads, *x, input.len(), |buf| {
                        for ((b, &g), &v) in buf.iter_mut().zip(&gout).zip(input) {
                            *b += if v < 0.0 { g * slope } else { g };
                        }
                    });
                }
                Op::Resize { x } => {
                    let input = self.value(*x);
                    let (c, h, w) = input.shape();
                    let (_, ho, wo) = node.value.shape();
                    accumulate(&mut grads, *x, c * h * w, |buf| {
                        if ho == h && wo == w {
                            for (b, &g) in buf.iter_mut().zip(&gout) {
                                *b += g;
                            }
                        } else {
                            bilinear_backward(&gout, buf, c, h, w, ho, wo);
                        }
                    });
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        accumulate(&mut grads, v, gout.len(), |buf| {
                            for (b, &g) in buf.iter_mut().zip(&gout) {
                                *b += g;
                            }
                        });
                    }
                }
                Op::AddBroadcast { x, v } => {
                    accumulate(&mut grads, *x, gout.len(), |buf| {
                        for (b, &g) in buf.iter_mut().zip(&gout) {
                            *b += g;
                        }
                    });
                    let plane = node.value.plane();
                    let c = node.value.channels();
                    accumulate(&mut grads, *v, c, |buf| {
                        for (b, row) in buf.iter_mut().zip(gout.chunks(plane)) {
                            *b += row.iter().sum::<f32>();
                        }
                    });
                }
                Op::MulField { x, field } => {
                    let vx = self.value(*x).data();
                    let vf = self.value(*field).data();
                    let plane = vf.len();
                    accumulate(&mut grads, *x, vx.len(), |buf| {
                        for (bc, gc) in buf.chunks_mut(plane).zip(gout.chunks(plane)) {
                            for ((b, &g), &f) in bc.iter_mut().zip(gc).zip(vf) {
                                *b += g * f;
                            }
                        }
                    });
                    accumulate(&mut grads, *field, plane, |buf| {
                        for (xc, gc) in vx.chunks(plane).zip(gout.chunks(plane)) {
                            for ((b, &g), &xv) in buf.iter_mut().zip(gc).zip(xc) {
                                *b += g * xv;
                            }
                        }
                    });
                }
                Op::Affine { x, scale } => {
                    accumulate(&mut grads, *x, gout.len(), |buf| {
                        for (b, &g) in buf.iter_mut().zip(&gout) {
                            *b += g * scale;
                        }
                    });
                }
                Op::GcPool { x, logits, attn } => {
                    let vx = self.value(*x).data();
                    let plane = attn.len();
                    accumulate(&mut grads, *x, vx.len(), |buf| {
                        for (bc, &g) in buf.chunks_mut(plane).zip(&gout) {
                            for (b, &a) in bc.iter_mut().zip(attn) {
                                *b += g * a;
                            }
                        }
                    });
                    let mut dattn = vec![0.0f32; plane];
                    for (xc, &g) in vx.chunks(plane).zip(&gout) {
                        for (d, &xv) in dattn.iter_mut().zip(xc) {
                            *d += g * xv;
                        }
                    }
                    let dot: f32 = dattn.iter().zip(attn).map(|(&d, &a)| d * a).sum();
                    accumulate(&mut grads, *logits, plane, |buf| {
                        for ((b, &d), &a) in buf.iter_mut().zip(&dattn).zip(attn) {
                            *b += a * (d - dot);
                        }
                    });
                }
                Op::MaxSoftmax { x, probs, argmax } => {
                    let plane = argmax.len();
                    let c = probs.len() / plane;
                    accumulate(&mut grads, *x, probs.len(), |buf| {
                        for p in 0..plane {
                            let best = argmax[p] as usize;
                            let pb = probs[best * plane + p];
                            let g = gout[p];
                            for k in 0..c {
                                let delta = if k == best { 1.0 } else { 0.0 };
                                buf[k * plane + p] += g * pb * (delta - probs[k * plane + p]);
                            }
                        }
                    });
                }
            }
        }
        pgrads
    }
}

fn accumulate(
    grads: &mut [Option<Vec<f32>>],
    v: Var,
    len: usize,
    f: impl FnOnce(&mut [f32]),
) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

pub(crate) fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out: Vec<f32> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f32 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// `C = A·B + beta·C` for row-major `A: m×k`, `B: k×n` (either optionally stored transposed).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    beta: f32,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above and the strides describe in-bounds layouts.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output columns `[lo, hi)` whose input column `ox*stride + k - pad` lies inside `[0, w)`.
fn valid_range(w: usize, wo: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k < pad { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if w + pad > k { ((w - 1 + pad - k) / stride + 1).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col(input: &Tensor, kernel: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Vec<f32> {
    let (c, h, w) = input.shape();
    let positions = ho * wo;
    let mut cols = vec![0.0f32; c * kernel * kernel * positions];
    let data = input.data();
    for ci in 0..c {
        let src = &data[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kernel {
            let (oy_lo, oy_hi) = valid_range(h, ho, ky, stride, pad);
            for kx in 0..kernel {
                let (ox_lo, ox_hi) = valid_range(w, wo, kx, stride, pad);
                if ox_lo >= ox_hi {
                    continue;
                }
                let row = (ci * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                let ix0 = ox_lo * stride + kx - pad;
                let n = ox_hi - ox_lo;
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ky - pad;
                    let srow = &src[iy * w..(iy + 1) * w];
                    let drow = &mut dst[oy * wo + ox_lo..oy * wo + ox_hi];
                    if stride == 1 {
                        drow.copy_from_slice(&srow[ix0..ix0 + n]);
                    } else {
                        for (d, s) in drow.iter_mut().zip(srow[ix0..].iter().step_by(stride)) {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f32],
    out: &mut [f32],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let positions = ho * wo;
    for ci in 0..c {
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kernel {
            let (oy_lo, oy_hi) = valid_range(h, ho, ky, stride, pad);
            for kx in 0..kernel {
                let (ox_lo, ox_hi) = valid_range(w, wo, kx, stride, pad);
                if ox_lo >= ox_hi {
                    continue;
                }
                let row = (ci * kernel + ky) * kernel + kx;
                let src = &cols[row * positions..(row + 1) * positions];
                let ix0 = ox_lo * stride + kx - pad;
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ky - pad;
                    let drow = &mut dst[iy * w + ix0..(iy + 1) * w];
                    let srow = &src[oy * wo + ox_lo..oy * wo + ox_hi];
                    for (d, s) in drow.iter_mut().step_by(stride).zip(srow) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Source taps `(i0, i1, frac)` for each output index of a half-pixel bilinear resize.
pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = (src - i0 as f64) as f32;
            (i0, i1, if i0 == i1 { 0.0 } else { frac })
        })
        .collect()
}

pub(crate) fn bilinear_forward(input: &Tensor, height: usize, width: usize) -> Tensor {
    let (c, h, w) = input.shape();
    let ty = bilinear_taps(h, height);
    let tx = bilinear_taps(w, width);
    let mut out = vec![0.0f32; c * height * width];
    let data = input.data();
    for ci in 0..c {
        let src = &data[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * height * width..(ci + 1) * height * width];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                dst[oy * width + ox] = top + (bot - top) * fy;
            }
        }
    }
    Tensor::from_vec(c, height, width, out)
}

fn bilinear_backward(gout: &[f32], buf: &mut [f32], c: usize, h: usize, w: usize, ho: usize, wo: usize) {
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    for ci in 0..c {
        let g = &gout[ci * ho * wo..(ci + 1) * ho * wo];
        let dst = &mut buf[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * wo + ox];
                let top = v * (1.0 - fy);
                let bot = v * fy;
                dst[y0 * w + x0] += top * (1.0 - fx);
                dst[y0 * w + x1] += top * fx;
                dst[y1 * w + x0] += bot * (1.0 - fx);
                dst[y1 * w + x1] += bot * fx;
            }
        }
    }
}
