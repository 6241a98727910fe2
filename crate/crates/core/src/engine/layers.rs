use alloc::vec::Vec;

use super::{conv_axis, LayerSpec, Padding, Shape, Tensor};

pub(super) struct BackwardStep {
    pub input_grad: Tensor,
    pub bias_grad: Option<Vec<f64>>,
}

fn spatial(shape: Shape) -> (usize, usize, usize) {
    match shape {
        Shape::Spatial { channels, height, width } => (channels, height, width),
        Shape::Flat(n) => (n, 1, 1),
    }
}

/// Forward kernel. Shapes were validated when the network was built.
pub(super) fn forward(layer: &LayerSpec, input: &Tensor, out_shape: Shape) -> Tensor {
    let x = input.data();
    let mut out = Tensor::zeros(out_shape);
    let y = out.data_mut();
    match layer {
        LayerSpec::Conv2d { kernel: [kh, kw], stride, padding, weight, bias, .. } => {
            let (ic, ih, iw) = spatial(input.shape());
            let (oc, oh, ow) = spatial(out_shape);
            let pad_top = pad(ih, *kh, *stride, *padding);
            let pad_left = pad(iw, *kw, *stride, *padding);
            for o in 0..oc {
                let b = bias.as_ref().map_or(0.0, |b| b[o]);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b;
                        for i in 0..ic {
                            for ky in 0..*kh {
                                let Some(iy) = tap(oy, ky, *stride, pad_top, ih) else { continue };
                                for kx in 0..*kw {
                                    let Some(ix) = tap(ox, kx, *stride, pad_left, iw) else { continue };
                                    acc += weight[((o * ic + i) * kh + ky) * kw + kx] * x[(i * ih + iy) * iw + ix];
                                }
                            }
                        }
                        y[(o * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        LayerSpec::Relu => {
            for (o, &v) in y.iter_mut().zip(x) {
                *o = if v > 0.0 { v } else { 0.0 };
            }
        }
        LayerSpec::MaxPool { kernel, stride } => {
            let (c, ih, iw) = spatial(input.shape());
            let (_, oh, ow) = spatial(out_shape);
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let idx = window_argmax(x, ch, ih, iw, oy * stride, ox * stride, *kernel);
                        y[(ch * oh + oy) * ow + ox] = x[idx];
                    }
                }
            }
        }
        LayerSpec::AvgPool { kernel, stride } => {
            let (c, ih, iw) = spatial(input.shape());
            let (_, oh, ow) = spatial(out_shape);
            let area = (kernel * kernel) as f64;
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ky in 0..*kernel {
                            for kx in 0..*kernel {
                                acc += x[(ch * ih + oy * stride + ky) * iw + ox * stride + kx];
                            }
                        }
                        y[(ch * oh + oy) * ow + ox] = acc / area;
                    }
                }
            }
        }
        LayerSpec::GlobalAvgPool => {
            let (c, h, w) = spatial(input.shape());
            let area = (h * w) as f64;
            for (ch, out) in y.iter_mut().enumerate().take(c) {
                *out = input.plane(ch).iter().sum::<f64>() / area;
            }
        }
        LayerSpec::Flatten => y.copy_from_slice(x),
        LayerSpec::Dense { out_dim, weight, bias } => {
            let n = x.len();
            for o in 0..*out_dim {
                let row = &weight[o * n..(o + 1) * n];
                let b = bias.as_ref().map_or(0.0, |b| b[o]);
                y[o] = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            }
        }
    }
    out
}

/// Backward kernel: maps the gradient w.r.t. this layer's output to the
/// gradient w.r.t. its input (and its bias, when present).
pub(super) fn backward(
    layer: &LayerSpec,
    input: &Tensor,
    output: &Tensor,
    grad_out: &Tensor,
    guided: bool,
) -> BackwardStep {
    let x = input.data();
    let g = grad_out.data();
    let mut grad_in = Tensor::zeros(input.shape());
    let gi = grad_in.data_mut();
    let mut bias_grad = None;
    match layer {
        LayerSpec::Conv2d { kernel: [kh, kw], stride, padding, weight, bias, .. } => {
            let (ic, ih, iw) = spatial(input.shape());
            let (oc, oh, ow) = spatial(output.shape());
            let pad_top = pad(ih, *kh, *stride, *padding);
            let pad_left = pad(iw, *kw, *stride, *padding);
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = g[(o * oh + oy) * ow + ox];
                        if go == 0.0 {
                            continue;
                        }
                        for i in 0..ic {
                            for ky in 0..*kh {
                                let Some(iy) = tap(oy, ky, *stride, pad_top, ih) else { continue };
                                for kx in 0..*kw {
                                    let Some(ix) = tap(ox, kx, *stride, pad_left, iw) else { continue };
                                    gi[(i * ih + iy) * iw + ix] += weight[((o * ic + i) * kh + ky) * kw + kx] * go;
                                }
                            }
                        }
                    }
                }
            }
            if bias.is_some() {
                bias_grad = Some((0..oc).map(|o| grad_out.plane(o).iter().sum()).collect());
            }
        }
        LayerSpec::Relu => {
            for ((d, &v), &u) in gi.iter_mut().zip(x).zip(g) {
                let open = v > 0.0 && (!guided || u > 0.0);
                *d = if open { u } else { 0.0 };
            }
        }
        LayerSpec::MaxPool { kernel, stride } => {
            let (c, ih, iw) = spatial(input.shape());
            let (_, oh, ow) = spatial(output.shape());
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let idx = window_argmax(x, ch, ih, iw, oy * stride, ox * stride, *kernel);
                        gi[idx] += g[(ch * oh + oy) * ow + ox];
                    }
                }
            }
        }
        LayerSpec::AvgPool { kernel, stride } => {
            let (c, ih, iw) = spatial(input.shape());
            let (_, oh, ow) = spatial(output.shape());
            let area = (kernel * kernel) as f64;
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let share = g[(ch * oh + oy) * ow + ox] / area;
                        for ky in 0..*kernel {
                            for kx in 0..*kernel {
                                gi[(ch * ih + oy * stride + ky) * iw + ox * stride + kx] += share;
                            }
                        }
                    }
                }
            }
        }
        LayerSpec::GlobalAvgPool => {
            let (c, h, w) = spatial(input.shape());
            let area = (h * w) as f64;
            for ch in 0..c {
                let share = g[ch] / area;
                gi[ch * h * w..(ch + 1) * h * w].fill(share);
            }
        }
        LayerSpec::Flatten => gi.copy_from_slice(g),
        LayerSpec::Dense { out_dim, weight, bias } => {
            let n = x.len();
            for o in 0..*out_dim {
                let row = &weight[o * n..(o + 1) * n];
                for (d, w) in gi.iter_mut().zip(row) {
                    *d += w * g[o];
                }
            }
            if bias.is_some() {
                bias_grad = Some(g.to_vec());
            }
        }
    }
    BackwardStep { input_grad: grad_in, bias_grad }
}

pub(super) fn kink_margin(layer: &LayerSpec, input: &Tensor) -> f64 {
    let x = input.data();
    match layer {
        LayerSpec::Relu => x.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())),
        LayerSpec::MaxPool { kernel, stride } => {
            let (c, ih, iw) = spatial(input.shape());
            let (oh, ow) = ((ih - kernel) / stride + 1, (iw - kernel) / stride + 1);
            let mut margin = f64::INFINITY;
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                        for ky in 0..*kernel {
                            for kx in 0..*kernel {
                                let v = x[(ch * ih + oy * stride + ky) * iw + ox * stride + kx];
                                if v > best {
                                    second = best;
                                    best = v;
                                } else if v > second {
                                    second = v;
                                }
                            }
                        }
                        // A window whose maximum is exactly zero only holds rectified
                        // lanes, which stay at zero under small perturbations.
                        if best != 0.0 {
                            margin = margin.min(best - second);
                        }
                    }
                }
            }
            margin
        }
        _ => f64::INFINITY,
    }
}

pub(super) fn pattern(layer: &LayerSpec, input: &Tensor, out: &mut Vec<usize>) {
    let x = input.data();
    match layer {
        LayerSpec::Relu => out.extend(x.iter().map(|&v| match v {
            v if v > 0.0 => 2,
            v if v < 0.0 => 0,
            _ => 1,
        })),
        LayerSpec::MaxPool { kernel, stride } => {
            let (c, ih, iw) = spatial(input.shape());
            let (oh, ow) = ((ih - kernel) / stride + 1, (iw - kernel) / stride + 1);
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        out.push(window_argmax(x, ch, ih, iw, oy * stride, ox * stride, *kernel));
                    }
                }
            }
        }
        _ => {}
    }
}

fn pad(n: usize, k: usize, stride: usize, padding: Padding) -> usize {
    conv_axis(n, k, stride, padding).map_or(0, |(_, p)| p)
}

/// Input index hit by kernel tap `k` of output position `o`, or `None` in the padding.
#[inline]
fn tap(o: usize, k: usize, stride: usize, pad: usize, n: usize) -> Option<usize> {
    (o * stride + k).checked_sub(pad).filter(|&i| i < n)
}

/// Flat index of the first (row-major) maximum within a pooling window.
#[inline]
fn window_argmax(x: &[f64], ch: usize, ih: usize, iw: usize, y0: usize, x0: usize, k: usize) -> usize {
    let mut best = (ch * ih + y0) * iw + x0;
    for ky in 0..k {
        for kx in 0..k {
            let idx = (ch * ih + y0 + ky) * iw + x0 + kx;
            if x[idx] > x[best] {
                best = idx;
            }
        }
    }
    best
}
