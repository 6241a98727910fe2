use alloc::vec::Vec;

use super::{check_class, min_max};
use crate::engine::{Network, Shape, Tensor};
use crate::error::Result;
use crate::tensor::{resize_plane, AttributionMap};

/// Raw FullGrad split of one logit into an input-gradient term and one term per
/// biased layer. For the engine's piecewise-linear layers
/// `logit == input_term + sum(bias_terms)` up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGradDecomposition {
    pub logit: f64,
    /// `sum(grad_x logit * x)`.
    pub input_term: f64,
    /// `(layer, sum_k d logit / d b_k * b_k)` for every biased layer.
    pub bias_terms: Vec<(usize, f64)>,
}

impl FullGradDecomposition {
    pub fn total(&self) -> f64 {
        self.input_term + self.bias_terms.iter().map(|(_, t)| t).sum::<f64>()
    }

    /// `|logit - total|`.
    pub fn residual(&self) -> f64 {
        (self.logit - self.total()).abs()
    }
}

pub fn fullgrad_decomposition(net: &Network, x: &Tensor, class_idx: usize) -> Result<FullGradDecomposition> {
    check_class(net, class_idx)?;
    let trace = net.forward(x)?;
    let back = net.backward(x, &trace, class_idx, false)?;
    let input_term = back.input_grad().data().iter().zip(x.data()).map(|(g, v)| g * v).sum();
    let bias_terms = net
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, layer)| {
            let bias = layer.bias()?;
            let grad = back.bias_grad(i)?;
            Some((i, grad.iter().zip(bias).map(|(g, b)| g * b).sum()))
        })
        .collect();
    Ok(FullGradDecomposition { logit: trace.logits()[class_idx], input_term, bias_terms })
}

/// FullGrad saliency: `psi(grad_x * x)` plus, for every biased layer with a
/// spatial output, `psi(grad_out * b)` with the bias broadcast over the grid.
/// `psi` takes absolute values, sums channels, resizes to the input frame and
/// min-max normalizes each component. Dense-layer biases have no spatial grid
/// and only enter [`fullgrad_decomposition`].
pub fn fullgrad(net: &Network, x: &Tensor, class_idx: usize) -> Result<AttributionMap> {
    check_class(net, class_idx)?;
    let trace = net.forward(x)?;
    let back = net.backward(x, &trace, class_idx, false)?;
    let frame = x.shape().frame();
    let mut total = alloc::vec![0.0; frame.0 * frame.1];

    let input_component = abs_channel_sum(back.input_grad(), |_| 1.0, Some(x));
    accumulate(&mut total, input_component, x.shape().frame(), frame);

    for (i, layer) in net.layers().iter().enumerate() {
        let Some(bias) = layer.bias() else { continue };
        let grad_out = back.layer_grad(i);
        if !grad_out.shape().is_spatial() {
            continue;
        }
        let component = abs_channel_sum(grad_out, |k| bias[k], None);
        accumulate(&mut total, component, grad_out.shape().frame(), frame);
    }
    AttributionMap::from_f64_clamped(frame.0, frame.1, &total)
}

/// `sum_k |g[k] * scale(k) * other[k]|` per position.
fn abs_channel_sum(g: &Tensor, scale: impl Fn(usize) -> f64, other: Option<&Tensor>) -> Vec<f64> {
    let (h, w) = g.shape().frame();
    let channels = match g.shape() {
        Shape::Spatial { channels, .. } => channels,
        Shape::Flat(_) => 1,
    };
    let mut out = alloc::vec![0.0; h * w];
    for k in 0..channels {
        let s = scale(k);
        let gp = g.plane(k);
        for (i, o) in out.iter_mut().enumerate() {
            let v = other.map_or(1.0, |t| t.plane(k)[i]);
            *o += (gp[i] * s * v).abs();
        }
    }
    out
}

fn accumulate(total: &mut [f64], component: Vec<f64>, from: (usize, usize), to: (usize, usize)) {
    let mut resized = resize_plane(&component, from.0, from.1, to.0, to.1);
    if min_max(&mut resized) {
        total.iter_mut().zip(&resized).for_each(|(t, v)| *t += v);
    }
}
