use alloc::vec::Vec;

use super::{check_class, check_target, lift_to_input, weighted_planes};
use crate::engine::{Network, Tensor};
use crate::error::Result;
use crate::tensor::AttributionMap;

/// GradCAM: channel weights are the spatial mean of `d logit_c / d A^k`;
/// the map is `ReLU(sum_k w_k A^k)` lifted to the input frame.
pub fn gradcam(net: &Network, x: &Tensor, class_idx: usize, target_layer: usize) -> Result<AttributionMap> {
    let (acts, grads) = activations_and_grads(net, x, class_idx, target_layer)?;
    let weights: Vec<f64> = (0..acts.shape().channels())
        .map(|k| {
            let g = grads.plane(k);
            g.iter().sum::<f64>() / g.len() as f64
        })
        .collect();
    let cam = weighted_planes(&acts, &weights);
    lift_to_input(&cam, acts.shape().frame(), x.shape().frame())
}

/// GradCAM++ with the exponential-score closed form: per position
/// `alpha = g^2 / (2 g^2 + sum(A^k) g^3)` (zero where the denominator is zero),
/// channel weight `w_k = sum alpha * ReLU(g)`, map `ReLU(sum_k w_k A^k)`.
pub fn gradcam_pp(net: &Network, x: &Tensor, class_idx: usize, target_layer: usize) -> Result<AttributionMap> {
    let (acts, grads) = activations_and_grads(net, x, class_idx, target_layer)?;
    let weights: Vec<f64> = (0..acts.shape().channels())
        .map(|k| {
            let activation_sum: f64 = acts.plane(k).iter().sum();
            grads
                .plane(k)
                .iter()
                .map(|&g| {
                    let g2 = g * g;
                    let denom = 2.0 * g2 + activation_sum * g2 * g;
                    let alpha = if denom != 0.0 { g2 / denom } else { 0.0 };
                    alpha * g.max(0.0)
                })
                .sum()
        })
        .collect();
    let cam = weighted_planes(&acts, &weights);
    lift_to_input(&cam, acts.shape().frame(), x.shape().frame())
}

fn activations_and_grads(net: &Network, x: &Tensor, class_idx: usize, target_layer: usize) -> Result<(Tensor, Tensor)> {
    check_target(net, target_layer)?;
    check_class(net, class_idx)?;
    let trace = net.forward(x)?;
    let back = net.backward(x, &trace, class_idx, false)?;
    Ok((trace.output(target_layer).clone(), back.layer_grad(target_layer).clone()))
}
