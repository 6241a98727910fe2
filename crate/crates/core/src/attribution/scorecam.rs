use alloc::vec::Vec;

use super::{check_class, check_target, lift_to_input, min_max, weighted_planes};
use crate::engine::{softmax, Network, Tensor};
use crate::error::Result;
use crate::tensor::{resize_plane, AttributionMap};

/// Scoring variant used by [`scorecam`], recorded in output metadata.
pub const SCORECAM_SCORING: &str = "softmax_probability_minus_zero_image_baseline";

/// ScoreCAM. Each target channel is upsampled to the input frame, min-max
/// normalized and used to mask the input; its weight is the class softmax
/// probability on the masked input minus the probability on an all-zero
/// input. Channels with a constant upsampled map get weight zero. Only
/// forward passes are run.
pub fn scorecam(net: &Network, x: &Tensor, class_idx: usize, target_layer: usize) -> Result<AttributionMap> {
    let (channels, layer_h, layer_w) = check_target(net, target_layer)?;
    check_class(net, class_idx)?;
    let trace = net.forward(x)?;
    let acts = trace.output(target_layer);

    let baseline = softmax(net.forward(&Tensor::zeros(x.shape()))?.logits())[class_idx];
    let (in_h, in_w) = x.shape().frame();
    let in_channels = x.shape().channels();
    let mut masked = x.clone();
    let mut weights = Vec::with_capacity(channels);
    for k in 0..channels {
        let mut upsampled = resize_plane(acts.plane(k), layer_h, layer_w, in_h, in_w);
        if !min_max(&mut upsampled) {
            weights.push(0.0);
            continue;
        }
        for c in 0..in_channels {
            let plane = c * in_h * in_w..(c + 1) * in_h * in_w;
            for ((m, &v), &h) in masked.data_mut()[plane.clone()].iter_mut().zip(&x.data()[plane]).zip(&upsampled) {
                *m = v * h;
            }
        }
        let score = softmax(net.forward(&masked)?.logits())[class_idx];
        weights.push(score - baseline);
    }
    let cam = weighted_planes(acts, &weights);
    lift_to_input(&cam, (layer_h, layer_w), (in_h, in_w))
}
