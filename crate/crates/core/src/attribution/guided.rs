use alloc::vec::Vec;

use super::{check_class, ChannelReduction};
use crate::engine::{Network, Tensor};
use crate::error::Result;
use crate::tensor::AttributionMap;

/// Guided Backpropagation: the input gradient under the guided-ReLU rule,
/// reduced over channels and clamped at zero.
pub fn guided_backprop(
    net: &Network,
    x: &Tensor,
    class_idx: usize,
    reduction: ChannelReduction,
) -> Result<AttributionMap> {
    check_class(net, class_idx)?;
    let trace = net.forward(x)?;
    let back = net.backward(x, &trace, class_idx, true)?;
    let grad = back.input_grad();
    let channels = grad.shape().channels();
    let (h, w) = grad.shape().frame();
    let reduced: Vec<f64> = (0..h * w)
        .map(|i| {
            let lanes = (0..channels).map(|c| grad.plane(c)[i]);
            match reduction {
                ChannelReduction::Max => lanes.fold(f64::NEG_INFINITY, f64::max),
                ChannelReduction::Mean => lanes.sum::<f64>() / channels as f64,
            }
        })
        .collect();
    AttributionMap::from_f64_clamped(h, w, &reduced)
}
