//! Feature attribution over the [`engine`](crate::engine).
//!
//! Every method returns a non-negative [`AttributionMap`] in the input frame.
//! CAM-family methods build their map at the target layer's resolution and
//! lift it with half-pixel-centre bilinear interpolation. Maps are returned
//! unnormalized unless the method itself normalizes (FullGrad).

mod fullgrad;
mod gradcam;
mod guided;
mod scorecam;

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{Network, Tensor};
use crate::error::{bail, Result};
use crate::tensor::{resize_plane, AttributionMap};

pub use fullgrad::{fullgrad, fullgrad_decomposition, FullGradDecomposition};
pub use gradcam::{gradcam, gradcam_pp};
pub use guided::guided_backprop;
pub use scorecam::{scorecam, SCORECAM_SCORING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    GradCam,
    GradCamPp,
    GuidedBackprop,
    FullGrad,
    ScoreCam,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::GradCam,
        MethodKind::GradCamPp,
        MethodKind::GuidedBackprop,
        MethodKind::FullGrad,
        MethodKind::ScoreCam,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodKind::GradCam => "grad_cam",
            MethodKind::GradCamPp => "grad_cam_pp",
            MethodKind::GuidedBackprop => "guided_backprop",
            MethodKind::FullGrad => "full_grad",
            MethodKind::ScoreCam => "score_cam",
        }
    }

    /// Whether the method reads a target layer's activation stack.
    pub fn uses_target_layer(&self) -> bool {
        matches!(self, MethodKind::GradCam | MethodKind::GradCamPp | MethodKind::ScoreCam)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: alloc::string::String =
            s.chars().filter(|c| c.is_ascii_alphanumeric() || *c == '+').map(|c| c.to_ascii_lowercase()).collect();
        Ok(match key.as_str() {
            "gradcam" => MethodKind::GradCam,
            "gradcampp" | "gradcam++" => MethodKind::GradCamPp,
            "guidedbackprop" | "guidedbackpropagation" | "gbp" => MethodKind::GuidedBackprop,
            "fullgrad" => MethodKind::FullGrad,
            "scorecam" => MethodKind::ScoreCam,
            _ => bail!(Param, "unknown attribution method {:?}", s),
        })
    }
}

/// How Guided Backpropagation collapses the colour channels of the input gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelReduction {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub kind: MethodKind,
    /// Layer whose output activations feed CAM-family methods; `None` picks the
    /// last spatial layer.
    #[serde(default)]
    pub target_layer: Option<usize>,
    #[serde(default)]
    pub channel_reduction: ChannelReduction,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        Self { kind, target_layer: None, channel_reduction: ChannelReduction::default() }
    }

    pub fn with_target_layer(mut self, layer: usize) -> Self {
        self.target_layer = Some(layer);
        self
    }

    /// Target layer this spec resolves to on `net`.
    pub fn resolve_target(&self, net: &Network) -> Result<usize> {
        match self.target_layer {
            Some(layer) => check_target(net, layer).map(|_| layer),
            None => default_target_layer(net),
        }
    }
}

/// Last layer producing a `C x H x W` stack.
pub fn default_target_layer(net: &Network) -> Result<usize> {
    match net.last_spatial_layer() {
        Some(layer) => Ok(layer),
        None => bail!(LayerKind, "network has no spatial layer to explain"),
    }
}

/// Routes to the method named by `spec`.
pub fn attribute(spec: &MethodSpec, net: &Network, x: &Tensor, class_idx: usize) -> Result<AttributionMap> {
    match spec.kind {
        MethodKind::GradCam => gradcam(net, x, class_idx, spec.resolve_target(net)?),
        MethodKind::GradCamPp => gradcam_pp(net, x, class_idx, spec.resolve_target(net)?),
        MethodKind::ScoreCam => scorecam(net, x, class_idx, spec.resolve_target(net)?),
        MethodKind::GuidedBackprop => guided_backprop(net, x, class_idx, spec.channel_reduction),
        MethodKind::FullGrad => fullgrad(net, x, class_idx),
    }
}

/// Validates a CAM target and returns its `(channels, height, width)`.
pub(crate) fn check_target(net: &Network, layer: usize) -> Result<(usize, usize, usize)> {
    let Some(shape) = net.shapes().get(layer) else {
        bail!(Index, "target layer {} of {}", layer, net.shapes().len());
    };
    match *shape {
        crate::engine::Shape::Spatial { channels, height, width } => Ok((channels, height, width)),
        crate::engine::Shape::Flat(_) => {
            bail!(LayerKind, "layer {} ({}) has no spatial output", layer, net.layers()[layer].name())
        }
    }
}

pub(crate) fn check_class(net: &Network, class_idx: usize) -> Result<()> {
    if class_idx >= net.class_count() {
        bail!(Index, "class {} with {} classes", class_idx, net.class_count());
    }
    Ok(())
}

/// `sum_k weights[k] * acts[k]` over the planes of a `C x H x W` activation.
pub(crate) fn weighted_planes(acts: &Tensor, weights: &[f64]) -> Vec<f64> {
    let (h, w) = acts.shape().frame();
    let mut out = alloc::vec![0.0; h * w];
    for (k, &wk) in weights.iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(acts.plane(k)) {
            *o += wk * a;
        }
    }
    out
}

/// Rectifies a layer-resolution map and lifts it into the input frame.
pub(crate) fn lift_to_input(
    values: &[f64],
    layer_frame: (usize, usize),
    input_frame: (usize, usize),
) -> Result<AttributionMap> {
    let rectified: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
    let (h, w) = layer_frame;
    let (oh, ow) = input_frame;
    let lifted = resize_plane(&rectified, h, w, oh, ow);
    AttributionMap::from_f64_clamped(oh, ow, &lifted)
}

/// Min-max normalization to `[0, 1]`; a constant plane becomes all zeros.
pub(crate) fn min_max(values: &mut [f64]) -> bool {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        values.fill(0.0);
        return false;
    }
    let span = hi - lo;
    values.iter_mut().for_each(|v| *v = (*v - lo) / span);
    true
}
