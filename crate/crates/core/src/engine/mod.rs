//! A minimal single-sample CNN with exact reverse-mode gradients.
//!
//! Activations and parameters are `f64`. A [`Network`] is an ordered list of
//! [`LayerSpec`]s whose shapes are checked once at construction; [`Network::forward`]
//! records every layer output and [`Network::backward`] returns gradients of one
//! logit with respect to the input, every layer output and every bias vector.

mod builder;
mod gradcheck;
mod layers;

use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::ImageTensor;

pub use builder::NetworkBuilder;
pub use gradcheck::{grad_check, grad_check_with, GradCheckConfig, GradCheckReport};

/// Activation shape: a `C x H x W` stack or a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<usize>", try_from = "Vec<usize>")]
pub enum Shape {
    Spatial { channels: usize, height: usize, width: usize },
    Flat(usize),
}

impl Shape {
    pub fn spatial(channels: usize, height: usize, width: usize) -> Self {
        Shape::Spatial { channels, height, width }
    }

    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial { channels, height, width } => channels * height * width,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self, Shape::Spatial { .. })
    }

    /// `(height, width)` of the 2-D frame maps are drawn in; a flat vector is `1 x n`.
    pub fn frame(&self) -> (usize, usize) {
        match *self {
            Shape::Spatial { height, width, .. } => (height, width),
            Shape::Flat(n) => (1, n),
        }
    }

    pub fn channels(&self) -> usize {
        match *self {
            Shape::Spatial { channels, .. } => channels,
            Shape::Flat(_) => 1,
        }
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        match s {
            Shape::Spatial { channels, height, width } => alloc::vec![channels, height, width],
            Shape::Flat(n) => alloc::vec![n],
        }
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = String;

    fn try_from(v: Vec<usize>) -> core::result::Result<Self, String> {
        match v.as_slice() {
            &[c, h, w] => Ok(Shape::spatial(c, h, w)),
            &[n] => Ok(Shape::Flat(n)),
            other => Err(alloc::format!("shape must be [c, h, w] or [n], got {:?}", other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.len() != data.len() {
            bail!(Shape, "shape {:?} holds {} values, got {}", shape, shape.len(), data.len());
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: alloc::vec![0.0; shape.len()] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// One `H x W` plane of a spatial tensor (or the whole flat vector).
    pub fn plane(&self, c: usize) -> &[f64] {
        let (h, w) = self.shape.frame();
        &self.data[c * h * w..(c + 1) * h * w]
    }
}

impl From<&ImageTensor> for Tensor {
    fn from(img: &ImageTensor) -> Self {
        Tensor {
            shape: Shape::spatial(crate::tensor::CHANNELS, img.height(), img.width()),
            data: img.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`; odd excess goes bottom/right.
    Same,
    Valid,
}

/// One layer. Convolution weights are laid out `[out][in][kh][kw]`, dense
/// weights `[out][in]`; the input width is inferred from the preceding shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: Padding,
        weight: Vec<f64>,
        #[serde(default)]
        bias: Option<Vec<f64>>,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Flatten,
    Dense {
        out_dim: usize,
        weight: Vec<f64>,
        #[serde(default)]
        bias: Option<Vec<f64>>,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::AvgPool { .. } => "avg_pool",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    pub fn bias(&self) -> Option<&[f64]> {
        match self {
            LayerSpec::Conv2d { bias, .. } | LayerSpec::Dense { bias, .. } => bias.as_deref(),
            _ => None,
        }
    }

    pub fn bias_mut(&mut self) -> Option<&mut Vec<f64>> {
        match self {
            LayerSpec::Conv2d { bias, .. } | LayerSpec::Dense { bias, .. } => bias.as_mut(),
            _ => None,
        }
    }

    pub fn weight_mut(&mut self) -> Option<&mut Vec<f64>> {
        match self {
            LayerSpec::Conv2d { weight, .. } | LayerSpec::Dense { weight, .. } => Some(weight),
            _ => None,
        }
    }

    /// Output shape for `input`, validating parameter sizes.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match (self, input) {
            (
                LayerSpec::Conv2d { out_channels, kernel: [kh, kw], stride, padding, weight, bias },
                Shape::Spatial { channels, height, width },
            ) => {
                if *stride == 0 || *kh == 0 || *kw == 0 || *out_channels == 0 {
                    bail!(Shape, "conv2d needs positive stride, kernel and out_channels");
                }
                let expected = out_channels * channels * kh * kw;
                if weight.len() != expected {
                    bail!(Shape, "conv2d weight has {} values, expected {}", weight.len(), expected);
                }
                check_bias(bias.as_deref(), *out_channels)?;
                let (oh, _) = conv_axis(height, *kh, *stride, *padding)?;
                let (ow, _) = conv_axis(width, *kw, *stride, *padding)?;
                Ok(Shape::spatial(*out_channels, oh, ow))
            }
            (LayerSpec::Relu, s) => Ok(s),
            (
                LayerSpec::MaxPool { kernel, stride } | LayerSpec::AvgPool { kernel, stride },
                Shape::Spatial { channels, height, width },
            ) => {
                if *kernel == 0 || *stride == 0 {
                    bail!(Shape, "pooling needs positive kernel and stride");
                }
                let (oh, _) = conv_axis(height, *kernel, *stride, Padding::Valid)?;
                let (ow, _) = conv_axis(width, *kernel, *stride, Padding::Valid)?;
                Ok(Shape::spatial(channels, oh, ow))
            }
            (LayerSpec::GlobalAvgPool, Shape::Spatial { channels, .. }) => Ok(Shape::Flat(channels)),
            (LayerSpec::Flatten, s) => Ok(Shape::Flat(s.len())),
            (LayerSpec::Dense { out_dim, weight, bias }, Shape::Flat(n)) => {
                if *out_dim == 0 {
                    bail!(Shape, "dense needs a positive out_dim");
                }
                if weight.len() != out_dim * n {
                    bail!(Shape, "dense weight has {} values, expected {}", weight.len(), out_dim * n);
                }
                check_bias(bias.as_deref(), *out_dim)?;
                Ok(Shape::Flat(*out_dim))
            }
            (layer, s) => bail!(Shape, "{} cannot consume input of shape {:?}", layer.name(), s),
        }
    }
}

fn check_bias(bias: Option<&[f64]>, n: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != n => bail!(Shape, "bias has {} values, expected {}", b.len(), n),
        _ => Ok(()),
    }
}

/// Output length and leading (top/left) padding along one axis.
pub(crate) fn conv_axis(n: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if n < k {
                bail!(Shape, "kernel {} larger than input {}", k, n);
            }
            Ok(((n - k) / stride + 1, 0))
        }
        Padding::Same => {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            Ok((out, total / 2))
        }
    }
}

/// Serialized form of a [`Network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDesc {
    #[serde(default)]
    pub name: Option<String>,
    pub input_shape: Shape,
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "NetworkDesc", into = "NetworkDesc")]
pub struct Network {
    name: Option<String>,
    input_shape: Shape,
    class_count: usize,
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
    backward_calls: AtomicUsize,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            input_shape: self.input_shape,
            class_count: self.class_count,
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            backward_calls: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.input_shape == other.input_shape
            && self.class_count == other.class_count
            && self.layers == other.layers
    }
}

impl TryFrom<NetworkDesc> for Network {
    type Error = crate::Error;

    fn try_from(desc: NetworkDesc) -> Result<Self> {
        Network::with_name(desc.name, desc.input_shape, desc.class_count, desc.layers)
    }
}

impl From<Network> for NetworkDesc {
    fn from(net: Network) -> Self {
        NetworkDesc { name: net.name, input_shape: net.input_shape, class_count: net.class_count, layers: net.layers }
    }
}

impl Network {
    pub fn new(input_shape: Shape, class_count: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        Self::with_name(None, input_shape, class_count, layers)
    }

    pub fn with_name(
        name: Option<String>,
        input_shape: Shape,
        class_count: usize,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        if input_shape.is_empty() {
            bail!(Shape, "empty input shape");
        }
        if layers.is_empty() {
            bail!(Shape, "network has no layers");
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape;
        for (i, layer) in layers.iter().enumerate() {
            current =
                layer.output_shape(current).map_err(|e| crate::Error::Shape(alloc::format!("layer {}: {}", i, e)))?;
            shapes.push(current);
        }
        if current != Shape::Flat(class_count) {
            bail!(Shape, "final layer yields {:?}, expected {} logits", current, class_count);
        }
        Ok(Self { name, input_shape, class_count, layers, shapes, backward_calls: AtomicUsize::new(0) })
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    /// Index of the last layer with a spatial output.
    pub fn last_spatial_layer(&self) -> Option<usize> {
        self.shapes.iter().rposition(Shape::is_spatial)
    }

    /// How many times [`Network::backward`] has run on this instance.
    pub fn backward_count(&self) -> usize {
        self.backward_calls.load(Ordering::Relaxed)
    }

    /// Rebuilds the network after editing its layers (re-validating shapes).
    pub fn map_layers(&self, f: impl FnOnce(&mut Vec<LayerSpec>)) -> Result<Self> {
        let mut layers = self.layers.clone();
        f(&mut layers);
        Self::with_name(self.name.clone(), self.input_shape, self.class_count, layers)
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace> {
        if x.shape() != self.input_shape {
            bail!(Shape, "input shape {:?} does not match network input {:?}", x.shape(), self.input_shape);
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &outputs[i - 1] };
            let out = layers::forward(layer, input, self.shapes[i]);
            outputs.push(out);
        }
        Ok(ForwardTrace { outputs })
    }

    /// Logits only.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.logits().to_vec())
    }

    /// Gradients of `logit[class_idx]`. With `guided`, every ReLU passes gradient
    /// only where both its forward input and the upstream gradient are positive.
    pub fn backward(&self, x: &Tensor, trace: &ForwardTrace, class_idx: usize, guided: bool) -> Result<BackwardTrace> {
        if class_idx >= self.class_count {
            bail!(Index, "class {} with {} classes", class_idx, self.class_count);
        }
        if x.shape() != self.input_shape
            || trace.outputs.len() != self.layers.len()
            || trace.outputs.iter().zip(&self.shapes).any(|(t, s)| t.shape() != *s)
        {
            bail!(Shape, "forward trace does not belong to this network and input");
        }
        self.backward_calls.fetch_add(1, Ordering::Relaxed);

        let n = self.layers.len();
        let mut layer_grads: Vec<Option<Tensor>> = alloc::vec![None; n];
        let mut bias_grads: Vec<Option<Vec<f64>>> = alloc::vec![None; n];
        let mut upstream = Tensor::zeros(self.shapes[n - 1]);
        upstream.data_mut()[class_idx] = 1.0;
        for i in (0..n).rev() {
            let input = if i == 0 { x } else { &trace.outputs[i - 1] };
            let step = layers::backward(&self.layers[i], input, &trace.outputs[i], &upstream, guided);
            bias_grads[i] = step.bias_grad;
            layer_grads[i] = Some(core::mem::replace(&mut upstream, step.input_grad));
        }
        Ok(BackwardTrace {
            input_grad: upstream,
            layer_grads: layer_grads.into_iter().map(|g| g.expect("filled above")).collect(),
            bias_grads,
        })
    }

    /// Smallest distance of the forward pass to a non-differentiable point: the
    /// least `|input|` over ReLU lanes and the least gap between the largest and
    /// runner-up value over max-pool windows.
    pub fn kink_margin(&self, x: &Tensor, trace: &ForwardTrace) -> f64 {
        let mut margin = f64::INFINITY;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &trace.outputs[i - 1] };
            margin = margin.min(layers::kink_margin(layer, input));
        }
        margin
    }

    /// Discrete activation pattern: ReLU input signs and max-pool winners.
    pub(crate) fn pattern(&self, x: &Tensor, trace: &ForwardTrace) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &trace.outputs[i - 1] };
            layers::pattern(layer, input, &mut out);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    outputs: Vec<Tensor>,
}

impl ForwardTrace {
    /// Output of each layer, in order.
    pub fn outputs(&self) -> &[Tensor] {
        &self.outputs
    }

    pub fn output(&self, layer: usize) -> &Tensor {
        &self.outputs[layer]
    }

    pub fn logits(&self) -> &[f64] {
        self.outputs.last().expect("network has layers").data()
    }

    /// Index of the largest logit; ties resolve to the lowest index.
    pub fn top_class(&self) -> usize {
        argmax(self.logits())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardTrace {
    input_grad: Tensor,
    layer_grads: Vec<Tensor>,
    bias_grads: Vec<Option<Vec<f64>>>,
}

impl BackwardTrace {
    pub fn input_grad(&self) -> &Tensor {
        &self.input_grad
    }

    /// Gradient with respect to the output of `layer`.
    pub fn layer_grad(&self, layer: usize) -> &Tensor {
        &self.layer_grads[layer]
    }

    /// Gradient with respect to the bias of `layer`, present iff the layer has one.
    pub fn bias_grad(&self, layer: usize) -> Option<&[f64]> {
        self.bias_grads[layer].as_deref()
    }
}

#[cfg(test)]
mod tests;
