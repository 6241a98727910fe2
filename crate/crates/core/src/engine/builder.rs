use alloc::vec::Vec;

use rand::Rng;

use super::{LayerSpec, Network, Padding, Shape};
use crate::error::Result;

/// Layer-by-layer network construction with seeded random parameters.
///
/// Weights are uniform in `±sqrt(3 / fan_in)` and biases uniform in `±bias_scale`.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    input_shape: Shape,
    plan: Vec<Planned>,
    bias_scale: f64,
}

#[derive(Debug, Clone)]
enum Planned {
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: Padding, bias: bool },
    Fixed(LayerSpec),
    Dense { out_dim: usize, bias: bool },
}

impl NetworkBuilder {
    pub fn new(input_shape: Shape) -> Self {
        Self { input_shape, plan: Vec::new(), bias_scale: 0.1 }
    }

    pub fn bias_scale(mut self, scale: f64) -> Self {
        self.bias_scale = scale;
        self
    }

    pub fn conv2d(mut self, out_channels: usize, kernel: usize, stride: usize, padding: Padding, bias: bool) -> Self {
        self.plan.push(Planned::Conv { out_channels, kernel, stride, padding, bias });
        self
    }

    pub fn relu(mut self) -> Self {
        self.plan.push(Planned::Fixed(LayerSpec::Relu));
        self
    }

    pub fn max_pool(mut self, kernel: usize, stride: usize) -> Self {
        self.plan.push(Planned::Fixed(LayerSpec::MaxPool { kernel, stride }));
        self
    }

    pub fn avg_pool(mut self, kernel: usize, stride: usize) -> Self {
        self.plan.push(Planned::Fixed(LayerSpec::AvgPool { kernel, stride }));
        self
    }

    pub fn global_avg_pool(mut self) -> Self {
        self.plan.push(Planned::Fixed(LayerSpec::GlobalAvgPool));
        self
    }

    pub fn flatten(mut self) -> Self {
        self.plan.push(Planned::Fixed(LayerSpec::Flatten));
        self
    }

    pub fn dense(mut self, out_dim: usize, bias: bool) -> Self {
        self.plan.push(Planned::Dense { out_dim, bias });
        self
    }

    /// Draws parameters from `rng`; the last layer's width is the class count.
    pub fn build<R: Rng + ?Sized>(self, rng: &mut R) -> Result<Network> {
        let mut shape = self.input_shape;
        let mut layers = Vec::with_capacity(self.plan.len());
        for planned in self.plan {
            let layer = match planned {
                Planned::Conv { out_channels, kernel, stride, padding, bias } => {
                    let fan_in = shape.channels() * kernel * kernel;
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel: [kernel, kernel],
                        stride,
                        padding,
                        weight: uniform(rng, out_channels * fan_in, libm::sqrt(3.0 / fan_in as f64)),
                        bias: bias.then(|| uniform(rng, out_channels, self.bias_scale)),
                    }
                }
                Planned::Dense { out_dim, bias } => {
                    let fan_in = shape.len();
                    LayerSpec::Dense {
                        out_dim,
                        weight: uniform(rng, out_dim * fan_in, libm::sqrt(3.0 / fan_in as f64)),
                        bias: bias.then(|| uniform(rng, out_dim, self.bias_scale)),
                    }
                }
                Planned::Fixed(layer) => layer,
            };
            shape = layer.output_shape(shape)?;
            layers.push(layer);
        }
        let classes = shape.len();
        Network::new(self.input_shape, classes, layers)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
}
