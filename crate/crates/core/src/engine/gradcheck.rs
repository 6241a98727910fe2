use alloc::vec::Vec;

use rand::seq::index;

use super::{Network, Tensor};
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Input coordinates probed (all of them when the input is smaller).
    pub samples: usize,
    /// Central-difference step.
    pub step: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { samples: 64, step: 1e-3, seed: 0x6772_6164 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crosses a ReLU or max-pool switch
    /// (including a ReLU input sitting exactly at zero) are not compared.
    pub skipped: usize,
}

/// Worst relative error between reverse-mode and central-difference input
/// gradients of `logit[class_idx]`.
pub fn grad_check(net: &Network, x: &Tensor, class_idx: usize) -> Result<f64> {
    Ok(grad_check_with(net, x, class_idx, &GradCheckConfig::default())?.max_rel_err)
}

pub fn grad_check_with(
    net: &Network,
    x: &Tensor,
    class_idx: usize,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let trace = net.forward(x)?;
    let analytic = net.backward(x, &trace, class_idx, false)?;
    let base_pattern = net.pattern(x, &trace);

    let n = x.data().len();
    let coords: Vec<usize> = if n <= config.samples {
        (0..n).collect()
    } else {
        let mut idx = index::sample(&mut seed::rng(config.seed), n, config.samples).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut report = GradCheckReport { max_rel_err: 0.0, checked: 0, skipped: 0 };
    let mut probe = x.clone();
    for i in coords {
        let orig = x.data()[i];
        let mut eval = |v: f64| -> Result<(f64, Vec<usize>)> {
            probe.data_mut()[i] = v;
            let t = net.forward(&probe)?;
            Ok((t.logits()[class_idx], net.pattern(&probe, &t)))
        };
        let (plus, plus_pattern) = eval(orig + config.step)?;
        let (minus, minus_pattern) = eval(orig - config.step)?;
        probe.data_mut()[i] = orig;
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * config.step);
        let exact = analytic.input_grad().data()[i];
        let err = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-6);
        report.max_rel_err = report.max_rel_err.max(err);
        report.checked += 1;
    }
    Ok(report)
}
