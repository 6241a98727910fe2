//! Corruption kernels. Each one corrupts the whole frame; [`corrupt_context`]
//! then pastes the original object pixels back.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{check_pair, paste_object, Corruption, CorruptionSpec};
use crate::error::{bail, Result};
use crate::seed::{self, Rng};
use crate::tensor::{BinaryMask, ImageTensor, CHANNELS};

const SIGMA: [f64; 5] = [0.08, 0.12, 0.18, 0.26, 0.38];
const BLUR_LENGTH: [usize; 5] = [5, 7, 9, 13, 17];
const PIXELATE_FACTOR: [f64; 5] = [0.6, 0.5, 0.4, 0.3, 0.25];
const FOG_INTENSITY: [f64; 5] = [1.5, 2.0, 2.5, 3.0, 3.5];
const FOG_ROUGHNESS: [f64; 5] = [2.0, 2.0, 1.7, 1.5, 1.2];
const SNOW_THRESHOLD: [f64; 5] = [0.9, 0.85, 0.8, 0.75, 0.7];
const SNOW_WEIGHT: [f64; 5] = [0.2, 0.3, 0.4, 0.5, 0.6];

/// Motion-blur angle range in degrees.
const BLUR_ANGLE: (f64, f64) = (-45.0, 45.0);
const SNOW_ANGLE: (f64, f64) = (-80.0, -50.0);
/// Snow flakes are `0.5 + 0.3 z` for standard normal `z`, kept above the threshold.
const SNOW_MEAN: f64 = 0.5;
const SNOW_SPREAD: f64 = 0.3;

/// Concrete kernel parameters, in `[0, 1]` pixel units and pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "corruption", rename_all = "snake_case")]
pub enum CorruptionParams {
    GaussianNoise { sigma: f64 },
    MotionBlur { length: usize },
    Pixelate { factor: f64 },
    Fog { intensity: f64, roughness: f64 },
    Snow { threshold: f64, weight: f64, length: usize },
}

impl CorruptionParams {
    /// Severity table entry; `severity` must be in `1..=5`.
    pub fn lookup(kind: Corruption, severity: u8) -> Self {
        let s = usize::from(severity) - 1;
        match kind {
            Corruption::GaussianNoise => CorruptionParams::GaussianNoise { sigma: SIGMA[s] },
            Corruption::MotionBlur => CorruptionParams::MotionBlur { length: BLUR_LENGTH[s] },
            Corruption::Pixelate => CorruptionParams::Pixelate { factor: PIXELATE_FACTOR[s] },
            Corruption::Fog => CorruptionParams::Fog { intensity: FOG_INTENSITY[s], roughness: FOG_ROUGHNESS[s] },
            Corruption::Snow => {
                CorruptionParams::Snow { threshold: SNOW_THRESHOLD[s], weight: SNOW_WEIGHT[s], length: BLUR_LENGTH[s] }
            }
        }
    }
}

/// Corrupts the full frame with `spec`'s kernel, then restores object pixels.
pub fn corrupt_context(img: &ImageTensor, mask: &BinaryMask, spec: &CorruptionSpec, seed: u64) -> Result<ImageTensor> {
    corrupt_with(img, mask, &spec.params(), seed)
}

/// [`corrupt_context`] with explicit parameters.
pub fn corrupt_with(img: &ImageTensor, mask: &BinaryMask, params: &CorruptionParams, seed: u64) -> Result<ImageTensor> {
    check_pair(img, mask)?;
    let (h, w) = img.dims();
    let mut rng = seed::rng(seed);
    let x: Vec<f64> = img.data().iter().map(|&v| f64::from(v)).collect();
    let out = match *params {
        CorruptionParams::GaussianNoise { sigma } => {
            if sigma.is_nan() || sigma < 0.0 {
                bail!(Param, "sigma {} must be non-negative", sigma);
            }
            x.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect()
        }
        CorruptionParams::MotionBlur { length } => {
            let angle = rng.random_range(BLUR_ANGLE.0..=BLUR_ANGLE.1);
            let (size, kernel) = motion_blur_kernel(length, angle)?;
            let plane = h * w;
            let mut out = Vec::with_capacity(x.len());
            for c in 0..CHANNELS {
                out.extend(convolve_reflect(&x[c * plane..(c + 1) * plane], h, w, &kernel, size));
            }
            out
        }
        CorruptionParams::Pixelate { factor } => pixelate(&x, h, w, factor)?,
        CorruptionParams::Fog { intensity, roughness } => {
            let p = plasma_fractal(h, w, roughness, &mut rng)?;
            let p_max = p.iter().copied().fold(0.0, f64::max);
            let plane = h * w;
            x.iter().enumerate().map(|(i, v)| (v + intensity * p[i % plane]) / (1.0 + intensity * p_max)).collect()
        }
        CorruptionParams::Snow { threshold, weight, length } => {
            let angle = rng.random_range(SNOW_ANGLE.0..=SNOW_ANGLE.1);
            let flakes: Vec<f64> = (0..h * w)
                .map(|_| {
                    let v = SNOW_MEAN + SNOW_SPREAD * rng.sample::<f64, _>(StandardNormal);
                    if v >= threshold {
                        v.min(1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let (size, kernel) = motion_blur_kernel(length, angle)?;
            let mut streaks = convolve_reflect(&flakes, h, w, &kernel, size);
            // Rescale so the brightest streak is white.
            let peak = streaks.iter().copied().fold(0.0, f64::max);
            if peak > 0.0 {
                streaks.iter_mut().for_each(|s| *s /= peak);
            }
            let plane = h * w;
            x.iter().enumerate().map(|(i, &v)| v * (1.0 - weight) + weight * v.max(streaks[i % plane])).collect()
        }
    };
    let mut data: Vec<f32> = out.into_iter().map(|v: f64| v.clamp(0.0, 1.0) as f32).collect();
    paste_object(&mut data, img, mask);
    ImageTensor::new(h, w, data)
}

/// Normalized line kernel of `length` taps at `angle_deg` (counter-clockwise
/// from the x axis), rasterized into a square of odd side. Returns
/// `(side, row-major weights)`.
pub fn motion_blur_kernel(length: usize, angle_deg: f64) -> Result<(usize, Vec<f64>)> {
    if length == 0 {
        bail!(Param, "motion blur length must be at least 1");
    }
    let side = length | 1;
    let centre = (side / 2) as f64;
    let (sin, cos) = libm::sincos(angle_deg.to_radians());
    let mut kernel = vec![0.0; side * side];
    for t in 0..length {
        let s = t as f64 - (length - 1) as f64 / 2.0;
        let row = libm::round(centre - s * sin) as usize;
        let col = libm::round(centre + s * cos) as usize;
        kernel[row * side + col] += 1.0;
    }
    kernel.iter_mut().for_each(|k| *k /= length as f64);
    Ok((side, kernel))
}

/// Mirror index without repeating the edge sample (`-1 -> 1`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

fn convolve_reflect(plane: &[f64], h: usize, w: usize, kernel: &[f64], side: usize) -> Vec<f64> {
    let r = (side / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..side {
                for kx in 0..side {
                    let k = kernel[ky * side + kx];
                    if k != 0.0 {
                        let sy = reflect(y as isize + ky as isize - r, h);
                        let sx = reflect(x as isize + kx as isize - r, w);
                        acc += k * plane[sy * w + sx];
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Box-downscale to `round(side * factor)` cells per axis, then nearest
/// upscale: pixel `y` belongs to cell `floor(y * cells / h)` and takes that
/// cell's mean.
fn pixelate(x: &[f64], h: usize, w: usize, factor: f64) -> Result<Vec<f64>> {
    if !(factor > 0.0 && factor <= 1.0) {
        bail!(Param, "pixelate factor {} outside (0, 1]", factor);
    }
    let cells = |n: usize| (libm::round(n as f64 * factor) as usize).clamp(1, n);
    let (ch, cw) = (cells(h), cells(w));
    let row_bin: Vec<usize> = (0..h).map(|y| y * ch / h).collect();
    let col_bin: Vec<usize> = (0..w).map(|x| x * cw / w).collect();
    let plane = h * w;
    let mut out = vec![0.0; x.len()];
    for c in 0..CHANNELS {
        let src = &x[c * plane..(c + 1) * plane];
        let mut sum = vec![0.0; ch * cw];
        let mut count = vec![0u32; ch * cw];
        for y in 0..h {
            for xx in 0..w {
                let b = row_bin[y] * cw + col_bin[xx];
                sum[b] += src[y * w + xx];
                count[b] += 1;
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let b = row_bin[y] * cw + col_bin[xx];
                out[c * plane + y * w + xx] = sum[b] / f64::from(count[b]);
            }
        }
    }
    Ok(out)
}

/// Toroidal diamond-square plasma cropped to `h x w`, min-max scaled to
/// `[0, 1]` over the full grid. The random amplitude is divided by
/// `roughness` at every level.
pub fn plasma_fractal(h: usize, w: usize, roughness: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if roughness.is_nan() || roughness <= 0.0 {
        bail!(Param, "roughness {} must be positive", roughness);
    }
    let n = h.max(w).next_power_of_two().max(2);
    let mut grid = vec![0.0f64; n * n];
    let at = |y: usize, x: usize| (y % n) * n + (x % n);
    let mut wibble = 1.0;
    let mut step = n;
    while step >= 2 {
        let half = step / 2;
        for y in (0..n).step_by(step) {
            for x in (0..n).step_by(step) {
                let mean =
                    (grid[at(y, x)] + grid[at(y, x + step)] + grid[at(y + step, x)] + grid[at(y + step, x + step)])
                        / 4.0;
                grid[at(y + half, x + half)] = mean + rng.random_range(-wibble..=wibble);
            }
        }
        for y in (0..n).step_by(half) {
            let offset = if (y / half).is_multiple_of(2) { half } else { 0 };
            for x in (offset..n).step_by(step) {
                let mean = (grid[at(y + n - half, x)]
                    + grid[at(y + half, x)]
                    + grid[at(y, x + n - half)]
                    + grid[at(y, x + half)])
                    / 4.0;
                grid[at(y, x)] = mean + rng.random_range(-wibble..=wibble);
            }
        }
        wibble /= roughness;
        step = half;
    }
    let (lo, hi) = grid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    let span = hi - lo;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(if span > 0.0 { (grid[y * n + x] - lo) / span } else { 0.0 });
        }
    }
    Ok(out)
}
