//! Context variants of an (image, object mask) pair.
//!
//! Every variant except [`VariantKind::Original`] copies object pixels
//! (`mask == 1`) bit-exactly from the source image and only rewrites context
//! pixels. All randomness comes from an explicit seed, so outputs are a pure
//! function of their inputs.

mod corrupt;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use corrupt::{corrupt_context, corrupt_with, motion_blur_kernel, plasma_fractal, CorruptionParams};

use crate::error::{bail, Error, Result};
use crate::seed::{self, derive_seed};
use crate::tensor::{BinaryMask, ImageTensor, CHANNELS};

/// Severity used when a corruption is named without one.
pub const DEFAULT_SEVERITY: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Corruption {
    Fog,
    Snow,
    MotionBlur,
    GaussianNoise,
    Pixelate,
}

impl Corruption {
    pub const ALL: [Corruption; 5] =
        [Corruption::Fog, Corruption::Snow, Corruption::MotionBlur, Corruption::GaussianNoise, Corruption::Pixelate];

    pub fn as_str(self) -> &'static str {
        match self {
            Corruption::Fog => "fog",
            Corruption::Snow => "snow",
            Corruption::MotionBlur => "motion_blur",
            Corruption::GaussianNoise => "gaussian_noise",
            Corruption::Pixelate => "pixelate",
        }
    }
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Corruption::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Param(format!("unknown corruption {:?}", s)))
    }
}

/// A corruption kind at a severity in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CorruptionSpec {
    kind: Corruption,
    severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: Corruption, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            bail!(Param, "severity {} outside 1..=5", severity);
        }
        Ok(Self { kind, severity })
    }

    pub fn kind(&self) -> Corruption {
        self.kind
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }

    pub fn params(&self) -> CorruptionParams {
        CorruptionParams::lookup(self.kind, self.severity)
    }
}

/// Donor selection rule for the mixed-background variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DonorStrategy {
    /// Another sample of the same class.
    Same,
    /// A sample of a uniformly chosen different class.
    Rand,
    /// A sample of class `(c + 1) mod C`.
    Next,
}

impl DonorStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            DonorStrategy::Same => "same",
            DonorStrategy::Rand => "rand",
            DonorStrategy::Next => "next",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseKind {
    /// `clamp(0.5 + N(0, 0.2))` per channel.
    Gaussian,
    /// Uniform `[0, 1]` per channel.
    White,
    /// Constant per-image mean colour.
    MeanNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantKind {
    Original,
    OnlyFg,
    MixedSame,
    MixedRand,
    MixedNext,
    GaussianNoiseBg,
    WhiteNoiseBg,
    MeannormNoiseBg,
    CorruptContext(CorruptionSpec),
}

impl VariantKind {
    /// Context-change variants, in report order.
    pub const CONTEXT_CHANGE: [VariantKind; 4] =
        [VariantKind::OnlyFg, VariantKind::MixedNext, VariantKind::MixedRand, VariantKind::MixedSame];

    /// No-information variants (black, noise or constant background).
    pub const NO_INFORMATION: [VariantKind; 4] =
        [VariantKind::OnlyFg, VariantKind::GaussianNoiseBg, VariantKind::WhiteNoiseBg, VariantKind::MeannormNoiseBg];

    /// The five context perturbations at one severity.
    pub fn perturbations(severity: u8) -> Result<[VariantKind; 5]> {
        let mut out = [VariantKind::Original; 5];
        for (slot, kind) in out.iter_mut().zip(Corruption::ALL) {
            *slot = VariantKind::CorruptContext(CorruptionSpec::new(kind, severity)?);
        }
        Ok(out)
    }

    /// Stable name used in file paths, prediction rows and reports.
    /// Corruptions carry their severity, e.g. `fog_3`.
    pub fn label(&self) -> String {
        match self {
            VariantKind::CorruptContext(spec) => format!("{}_{}", spec.kind.as_str(), spec.severity),
            other => other.simple_label().to_string(),
        }
    }

    fn simple_label(&self) -> &'static str {
        match self {
            VariantKind::Original => "original",
            VariantKind::OnlyFg => "only_fg",
            VariantKind::MixedSame => "mixed_same",
            VariantKind::MixedRand => "mixed_rand",
            VariantKind::MixedNext => "mixed_next",
            VariantKind::GaussianNoiseBg => "gaussian_noise_bg",
            VariantKind::WhiteNoiseBg => "white_noise_bg",
            VariantKind::MeannormNoiseBg => "meannorm_noise_bg",
            VariantKind::CorruptContext(_) => "corrupt_context",
        }
    }

    /// Parses a label; a bare corruption name takes `severity`.
    pub fn parse_with_severity(s: &str, severity: u8) -> Result<Self> {
        const SIMPLE: [VariantKind; 8] = [
            VariantKind::Original,
            VariantKind::OnlyFg,
            VariantKind::MixedSame,
            VariantKind::MixedRand,
            VariantKind::MixedNext,
            VariantKind::GaussianNoiseBg,
            VariantKind::WhiteNoiseBg,
            VariantKind::MeannormNoiseBg,
        ];
        let s = s.trim();
        if let Some(kind) = SIMPLE.into_iter().find(|k| k.simple_label() == s) {
            return Ok(kind);
        }
        if let Ok(kind) = s.parse::<Corruption>() {
            return Ok(VariantKind::CorruptContext(CorruptionSpec::new(kind, severity)?));
        }
        if let Some((name, sev)) = s.rsplit_once('_') {
            if let (Ok(kind), Ok(sev)) = (name.parse::<Corruption>(), sev.parse::<u8>()) {
                return Ok(VariantKind::CorruptContext(CorruptionSpec::new(kind, sev)?));
            }
        }
        bail!(Param, "unknown variant {:?}", s)
    }

    pub fn donor_strategy(&self) -> Option<DonorStrategy> {
        match self {
            VariantKind::MixedSame => Some(DonorStrategy::Same),
            VariantKind::MixedRand => Some(DonorStrategy::Rand),
            VariantKind::MixedNext => Some(DonorStrategy::Next),
            _ => None,
        }
    }

    pub fn noise_kind(&self) -> Option<NoiseKind> {
        match self {
            VariantKind::GaussianNoiseBg => Some(NoiseKind::Gaussian),
            VariantKind::WhiteNoiseBg => Some(NoiseKind::White),
            VariantKind::MeannormNoiseBg => Some(NoiseKind::MeanNorm),
            _ => None,
        }
    }

    pub fn is_context_change(&self) -> bool {
        Self::CONTEXT_CHANGE.contains(self)
    }

    pub fn is_perturbation(&self) -> bool {
        matches!(self, VariantKind::CorruptContext(_))
    }

    pub fn is_no_information(&self) -> bool {
        Self::NO_INFORMATION.contains(self)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_with_severity(s, DEFAULT_SEVERITY)
    }
}

impl Serialize for VariantKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for VariantKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A variant kind plus the global seed its per-sample streams derive from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub seed: u64,
}

impl VariantSpec {
    pub fn new(kind: VariantKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// Seed for this variant of one sample; independent of processing order.
    pub fn sample_seed(&self, sample_id: &str) -> u64 {
        derive_seed(self.seed, sample_id, &self.kind.label())
    }
}

fn check_pair(img: &ImageTensor, mask: &BinaryMask) -> Result<()> {
    mask.ensure_dims(img.height(), img.width())
}

/// Copies object pixels of `src` into `out` (planar data of the same frame).
fn paste_object(out: &mut [f32], src: &ImageTensor, mask: &BinaryMask) {
    let plane = mask.data().len();
    for c in 0..CHANNELS {
        let (dst, from) = (&mut out[c * plane..(c + 1) * plane], src.channel(c));
        for ((d, &s), &m) in dst.iter_mut().zip(from).zip(mask.data()) {
            if m == 1 {
                *d = s;
            }
        }
    }
}

/// Context pixels set to exactly zero.
pub fn only_fg(img: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
    check_pair(img, mask)?;
    let mut data = alloc::vec![0.0; img.data().len()];
    paste_object(&mut data, img, mask);
    ImageTensor::new(img.height(), img.width(), data)
}

/// Object region filled from the surrounding context so the image can serve
/// as a background donor. Each pass assigns every still-unfilled object pixel
/// the mean of its already-valued 8-neighbours (values from before the pass),
/// until none remain. An all-object mask yields the image mean colour.
pub fn make_donor_background(img: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
    check_pair(img, mask)?;
    let (h, w) = img.dims();
    if mask.context_count() == 0 {
        return ImageTensor::filled(h, w, img.mean_color());
    }
    let plane = h * w;
    let mut data = img.data().to_vec();
    let mut valued: Vec<bool> = mask.data().iter().map(|&m| m == 0).collect();
    let mut pending: Vec<usize> = (0..plane).filter(|&i| !valued[i]).collect();
    let mut updates: Vec<(usize, [f32; CHANNELS])> = Vec::new();
    while !pending.is_empty() {
        updates.clear();
        for &i in &pending {
            let (y, x) = (i / w, i % w);
            let mut sum = [0.0f64; CHANNELS];
            let mut n = 0u32;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if j != i && valued[j] {
                        n += 1;
                        for (c, s) in sum.iter_mut().enumerate() {
                            *s += f64::from(data[c * plane + j]);
                        }
                    }
                }
            }
            if n > 0 {
                updates.push((i, sum.map(|s| (s / f64::from(n)) as f32)));
            }
        }
        for &(i, color) in &updates {
            valued[i] = true;
            for (c, v) in color.into_iter().enumerate() {
                data[c * plane + i] = v;
            }
        }
        pending.retain(|&i| !valued[i]);
    }
    ImageTensor::new(h, w, data)
}

/// Donor background resized (bilinear) to a target frame.
pub fn donor_background(
    donor: &ImageTensor,
    donor_mask: &BinaryMask,
    height: usize,
    width: usize,
) -> Result<ImageTensor> {
    let bg = make_donor_background(donor, donor_mask)?;
    if bg.dims() == (height, width) {
        return Ok(bg);
    }
    bg.resize_bilinear(height, width)
}

/// `fg_img` at object pixels, `donor_bg` elsewhere.
pub fn mixed_composite(fg_img: &ImageTensor, fg_mask: &BinaryMask, donor_bg: &ImageTensor) -> Result<ImageTensor> {
    check_pair(fg_img, fg_mask)?;
    if donor_bg.dims() != fg_img.dims() {
        bail!(Shape, "donor is {:?}, target is {:?}", donor_bg.dims(), fg_img.dims());
    }
    let mut data = donor_bg.data().to_vec();
    paste_object(&mut data, fg_img, fg_mask);
    ImageTensor::new(fg_img.height(), fg_img.width(), data)
}

/// Anything with an id and a class index; donors are drawn from a slice of these.
pub trait Labeled {
    fn sample_id(&self) -> &str;
    fn class_id(&self) -> usize;
}

/// Chooses a donor for `sample` from `pool` (classes `0..class_count`).
/// Candidates keep their pool order; the choice depends only on
/// `(seed, sample id, strategy)`. For [`DonorStrategy::Rand`] the class is
/// drawn uniformly among other classes that have at least one sample.
pub fn pick_donor<'a, T: Labeled>(
    strategy: DonorStrategy,
    sample: &T,
    pool: &'a [T],
    class_count: usize,
    seed: u64,
) -> Result<&'a T> {
    if pool.is_empty() {
        bail!(Pool, "empty pool");
    }
    let class = sample.class_id();
    let mut rng = seed::rng(derive_seed(seed, sample.sample_id(), strategy.as_str()));
    let members = |c: usize| -> Vec<&'a T> { pool.iter().filter(|p| p.class_id() == c).collect() };
    let candidates = match strategy {
        DonorStrategy::Same => {
            pool.iter().filter(|p| p.class_id() == class && p.sample_id() != sample.sample_id()).collect()
        }
        DonorStrategy::Next => {
            let next = (class + 1) % class_count.max(1);
            if next == class {
                bail!(Pool, "{}: no class after {} among {}", sample.sample_id(), class, class_count);
            }
            members(next)
        }
        DonorStrategy::Rand => {
            let classes: Vec<usize> = (0..class_count).filter(|&c| c != class && !members(c).is_empty()).collect();
            if classes.is_empty() {
                bail!(Pool, "{}: no other class with samples", sample.sample_id());
            }
            members(classes[rng.random_range(0..classes.len())])
        }
    };
    if candidates.is_empty() {
        bail!(Pool, "{}: no {} donor", sample.sample_id(), strategy.as_str());
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

/// Context replaced by noise or a constant mean colour.
pub fn noise_background(img: &ImageTensor, mask: &BinaryMask, kind: NoiseKind, seed: u64) -> Result<ImageTensor> {
    check_pair(img, mask)?;
    match kind {
        NoiseKind::MeanNorm => constant_background(img, mask, img.mean_color()),
        NoiseKind::Gaussian | NoiseKind::White => {
            let mut rng = seed::rng(seed);
            // One draw per value in planar order, mask-independent.
            let mut data: Vec<f32> = (0..img.data().len())
                .map(|_| match kind {
                    NoiseKind::Gaussian => (0.5 + 0.2 * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0) as f32,
                    _ => rng.random::<f32>(),
                })
                .collect();
            paste_object(&mut data, img, mask);
            ImageTensor::new(img.height(), img.width(), data)
        }
    }
}

/// Context replaced by one colour, e.g. a dataset-wide mean.
pub fn constant_background(img: &ImageTensor, mask: &BinaryMask, color: [f32; CHANNELS]) -> Result<ImageTensor> {
    check_pair(img, mask)?;
    let mut data = ImageTensor::filled(img.height(), img.width(), color)?.into_data();
    paste_object(&mut data, img, mask);
    ImageTensor::new(img.height(), img.width(), data)
}

/// Builds one variant. Mixed kinds need `donor_bg` already in the image frame
/// (see [`donor_background`]); `seed` is the per-sample seed.
pub fn synthesize(
    kind: &VariantKind,
    img: &ImageTensor,
    mask: &BinaryMask,
    donor_bg: Option<&ImageTensor>,
    seed: u64,
) -> Result<ImageTensor> {
    check_pair(img, mask)?;
    match kind {
        VariantKind::Original => Ok(img.clone()),
        VariantKind::OnlyFg => only_fg(img, mask),
        VariantKind::MixedSame | VariantKind::MixedRand | VariantKind::MixedNext => match donor_bg {
            Some(bg) => mixed_composite(img, mask, bg),
            None => bail!(Param, "{} needs a donor background", kind),
        },
        VariantKind::GaussianNoiseBg | VariantKind::WhiteNoiseBg | VariantKind::MeannormNoiseBg => {
            noise_background(img, mask, kind.noise_kind().expect("noise kind"), seed)
        }
        VariantKind::CorruptContext(spec) => corrupt_context(img, mask, spec, seed),
    }
}
