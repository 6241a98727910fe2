//! Rasters shared by every stage: RGB images, binary object masks and
//! attribution maps, plus bilinear resampling and the `ATTR` byte format.
//!
//! Images are planar (channel-major, row-major within a channel). Stored pixels
//! are 8-bit; in memory they are `f32` in `[0, 1]`.

use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Number of colour channels in an [`ImageTensor`].
pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds an image from planar data. Every value must be finite and in `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != CHANNELS * height * width {
            bail!(Shape, "image {}x{} needs {} values, got {}", height, width, CHANNELS * height * width, data.len());
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            bail!(Domain, "image value {} outside [0, 1]", v);
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, [0.0; CHANNELS])
    }

    pub fn filled(height: usize, width: usize, color: [f32; CHANNELS]) -> Result<Self> {
        check_dims(height, width)?;
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in color {
            data.extend(core::iter::repeat_n(c, height * width));
        }
        Self::new(height, width, data)
    }

    /// Builds an image from interleaved 8-bit RGB, scaling by 1/255.
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        check_dims(height, width)?;
        if rgb.len() != CHANNELS * height * width {
            bail!(Shape, "rgb buffer length {} does not match {}x{}", rgb.len(), height, width);
        }
        let plane = height * width;
        let mut data = alloc::vec![0.0f32; CHANNELS * plane];
        for (i, px) in rgb.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                data[c * plane + i] = f32::from(px[c]) / 255.0;
            }
        }
        Ok(Self { height, width, data })
    }

    /// Interleaved 8-bit RGB, rounding to the nearest level.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(CHANNELS * plane);
        for i in 0..plane {
            for c in 0..CHANNELS {
                out.push(quantize(self.data[c * plane + i]));
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; CHANNELS] {
        core::array::from_fn(|c| self.get(c, y, x))
    }

    /// Per-channel mean colour, accumulated in `f64`.
    pub fn mean_color(&self) -> [f32; CHANNELS] {
        core::array::from_fn(|c| {
            let plane = self.channel(c);
            (plane.iter().map(|&v| f64::from(v)).sum::<f64>() / plane.len() as f64) as f32
        })
    }

    /// Bilinear resize of every channel (half-pixel centres).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Self> {
        check_dims(out_h, out_w)?;
        let mut data = Vec::with_capacity(CHANNELS * out_h * out_w);
        for c in 0..CHANNELS {
            let plane: Vec<f64> = self.channel(c).iter().map(|&v| f64::from(v)).collect();
            let resized = resize_plane(&plane, self.height, self.width, out_h, out_w);
            data.extend(resized.into_iter().map(|v| (v as f32).clamp(0.0, 1.0)));
        }
        Ok(Self { height: out_h, width: out_w, data })
    }
}

/// Rounds a unit-interval value to the nearest 8-bit level.
pub fn quantize(v: f32) -> u8 {
    libm::roundf(v.clamp(0.0, 1.0) * 255.0) as u8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    /// Builds a mask from `0`/`1` values, 1 marking object pixels.
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            bail!(Shape, "mask {}x{} needs {} values, got {}", height, width, height * width, data.len());
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            bail!(Domain, "mask value {} is not binary", v);
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_dims(height, width)?;
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Ok(Self { height, width, data })
    }

    /// Binarizes 8-bit luminance: a pixel is object iff `luma / 255 > threshold`.
    pub fn from_luma(height: usize, width: usize, luma: &[u8], threshold: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            bail!(Param, "mask threshold {} outside [0, 1]", threshold);
        }
        check_dims(height, width)?;
        if luma.len() != height * width {
            bail!(Shape, "luma buffer length {} does not match {}x{}", luma.len(), height, width);
        }
        let data = luma.iter().map(|&l| u8::from(f32::from(l) / 255.0 > threshold)).collect();
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn is_object(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn object_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn context_count(&self) -> usize {
        self.data.len() - self.object_count()
    }

    /// Share of pixels outside the object.
    pub fn context_fraction(&self) -> f64 {
        self.context_count() as f64 / self.data.len() as f64
    }

    pub fn object_fraction(&self) -> f64 {
        self.object_count() as f64 / self.data.len() as f64
    }

    pub fn ensure_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.dims() != (height, width) {
            bail!(Shape, "mask is {}x{}, expected {}x{}", self.height, self.width, height, width);
        }
        Ok(())
    }
}

/// Non-negative per-pixel importance in some frame (usually the input frame).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl AttributionMap {
    /// Builds a map, rejecting negative or non-finite entries.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            bail!(Shape, "map {}x{} needs {} values, got {}", height, width, height * width, data.len());
        }
        check_attr_values(&data)?;
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, alloc::vec![0.0; height * width])
    }

    /// Builds a map from signed `f64` values, clamping negatives to zero.
    pub fn from_f64_clamped(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let data = values.iter().map(|&v| if v > 0.0 { v as f32 } else { 0.0 }).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum()
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// Divides by the maximum entry; an all-zero map is returned unchanged.
    pub fn normalized(&self) -> Self {
        let max = self.max();
        if max <= 0.0 {
            return self.clone();
        }
        let data = self.data.iter().map(|&v| v / max).collect();
        Self { height: self.height, width: self.width, data }
    }

    /// Bilinear resize with half-pixel centres.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Self> {
        check_dims(out_h, out_w)?;
        let plane: Vec<f64> = self.data.iter().map(|&v| f64::from(v)).collect();
        let resized = resize_plane(&plane, self.height, self.width, out_h, out_w);
        let data = resized.into_iter().map(|v| (v as f32).max(0.0)).collect();
        Ok(Self { height: out_h, width: out_w, data })
    }

    /// Encodes the map in the `ATTR` interchange format.
    pub fn to_attr_bytes(&self) -> Vec<u8> {
        // The constructor already validated the values.
        encode_unchecked(self.height, self.width, &self.data)
    }

    pub fn from_attr_bytes(bytes: &[u8]) -> Result<Self> {
        let (height, width, data) = decode_attr(bytes)?;
        Self::new(height, width, data)
    }
}

fn check_attr_values(data: &[f32]) -> Result<()> {
    if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
        bail!(Domain, "attribution entry {} is negative or not finite", v);
    }
    Ok(())
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        bail!(Shape, "zero-sized raster {}x{}", height, width);
    }
    Ok(())
}

/// Magic bytes opening an `ATTR` file.
pub const ATTR_MAGIC: [u8; 4] = *b"ATTR";
pub const ATTR_VERSION: u16 = 1;
pub const ATTR_HEADER_LEN: usize = 16;

/// Encodes raw row-major values as `ATTR`:
/// magic, `u16` version, `u16` reserved, `u32` height, `u32` width, then
/// `height * width` little-endian `f32`s.
pub fn encode_attr(height: usize, width: usize, values: &[f32]) -> Result<Vec<u8>> {
    check_dims(height, width)?;
    if values.len() != height * width {
        bail!(Shape, "{} values do not fill {}x{}", values.len(), height, width);
    }
    if u32::try_from(height).is_err() || u32::try_from(width).is_err() {
        bail!(Shape, "map {}x{} exceeds u32 dimensions", height, width);
    }
    check_attr_values(values)?;
    Ok(encode_unchecked(height, width, values))
}

fn encode_unchecked(height: usize, width: usize, values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ATTR_HEADER_LEN + 4 * values.len());
    out.extend_from_slice(&ATTR_MAGIC);
    out.extend_from_slice(&ATTR_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes `ATTR` bytes into `(height, width, values)` without checking signs.
pub fn decode_attr(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < ATTR_HEADER_LEN {
        bail!(Format, "{} bytes is shorter than the header", bytes.len());
    }
    if bytes[..4] != ATTR_MAGIC {
        bail!(Format, "bad magic {:?}", &bytes[..4]);
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = u16_at(4);
    if version != ATTR_VERSION {
        bail!(Format, "unsupported version {}", version);
    }
    if u16_at(6) != 0 {
        bail!(Format, "reserved field is {}", u16_at(6));
    }
    let height = u32_at(8) as usize;
    let width = u32_at(12) as usize;
    if height == 0 || width == 0 {
        bail!(Format, "zero-sized map {}x{}", height, width);
    }
    let expected =
        height.checked_mul(width).and_then(|n| n.checked_mul(4)).and_then(|n| n.checked_add(ATTR_HEADER_LEN));
    if expected != Some(bytes.len()) {
        bail!(Format, "payload length {} does not match {}x{}", bytes.len() - ATTR_HEADER_LEN, height, width);
    }
    let values =
        bytes[ATTR_HEADER_LEN..].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Ok((height, width, values))
}

/// Bilinear interpolation of one row-major plane using half-pixel centres:
/// output pixel `o` samples source coordinate `(o + 0.5) * in / out - 0.5`,
/// clamped to the source extent. Every output is a convex combination of inputs.
pub fn resize_plane(src: &[f64], in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), in_h * in_w);
    if (in_h, in_w) == (out_h, out_w) {
        return src.to_vec();
    }
    let ys: Vec<_> = (0..out_h).map(|o| sample_axis(o, in_h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|o| sample_axis(o, in_w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let top = lerp(src[y0 * in_w + x0], src[y0 * in_w + x1], tx);
            let bottom = lerp(src[y1 * in_w + x0], src[y1 * in_w + x1], tx);
            out.push(lerp(top, bottom, ty));
        }
    }
    out
}

fn sample_axis(o: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let src = (o as f64 + 0.5) * (n_in as f64 / n_out as f64) - 0.5;
    let src = src.clamp(0.0, (n_in - 1) as f64);
    let i0 = libm::floor(src) as usize;
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, src - i0 as f64)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}
