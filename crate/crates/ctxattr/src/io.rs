//! File formats: PNG/JPEG images, mask PNGs, `ATTR` maps, network and JSON files.
//!
//! Every writer goes through [`write_atomic`], so a reader never sees a
//! partially written file.

use std::fs;
use std::io::{BufRead, BufReader, Cursor};
use std::path::{Path, PathBuf};

use ctxattr_core::engine::Network;
use ctxattr_core::{AttributionMap, BinaryMask, ImageTensor};
use image::{GrayImage, ImageFormat, RgbImage};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Mask pixels with luma above this fraction of full scale are object.
pub const MASK_THRESHOLD: f32 = 0.5;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let bytes = read_bytes(path)?;
    image::load_from_memory(&bytes).map_err(|source| Error::Image { path: path.into(), source })
}

/// Any image the `image` crate decodes (PNG, JPEG), as RGB in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let rgb = decode(path)?.to_rgb8();
    Ok(ImageTensor::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())?)
}

/// Image dimensions as `(height, width)` without converting pixels.
pub fn image_dims(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|source| Error::Image { path: path.into(), source })?;
    Ok((h as usize, w as usize))
}

fn encode_png(path: &Path, img: image::DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|source| Error::Image { path: path.into(), source })?;
    Ok(buf.into_inner())
}

pub fn save_png(path: &Path, img: &ImageTensor) -> Result<()> {
    let rgb = RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8()).expect("buffer matches dims");
    write_atomic(path, &encode_png(path, rgb.into())?)
}

/// Grayscale mask image; see [`MASK_THRESHOLD`].
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let luma = decode(path)?.to_luma8();
    Ok(BinaryMask::from_luma(luma.height() as usize, luma.width() as usize, luma.as_raw(), MASK_THRESHOLD)?)
}

/// Object pixels white, context black.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let luma: Vec<u8> = mask.data().iter().map(|&m| m * 255).collect();
    let gray = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, luma).expect("buffer matches dims");
    write_atomic(path, &encode_png(path, gray.into())?)
}

pub fn read_attr(path: &Path) -> Result<AttributionMap> {
    Ok(AttributionMap::from_attr_bytes(&read_bytes(path)?)?)
}

pub fn write_attr(path: &Path, map: &AttributionMap) -> Result<()> {
    write_atomic(path, &map.to_attr_bytes())
}

pub fn load_network(path: &Path) -> Result<Network> {
    read_json(path)
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    write_json(path, net)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Schema {
        path: path.into(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    bytes
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &json_bytes(value))
}

/// Parses one JSON value per non-blank line, paired with its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut bytes = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut bytes, row).expect("serializable row");
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)
}
