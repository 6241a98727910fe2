//! The toy dataset and network shipped under `fixtures/toy`: coloured squares
//! on tinted, textured backgrounds, and a small hand-weighted colour
//! classifier. [`generate`] reproduces the shipped files exactly.

use std::path::{Path, PathBuf};

use ctxattr_core::engine::{LayerSpec, Network, Padding, Shape};
use ctxattr_core::seed::rng;
use ctxattr_core::{BinaryMask, ImageTensor};
use rand::Rng;

use crate::error::Result;
use crate::io;
use crate::manifest::{write_manifest, SampleRecord};

pub const SIZE: usize = 32;
pub const SAMPLES: usize = 16;
pub const FIXTURE_SEED: u64 = 7;
pub const NETWORK_NAME: &str = "toy_colornet";

pub const CLASSES: [(&str, [f32; 3]); 4] = [
    ("red", [0.85, 0.15, 0.1]),
    ("green", [0.15, 0.8, 0.2]),
    ("blue", [0.1, 0.2, 0.85]),
    ("yellow", [0.85, 0.8, 0.15]),
];

/// Square sides cycled over samples: object fractions of about 0.39 (large),
/// 0.14 (small), 0.25 (other) and 0.77 (below the default context threshold).
pub const SIDES: [usize; 4] = [20, 12, 16, 28];

const TINT: f32 = 0.3;
const STRIPE: f32 = 0.05;
const NOISE: f32 = 0.04;

pub const RUN_TOML: &str = "\
manifest = \"manifest.jsonl\"
network = \"network.json\"
seed = 0
severity = 3
variants = [\"all\"]

[method]
kind = \"gradcam\"
";

/// One generated sample.
pub struct ToySample {
    pub record: SampleRecord,
    pub image: ImageTensor,
    pub mask: BinaryMask,
}

pub fn samples() -> Result<Vec<ToySample>> {
    let mut r = rng(FIXTURE_SEED);
    let mut out = Vec::with_capacity(SAMPLES);
    for i in 0..SAMPLES {
        let class_id = i % CLASSES.len();
        let (class_name, color) = CLASSES[class_id];
        let side = SIDES[i / CLASSES.len() % SIDES.len()];
        let top = r.random_range(0..=SIZE - side);
        let left = r.random_range(0..=SIZE - side);
        let mask =
            BinaryMask::from_fn(SIZE, SIZE, |y, x| (top..top + side).contains(&y) && (left..left + side).contains(&x))?;

        let period = r.random_range(4..9usize);
        let vertical = r.random_bool(0.5);
        let mut data = vec![0.0f32; 3 * SIZE * SIZE];
        for y in 0..SIZE {
            for x in 0..SIZE {
                let p = y * SIZE + x;
                if mask.is_object(y, x) {
                    for c in 0..3 {
                        data[c * SIZE * SIZE + p] = color[c];
                    }
                    continue;
                }
                let phase = if vertical { x } else { y };
                let stripe = if (phase / (period / 2).max(1)) % 2 == 0 { STRIPE } else { -STRIPE };
                let grey = 0.45 + stripe + r.random_range(-NOISE..NOISE);
                for c in 0..3 {
                    let v = grey + TINT * (color[c] - 0.5) + r.random_range(-NOISE..NOISE);
                    data[c * SIZE * SIZE + p] = v.clamp(0.0, 1.0);
                }
            }
        }
        let raw = ImageTensor::new(SIZE, SIZE, data)?;
        let image = ImageTensor::from_rgb8(SIZE, SIZE, &raw.to_rgb8())?;
        let sample_id = format!("toy{:02}", i);
        out.push(ToySample {
            record: SampleRecord {
                image_path: PathBuf::from("images").join(format!("{}.png", sample_id)),
                mask_path: PathBuf::from("masks").join(format!("{}.png", sample_id)),
                sample_id,
                class_id,
                class_name: class_name.into(),
            },
            image,
            mask,
        });
    }
    Ok(out)
}

/// Colour-opponent 1x1 conv, pool, 3x3 box smoothing, global average pool
/// and a linear read-out of the four opponent channels.
pub fn network() -> Result<Network> {
    let opponent: [[f64; 3]; 4] = [[1.0, -0.5, -0.5], [-0.5, 1.0, -0.5], [-0.5, -0.5, 1.0], [0.5, 0.5, -1.0]];
    let conv1 = LayerSpec::Conv2d {
        out_channels: 4,
        kernel: [1, 1],
        stride: 1,
        padding: Padding::Valid,
        weight: opponent.iter().flatten().copied().collect(),
        bias: Some(vec![-0.1; 4]),
    };
    let mut box3 = vec![0.0; 4 * 4 * 9];
    for o in 0..4 {
        for k in 0..9 {
            box3[(o * 4 + o) * 9 + k] = 1.0 / 9.0;
        }
    }
    let conv2 = LayerSpec::Conv2d {
        out_channels: 4,
        kernel: [3, 3],
        stride: 1,
        padding: Padding::Same,
        weight: box3,
        bias: Some(vec![-0.02; 4]),
    };
    // Read-out rows over channels (r, g, b, y).
    let rows: [[f64; 4]; 4] =
        [[1.0, -1.0, 0.0, 0.0], [-1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [-1.0, -1.0, 0.0, 2.0]];
    let dense = LayerSpec::Dense {
        out_dim: 4,
        weight: rows.iter().flatten().map(|w| 8.0 * w).collect(),
        bias: Some(vec![0.0; 4]),
    };
    let layers = vec![
        conv1,
        LayerSpec::Relu,
        LayerSpec::MaxPool { kernel: 2, stride: 2 },
        conv2,
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
        dense,
    ];
    Ok(Network::with_name(Some(NETWORK_NAME.into()), Shape::spatial(3, SIZE, SIZE), CLASSES.len(), layers)?)
}

/// Writes images, masks, `manifest.jsonl`, `network.json` and `run.toml`
/// into `dir`.
pub fn generate(dir: &Path) -> Result<()> {
    let samples = samples()?;
    for s in &samples {
        io::save_png(&dir.join(&s.record.image_path), &s.image)?;
        io::save_mask(&dir.join(&s.record.mask_path), &s.mask)?;
    }
    let records: Vec<SampleRecord> = samples.into_iter().map(|s| s.record).collect();
    write_manifest(&dir.join("manifest.jsonl"), &records)?;
    io::save_network(&dir.join("network.json"), &network()?)?;
    io::write_atomic(&dir.join("run.toml"), RUN_TOML.as_bytes())
}

/// Location of the shipped fixture in the source tree.
pub fn shipped_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("toy")
}
