#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ctxattr::config::{ConfigFile, RunConfig};
use ctxattr::fixture;
use ctxattr::io;
use ctxattr::manifest::{write_manifest, SampleRecord};
use ctxattr_core::{BinaryMask, ImageTensor};

/// Copies the toy fixture into `dir` and returns the manifest path.
pub fn toy_dataset(dir: &Path) -> PathBuf {
    fixture::generate(dir).unwrap();
    dir.join("manifest.jsonl")
}

/// A small dataset: `n` samples of `h x w`, object a centred square of side
/// `side`, classes assigned round-robin over `classes`.
pub fn square_dataset(dir: &Path, n: usize, h: usize, w: usize, side: usize, classes: usize) -> PathBuf {
    let mut records = Vec::new();
    for i in 0..n {
        let id = format!("s{}", i);
        let (top, left) = ((h - side) / 2, (w - side) / 2);
        let mask = BinaryMask::from_fn(h, w, |y, x| (top..top + side).contains(&y) && (left..left + side).contains(&x))
            .unwrap();
        let data: Vec<f32> = (0..3 * h * w).map(|k| ((k * 7 + i * 13) % 251) as f32 / 250.0).collect();
        let img = ImageTensor::new(h, w, data).unwrap();
        let rec = SampleRecord {
            image_path: format!("img/{}.png", id).into(),
            mask_path: format!("mask/{}.png", id).into(),
            class_id: i % classes,
            class_name: format!("c{}", i % classes),
            sample_id: id,
        };
        io::save_png(&dir.join(&rec.image_path), &img).unwrap();
        io::save_mask(&dir.join(&rec.mask_path), &mask).unwrap();
        records.push(rec);
    }
    let path = dir.join("manifest.jsonl");
    write_manifest(&path, &records).unwrap();
    path
}

pub fn builtin_config(manifest: &Path, network: &Path, out: &Path, variants: &[&str]) -> RunConfig {
    RunConfig::resolve(
        ConfigFile {
            manifest: Some(manifest.into()),
            network: Some(network.into()),
            out: Some(out.into()),
            variants: Some(variants.iter().map(|s| s.to_string()).collect()),
            ..Default::default()
        },
        true,
    )
    .unwrap()
}

pub fn external_config(manifest: &Path, preds: &Path, maps: &Path, out: &Path, variants: &[&str]) -> RunConfig {
    RunConfig::resolve(
        ConfigFile {
            manifest: Some(manifest.into()),
            external_preds: Some(preds.into()),
            external_maps: Some(maps.into()),
            out: Some(out.into()),
            variants: Some(variants.iter().map(|s| s.to_string()).collect()),
            ..Default::default()
        },
        true,
    )
    .unwrap()
}

pub fn copy_dir(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst).unwrap();
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let target = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Relative path and contents of every file under `dir`, sorted.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                out.push((path.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
