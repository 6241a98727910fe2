//! Pipeline stages. Each stage reads its inputs from disk and writes its
//! outputs under the run directory, so stages can run separately or chained.
//!
//! Layout of a run directory:
//!
//! ```text
//! filter.json                     context-filter outcome
//! variants/<variant>/<id>.png     synthesized images (+ .json sidecar)
//! predictions.jsonl               one row per (sample, variant)
//! maps/<variant>/<id>.attr        attribution maps (+ .json sidecar)
//! analysis.json                   everything the report stage renders
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use ctxattr_core::attribution::{attribute, MethodKind, SCORECAM_SCORING};
use ctxattr_core::engine::{softmax, Network, Tensor};
use ctxattr_core::metrics::{
    accuracy_table, context_fraction_filter, volume_attribution, AccuracyTable, GroupMean, PredictionRecord,
    SizeStratum, VolumeAccumulator, VolumeAttribution,
};
use ctxattr_core::synthesis::{
    constant_background, donor_background, pick_donor, synthesize, CorruptionParams, VariantKind, VariantSpec,
};
use ctxattr_core::{BinaryMask, Error as CoreError, ImageTensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{MeanSource, ModelSource, RunConfig};
use crate::error::{Error, Result, Stage, StageExt};
use crate::io;
use crate::manifest::{validate_manifest, Manifest, SampleRecord};

/// Marker present while a command is writing into the run directory.
pub const INCOMPLETE: &str = "INCOMPLETE";
/// Label of the unmodified variant; every accuracy table is relative to it.
pub const ORIGINAL: &str = "original";

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn filter(&self) -> PathBuf {
        self.root.join("filter.json")
    }

    pub fn variant_image(&self, variant: &str, id: &str) -> PathBuf {
        self.root.join("variants").join(variant).join(format!("{}.png", id))
    }

    pub fn variant_sidecar(&self, variant: &str, id: &str) -> PathBuf {
        self.root.join("variants").join(variant).join(format!("{}.json", id))
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }

    pub fn maps(&self) -> PathBuf {
        self.root.join("maps")
    }

    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis.json")
    }

    pub fn incomplete(&self) -> PathBuf {
        self.root.join(INCOMPLETE)
    }
}

/// Map file for one prediction: `<dir>/<model>/<variant>/<id>.attr` when that
/// exists, else `<dir>/<variant>/<id>.attr`.
pub fn map_path(dir: &Path, model_id: &str, variant: &str, id: &str) -> PathBuf {
    let file = format!("{}.attr", id);
    let per_model = dir.join(model_id).join(variant).join(&file);
    if per_model.is_file() {
        per_model
    } else {
        dir.join(variant).join(file)
    }
}

/// Holds the `INCOMPLETE` marker for as long as a command runs; it is only
/// removed by [`RunGuard::finish`].
pub struct RunGuard {
    path: PathBuf,
}

impl RunGuard {
    pub fn start(layout: &Layout, command: &str) -> Result<Self> {
        let path = layout.incomplete();
        io::write_atomic(&path, format!("{} started\n", command).as_bytes())?;
        Ok(Self { path })
    }

    /// Records the failing stage in the marker.
    pub fn fail(self, err: &Error) {
        let _ = io::write_atomic(&self.path, format!("failed: {}\n", err).as_bytes());
    }

    pub fn finish(self) -> Result<()> {
        std::fs::remove_file(&self.path).map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSample {
    pub sample_id: String,
    pub context_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub threshold: f64,
    pub records_in: usize,
    pub kept: usize,
    pub kept_fraction: f64,
    pub dropped: Vec<DroppedSample>,
}

/// Validated manifest plus the samples that pass the context filter.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub manifest: Manifest,
    pub kept: Vec<SampleRecord>,
    pub filter: FilterSummary,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let manifest = validate_manifest(&cfg.manifest).stage(Stage::Validate)?;
    filter(manifest, cfg.context_threshold).stage(Stage::Filter)
}

/// Keeps samples whose context fraction exceeds `threshold`.
pub fn filter(manifest: Manifest, threshold: f64) -> Result<Prepared> {
    let fractions: Vec<f64> = manifest
        .records
        .par_iter()
        .map(|r| Ok(io::load_mask(&manifest.mask_path(r))?.context_fraction()))
        .collect::<Result<_>>()?;
    let by_id: HashMap<&str, f64> =
        manifest.records.iter().zip(&fractions).map(|(r, &f)| (r.sample_id.as_str(), f)).collect();
    let outcome = context_fraction_filter(manifest.records.clone(), threshold, |r| Ok(by_id[r.sample_id.as_str()]))?;
    let kept_ids: HashSet<&str> = outcome.kept.iter().map(|r| r.sample_id.as_str()).collect();
    let dropped = manifest
        .records
        .iter()
        .filter(|r| !kept_ids.contains(r.sample_id.as_str()))
        .map(|r| DroppedSample { sample_id: r.sample_id.clone(), context_fraction: by_id[r.sample_id.as_str()] })
        .collect();
    let summary = FilterSummary {
        threshold,
        records_in: manifest.records.len(),
        kept: outcome.kept.len(),
        kept_fraction: outcome.kept_fraction(),
        dropped,
    };
    if outcome.kept.is_empty() {
        return Err(Error::FilterEmptied { threshold });
    }
    Ok(Prepared { kept: outcome.kept, filter: summary, manifest })
}

/// What was done to one synthesized image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSidecar {
    pub sample_id: String,
    pub variant: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub donor_sample_id: Option<String>,
    /// How the donor's object region was filled before compositing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background_fill: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub severity: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_source: Option<MeanSource>,
}

/// Mean colour over every pixel of the kept originals.
fn dataset_mean(prep: &Prepared) -> Result<[f32; 3]> {
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for r in &prep.kept {
        let img = io::load_image(&prep.manifest.image_path(r))?;
        for (c, s) in sum.iter_mut().enumerate() {
            *s += img.channel(c).iter().map(|&v| f64::from(v)).sum::<f64>();
        }
        count += img.height() * img.width();
    }
    Ok(sum.map(|s| (s / count as f64) as f32))
}

/// Rounds to the 8-bit levels a PNG can hold, so in-memory and on-disk
/// variants agree.
fn quantized(img: &ImageTensor) -> Result<ImageTensor> {
    Ok(ImageTensor::from_rgb8(img.height(), img.width(), &img.to_rgb8())?)
}

/// Writes every configured variant of every kept sample.
pub fn synthesize_stage(cfg: &RunConfig, prep: &Prepared, layout: &Layout) -> Result<Vec<VariantSidecar>> {
    let mean = match (cfg.meannorm, cfg.variants.contains(&VariantKind::MeannormNoiseBg)) {
        (MeanSource::Dataset, true) => Some(dataset_mean(prep).stage(Stage::Synthesize)?),
        _ => None,
    };
    let per_sample: Vec<Vec<VariantSidecar>> = cfg
        .pool()?
        .install(|| prep.kept.par_iter().map(|r| synthesize_sample(cfg, prep, layout, r, mean)).collect::<Result<_>>())
        .stage(Stage::Synthesize)?;
    Ok(per_sample.into_iter().flatten().collect())
}

fn synthesize_sample(
    cfg: &RunConfig,
    prep: &Prepared,
    layout: &Layout,
    rec: &SampleRecord,
    dataset_mean: Option<[f32; 3]>,
) -> Result<Vec<VariantSidecar>> {
    let img = io::load_image(&prep.manifest.image_path(rec))?;
    let mask = io::load_mask(&prep.manifest.mask_path(rec))?;
    let (h, w) = img.dims();
    let mut sidecars = Vec::with_capacity(cfg.variants.len());
    for kind in &cfg.variants {
        let label = kind.label();
        let seed = VariantSpec::new(*kind, cfg.seed).sample_seed(&rec.sample_id);
        let mut sidecar = VariantSidecar {
            sample_id: rec.sample_id.clone(),
            variant: label.clone(),
            seed,
            donor_sample_id: None,
            background_fill: None,
            corruption: None,
            severity: None,
            mean_source: None,
        };
        let mut produce = || -> Result<ImageTensor> {
            let mut donor_bg = None;
            if let Some(strategy) = kind.donor_strategy() {
                let donor = pick_donor(strategy, rec, &prep.kept, prep.manifest.class_count(), cfg.seed)?;
                let donor_img = io::load_image(&prep.manifest.image_path(donor))?;
                let donor_mask = io::load_mask(&prep.manifest.mask_path(donor))?;
                donor_bg = Some(donor_background(&donor_img, &donor_mask, h, w)?);
                sidecar.donor_sample_id = Some(donor.sample_id.clone());
                sidecar.background_fill = Some("dilation_average");
            }
            if let VariantKind::CorruptContext(spec) = kind {
                sidecar.corruption = Some(spec.params());
                sidecar.severity = Some(spec.severity());
            }
            let out = match (kind, dataset_mean) {
                (VariantKind::MeannormNoiseBg, Some(color)) => constant_background(&img, &mask, color)?,
                _ => synthesize(kind, &img, &mask, donor_bg.as_ref(), seed)?,
            };
            if *kind == VariantKind::MeannormNoiseBg {
                sidecar.mean_source = Some(cfg.meannorm);
            }
            quantized(&out)
        };
        let out = produce().map_err(|e| e.for_sample(&rec.sample_id, &label))?;
        io::save_png(&layout.variant_image(&label, &rec.sample_id), &out)?;
        io::write_json(&layout.variant_sidecar(&label, &rec.sample_id), &sidecar)?;
        sidecars.push(sidecar);
    }
    Ok(sidecars)
}

/// Attribution settings recorded next to each map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSidecar {
    pub sample_id: String,
    pub variant: String,
    pub model_id: String,
    pub method: MethodKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_layer: Option<usize>,
    pub class_idx: usize,
    pub height: usize,
    pub width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scoring: Option<&'static str>,
    /// Negative values were set to zero when the map was built.
    pub clamped: bool,
}

/// Model id of a built-in network: its name, else the file stem.
pub fn model_id(net: &Network, path: &Path) -> String {
    match net.name() {
        Some(n) if !n.is_empty() => n.to_string(),
        _ => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "builtin".into()),
    }
}

/// Runs the network on every synthesized variant, explaining its top class.
/// Images whose size differs from the network input are resized (bilinear)
/// first; maps stay in the network's frame.
pub fn attribute_stage(
    cfg: &RunConfig,
    prep: &Prepared,
    layout: &Layout,
    net: &Network,
    model_id: &str,
) -> Result<Vec<PredictionRecord>> {
    if net.class_count() < prep.manifest.class_count() {
        return Err(Error::Config(format!(
            "network has {} classes, manifest has {}",
            net.class_count(),
            prep.manifest.class_count()
        )));
    }
    let shape = net.input_shape();
    if !shape.is_spatial() || shape.channels() != 3 {
        return Err(Error::Config(format!("network input {:?} is not an RGB image", shape)));
    }
    let target = if cfg.method.kind.uses_target_layer() {
        Some(cfg.method.resolve_target(net).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let (in_h, in_w) = shape.frame();
    let tasks: Vec<(&SampleRecord, String)> =
        prep.kept.iter().flat_map(|r| cfg.variants.iter().map(move |k| (r, k.label()))).collect();
    let run = |(rec, label): &(&SampleRecord, String)| -> Result<PredictionRecord> {
        let go = || -> Result<PredictionRecord> {
            let mut img = io::load_image(&layout.variant_image(label, &rec.sample_id))?;
            if img.dims() != (in_h, in_w) {
                img = img.resize_bilinear(in_h, in_w)?;
            }
            let x = Tensor::from(&img);
            let trace = net.forward(&x)?;
            let class_idx = trace.top_class();
            let score = softmax(trace.logits())[class_idx];
            let map = attribute(&cfg.method, net, &x, class_idx)?;
            let sidecar = MapSidecar {
                sample_id: rec.sample_id.clone(),
                variant: label.clone(),
                model_id: model_id.to_string(),
                method: cfg.method.kind,
                target_layer: target,
                class_idx,
                height: map.height(),
                width: map.width(),
                scoring: (cfg.method.kind == MethodKind::ScoreCam).then_some(SCORECAM_SCORING),
                clamped: true,
            };
            let path = layout.maps().join(label).join(format!("{}.attr", rec.sample_id));
            io::write_attr(&path, &map)?;
            io::write_json(&path.with_extension("json"), &sidecar)?;
            Ok(PredictionRecord::new(&rec.sample_id, label, model_id, class_idx, rec.class_id, score))
        };
        go().map_err(|e| e.for_sample(&rec.sample_id, label))
    };
    let preds: Vec<PredictionRecord> =
        cfg.pool()?.install(|| tasks.par_iter().map(run).collect::<Result<_>>()).stage(Stage::Attribute)?;
    io::write_jsonl(&layout.predictions(), &preds).stage(Stage::Attribute)?;
    Ok(preds)
}

/// Row counts from joining predictions with the manifest and the maps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub prediction_rows: usize,
    /// Rows for samples removed by the context filter.
    pub filtered_rows: usize,
    /// Rows for variants outside the configured list.
    pub unlisted_variant_rows: usize,
    pub joined: usize,
    /// Configured `(sample, variant)` pairs with no row, per model.
    pub missing_pairs: BTreeMap<String, Vec<String>>,
    /// Maps whose frame differed from the mask and were resized (bilinear).
    pub resized_maps: usize,
    /// Maps summing to zero; excluded from volume statistics.
    pub zero_attribution: usize,
    pub volume_records: usize,
}

/// One joined `(sample, variant, model)` record.
#[derive(Debug, Clone, PartialEq)]
pub struct Joined {
    pub pred: PredictionRecord,
    pub stratum: SizeStratum,
    pub volume: Option<VolumeAttribution>,
    pub resized: bool,
}

/// Joins prediction rows with the manifest and one `ATTR` map each.
pub fn join(
    cfg: &RunConfig,
    prep: &Prepared,
    rows: Vec<(usize, PredictionRecord)>,
    preds_path: &Path,
    maps_dir: &Path,
) -> Result<(Vec<Joined>, Reconciliation)> {
    let kept: HashMap<&str, &SampleRecord> = prep.kept.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let labels = cfg.variant_labels();
    let listed: HashSet<&str> = labels.iter().map(String::as_str).collect();
    let mut rec = Reconciliation { prediction_rows: rows.len(), ..Default::default() };
    let mut seen: HashSet<(String, String, String)> = HashSet::new();
    let mut accepted = Vec::new();
    for (line, p) in rows {
        if prep.manifest.get(&p.sample_id).is_none() {
            return Err(Error::OrphanRecord { sample_id: p.sample_id, variant: p.variant });
        }
        if !kept.contains_key(p.sample_id.as_str()) {
            rec.filtered_rows += 1;
            continue;
        }
        if !listed.contains(p.variant.as_str()) {
            rec.unlisted_variant_rows += 1;
            continue;
        }
        if p.label_class >= prep.manifest.class_count() {
            return Err(Error::Schema {
                path: preds_path.into(),
                line,
                message: format!("label_class {} outside 0..{}", p.label_class, prep.manifest.class_count()),
            });
        }
        if !seen.insert((p.sample_id.clone(), p.variant.clone(), p.model_id.clone())) {
            return Err(Error::DuplicateRecord { sample_id: p.sample_id, variant: p.variant, model_id: p.model_id });
        }
        accepted.push(p);
    }
    let models: Vec<&str> = {
        let mut m: Vec<&str> = accepted.iter().map(|p| p.model_id.as_str()).collect();
        m.sort_unstable();
        m.dedup();
        m
    };
    for model in &models {
        let missing: Vec<String> = prep
            .kept
            .iter()
            .flat_map(|r| labels.iter().map(move |l| (r, l)))
            .filter(|(r, l)| !seen.contains(&(r.sample_id.clone(), (*l).clone(), model.to_string())))
            .map(|(r, l)| format!("{}/{}", r.sample_id, l))
            .collect();
        if !missing.is_empty() {
            rec.missing_pairs.insert(model.to_string(), missing);
        }
    }

    let masks: HashMap<&str, BinaryMask> = prep
        .kept
        .par_iter()
        .map(|r| Ok((r.sample_id.as_str(), io::load_mask(&prep.manifest.mask_path(r))?)))
        .collect::<Result<_>>()?;
    let joined: Vec<Joined> = cfg.pool()?.install(|| {
        accepted
            .into_par_iter()
            .map(|pred| {
                let mask = &masks[pred.sample_id.as_str()];
                let path = map_path(maps_dir, &pred.model_id, &pred.variant, &pred.sample_id);
                if !path.is_file() {
                    return Err(Error::MissingMap { sample_id: pred.sample_id, variant: pred.variant, path });
                }
                let measure = || -> Result<(Option<VolumeAttribution>, bool)> {
                    let mut map = io::read_attr(&path)?;
                    let resized = map.dims() != mask.dims();
                    if resized {
                        map = map.resize_bilinear(mask.height(), mask.width())?;
                    }
                    match volume_attribution(&map, mask) {
                        Ok(v) => Ok((Some(v), resized)),
                        Err(CoreError::ZeroAttribution) => Ok((None, resized)),
                        Err(e) => Err(e.into()),
                    }
                };
                let (volume, resized) = measure().map_err(|e| e.for_sample(&pred.sample_id, &pred.variant))?;
                Ok(Joined { stratum: SizeStratum::of_fraction(mask.object_fraction()), volume, resized, pred })
            })
            .collect::<Result<_>>()
    })?;
    rec.joined = joined.len();
    rec.resized_maps = joined.iter().filter(|j| j.resized).count();
    rec.zero_attribution = joined.iter().filter(|j| j.volume.is_none()).count();
    rec.volume_records = rec.joined - rec.zero_attribution;
    Ok((joined, rec))
}

/// Mean volume attribution per split and per object-size stratum; `None`
/// marks an empty group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VolumeStats {
    pub all: Option<GroupMean>,
    pub correct: Option<GroupMean>,
    pub wrong: Option<GroupMean>,
    pub large: Option<GroupMean>,
    pub small: Option<GroupMean>,
    pub other: Option<GroupMean>,
}

impl VolumeStats {
    /// `(split, stratum, group)` rows in report order.
    pub fn rows(&self) -> [(&'static str, &'static str, Option<GroupMean>); 6] {
        [
            ("all", "all", self.all),
            ("correct", "all", self.correct),
            ("wrong", "all", self.wrong),
            ("all", "large", self.large),
            ("all", "small", self.small),
            ("all", "other", self.other),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub n: usize,
    pub correct: usize,
    /// Percent.
    pub accuracy: f64,
    pub context_change: bool,
    pub perturbation: bool,
    pub no_information: bool,
    pub zero_attribution: usize,
    pub volume: VolumeStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAnalysis {
    pub accuracy: AccuracyTable,
    pub variants: BTreeMap<String, VariantStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub filter: FilterSummary,
    pub join: Reconciliation,
    /// Each stage's input count equals its dropped plus reported counts.
    pub balanced: bool,
}

impl Accounting {
    fn new(filter: FilterSummary, join: Reconciliation) -> Self {
        let filter_ok = filter.records_in == filter.dropped.len() + filter.kept;
        let join_ok = join.prediction_rows == join.filtered_rows + join.unlisted_variant_rows + join.joined;
        let volume_ok = join.joined == join.zero_attribution + join.volume_records;
        Self { balanced: filter_ok && join_ok && volume_ok, filter, join }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelProvenance {
    Builtin { model_id: String, network_sha256: String, target_layer: Option<usize> },
    External { predictions_sha256: String },
}

/// Inputs and settings that determine a report. Holds no paths or times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub severity: u8,
    pub context_threshold: f64,
    pub variants: Vec<String>,
    pub method: ctxattr_core::attribution::MethodSpec,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scorecam_scoring: Option<String>,
    pub meannorm: MeanSource,
    pub manifest_sha256: String,
    pub model: ModelProvenance,
    pub config_sha256: String,
    pub mixed_background_fill: String,
    pub map_sign: String,
    pub map_resize: String,
    pub resized_maps: usize,
    pub zero_attribution_policy: String,
    pub zero_attribution_maps: usize,
    pub joined_records: usize,
    pub seed_derivation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub cc_variants: Vec<String>,
    pub cp_variants: Vec<String>,
    pub no_information_variants: Vec<String>,
    /// Configured variants, in configuration order.
    pub variants: Vec<String>,
    pub models: BTreeMap<String, ModelAnalysis>,
    pub accounting: Accounting,
    pub provenance: Provenance,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{:02x}", b)).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&io::read_bytes(path)?))
}

fn provenance(cfg: &RunConfig, model: ModelProvenance, join: &Reconciliation) -> Result<Provenance> {
    let manifest_sha256 = file_sha256(&cfg.manifest)?;
    let map_sign = match model {
        ModelProvenance::Builtin { .. } => "negative attributions clamped to zero by the attribution method",
        ModelProvenance::External { .. } => "as supplied; maps with negative entries are rejected",
    };
    // Output location and worker count do not affect results, so they stay out of the hash.
    let hashed = serde_json::json!({
        "variants": cfg.variant_labels(),
        "severity": cfg.severity,
        "method": cfg.method,
        "seed": cfg.seed,
        "context_threshold": cfg.context_threshold,
        "meannorm": cfg.meannorm,
        "manifest_sha256": manifest_sha256,
        "model": model,
    });
    Ok(Provenance {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        severity: cfg.severity,
        context_threshold: cfg.context_threshold,
        variants: cfg.variant_labels(),
        method: cfg.method,
        scorecam_scoring: (cfg.method.kind == MethodKind::ScoreCam).then(|| SCORECAM_SCORING.to_string()),
        meannorm: cfg.meannorm,
        manifest_sha256,
        config_sha256: sha256_hex(&serde_json::to_vec(&hashed).expect("json value")),
        model,
        mixed_background_fill: "dilation_average: donor object region filled from its context boundary inward".into(),
        map_sign: map_sign.into(),
        map_resize: "bilinear to mask resolution when frames differ".into(),
        resized_maps: join.resized_maps,
        zero_attribution_policy: "maps summing to zero are counted and excluded from volume statistics".into(),
        zero_attribution_maps: join.zero_attribution,
        joined_records: join.joined,
        seed_derivation: "splitmix64 over (seed, fnv1a(sample_id), fnv1a(variant label))".into(),
    })
}

/// Joins, measures and aggregates. `preds_path` and `maps_dir` come from the
/// attribute stage or from an external runner.
pub fn analyze_stage(cfg: &RunConfig, prep: &Prepared, layout: &Layout) -> Result<Analysis> {
    let go = || -> Result<Analysis> {
        let (preds_path, maps_dir, model) = match &cfg.model {
            Some(ModelSource::External { predictions, maps }) => (
                predictions.clone(),
                maps.clone(),
                ModelProvenance::External { predictions_sha256: file_sha256(predictions)? },
            ),
            Some(ModelSource::Builtin { network }) => {
                let net = io::load_network(network)?;
                let target =
                    if cfg.method.kind.uses_target_layer() { cfg.method.resolve_target(&net).ok() } else { None };
                (
                    layout.predictions(),
                    layout.maps(),
                    ModelProvenance::Builtin {
                        model_id: model_id(&net, network),
                        network_sha256: file_sha256(network)?,
                        target_layer: target,
                    },
                )
            }
            None => return Err(Error::Config("analysis needs a network or external predictions".into())),
        };
        let rows = io::read_jsonl::<PredictionRecord>(&preds_path)?;
        let (joined, reconciliation) = join(cfg, prep, rows, &preds_path, &maps_dir)?;
        let provenance = provenance(cfg, model, &reconciliation)?;
        let analysis = summarize(cfg, prep, joined, reconciliation, provenance)?;
        io::write_json(&layout.analysis(), &analysis)?;
        Ok(analysis)
    };
    go().stage(Stage::Analyze)
}

fn summarize(
    cfg: &RunConfig,
    prep: &Prepared,
    joined: Vec<Joined>,
    reconciliation: Reconciliation,
    provenance: Provenance,
) -> Result<Analysis> {
    let labels = cfg.variant_labels();
    let cc: Vec<String> =
        VariantKind::CONTEXT_CHANGE.iter().filter(|k| cfg.variants.contains(k)).map(VariantKind::label).collect();
    let cp: Vec<String> = VariantKind::perturbations(cfg.severity)?
        .iter()
        .filter(|k| cfg.variants.contains(k))
        .map(VariantKind::label)
        .collect();
    let no_info: Vec<String> = cfg.variants.iter().filter(|k| k.is_no_information()).map(VariantKind::label).collect();

    let mut by_model: BTreeMap<&str, Vec<&Joined>> = BTreeMap::new();
    for j in &joined {
        by_model.entry(j.pred.model_id.as_str()).or_default().push(j);
    }
    let mut models = BTreeMap::new();
    for (model, rows) in by_model {
        let cc_refs: Vec<&str> = cc.iter().map(String::as_str).collect();
        let cp_refs: Vec<&str> = cp.iter().map(String::as_str).collect();
        let accuracy = accuracy_table(rows.iter().map(|j| &j.pred), ORIGINAL, &cc_refs, &cp_refs)?;
        let mut variants = BTreeMap::new();
        for (kind, label) in cfg.variants.iter().zip(&labels) {
            let group: Vec<&&Joined> = rows.iter().filter(|j| &j.pred.variant == label).collect();
            if group.is_empty() {
                continue;
            }
            let mut acc: HashMap<&str, VolumeAccumulator> = HashMap::new();
            for j in &group {
                if let Some(v) = &j.volume {
                    acc.entry("all").or_default().push(v);
                    acc.entry(if j.pred.correct { "correct" } else { "wrong" }).or_default().push(v);
                    acc.entry(j.stratum.as_str()).or_default().push(v);
                }
            }
            let mean = |k: &str| acc.get(k).and_then(|a| a.mean().ok());
            let correct = group.iter().filter(|j| j.pred.correct).count();
            variants.insert(
                label.clone(),
                VariantStats {
                    n: group.len(),
                    correct,
                    accuracy: accuracy.per_variant[label],
                    context_change: kind.is_context_change(),
                    perturbation: cp.contains(label),
                    no_information: kind.is_no_information(),
                    zero_attribution: group.iter().filter(|j| j.volume.is_none()).count(),
                    volume: VolumeStats {
                        all: mean("all"),
                        correct: mean("correct"),
                        wrong: mean("wrong"),
                        large: mean("large"),
                        small: mean("small"),
                        other: mean("other"),
                    },
                },
            );
        }
        models.insert(model.to_string(), ModelAnalysis { accuracy, variants });
    }
    if models.is_empty() {
        return Err(CoreError::EmptyGroup("no prediction rows to analyze".into()).into());
    }
    Ok(Analysis {
        cc_variants: cc,
        cp_variants: cp,
        no_information_variants: no_info,
        variants: labels,
        models,
        accounting: Accounting::new(prep.filter.clone(), reconciliation),
        provenance,
    })
}

/// Runs `f` with the `INCOMPLETE` marker in place, removing it only on success.
pub fn guarded<T>(layout: &Layout, command: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let guard = RunGuard::start(layout, command)?;
    match f() {
        Ok(v) => {
            guard.finish()?;
            Ok(v)
        }
        Err(e) => {
            guard.fail(&e);
            Err(e)
        }
    }
}

/// Every stage in order: filter, synthesize, attribute (built-in model
/// only), analyze and report.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Analysis> {
    let layout = Layout::new(&cfg.out);
    guarded(&layout, "run", || {
        let prep = prepare(cfg)?;
        io::write_json(&layout.filter(), &prep.filter).stage(Stage::Filter)?;
        match &cfg.model {
            Some(ModelSource::Builtin { network }) => {
                synthesize_stage(cfg, &prep, &layout)?;
                let net = io::load_network(network).stage(Stage::Attribute)?;
                attribute_stage(cfg, &prep, &layout, &net, &model_id(&net, network))?;
            }
            Some(ModelSource::External { .. }) => {}
            None => return Err(Error::Config("run needs a network or external predictions".into())),
        }
        let analysis = analyze_stage(cfg, &prep, &layout)?;
        crate::report::write_reports(&layout, &analysis).stage(Stage::Report)?;
        Ok(analysis)
    })
}
