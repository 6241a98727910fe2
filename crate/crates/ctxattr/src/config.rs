//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use ctxattr_core::attribution::{MethodKind, MethodSpec};
use ctxattr_core::synthesis::{VariantKind, DEFAULT_SEVERITY};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_CONTEXT_THRESHOLD: f64 = 0.30;

/// Where the per-channel colour of `meannorm_noise_bg` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanSource {
    /// Each image's own mean colour.
    #[default]
    Image,
    /// Mean colour over all kept original images.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Run the built-in engine on a network JSON file.
    Builtin { network: PathBuf },
    /// Read predictions JSONL and `ATTR` maps produced elsewhere.
    External { predictions: PathBuf, maps: PathBuf },
}

/// Configuration file layout. Every field is optional; relative paths are
/// resolved against the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub manifest: Option<PathBuf>,
    pub variants: Option<Vec<String>>,
    pub severity: Option<u8>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub context_threshold: Option<f64>,
    pub meannorm: Option<MeanSource>,
    pub jobs: Option<usize>,
    pub method: Option<MethodFile>,
    pub network: Option<PathBuf>,
    pub external_preds: Option<PathBuf>,
    pub external_maps: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodFile {
    pub kind: Option<String>,
    pub target_layer: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut file: ConfigFile =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in
            [&mut file.manifest, &mut file.out, &mut file.network, &mut file.external_preds, &mut file.external_maps]
                .into_iter()
                .flatten()
        {
            *p = base.join(&*p);
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub variants: Vec<VariantKind>,
    pub severity: u8,
    /// Required by the attribute and run stages.
    pub model: Option<ModelSource>,
    pub method: MethodSpec,
    pub seed: u64,
    pub out: PathBuf,
    pub context_threshold: f64,
    pub meannorm: MeanSource,
    /// Worker threads; `None` uses available parallelism.
    pub jobs: Option<usize>,
}

/// The default variant list: original, context change, no-information
/// backgrounds and the five perturbations at `severity`.
pub fn default_variants(severity: u8) -> Result<Vec<VariantKind>> {
    let mut v = vec![VariantKind::Original];
    v.extend(VariantKind::CONTEXT_CHANGE);
    v.extend([VariantKind::GaussianNoiseBg, VariantKind::WhiteNoiseBg, VariantKind::MeannormNoiseBg]);
    v.extend(VariantKind::perturbations(severity)?);
    Ok(v)
}

/// Parses variant labels; `all` expands to [`default_variants`]. The original
/// is always included, first, and duplicates are dropped.
pub fn parse_variants(labels: &[String], severity: u8) -> Result<Vec<VariantKind>> {
    let mut out = vec![VariantKind::Original];
    for label in labels.iter().flat_map(|l| l.split(',')).map(str::trim).filter(|l| !l.is_empty()) {
        let kinds = if label == "all" {
            default_variants(severity)?
        } else {
            vec![VariantKind::parse_with_severity(label, severity).map_err(|e| Error::Config(e.to_string()))?]
        };
        for k in kinds {
            if !out.contains(&k) {
                out.push(k);
            }
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Builds a config from the file layer. A model source is required only
    /// when `need_model` is set.
    pub fn resolve(file: ConfigFile, need_model: bool) -> Result<Self> {
        let manifest = file.manifest.ok_or_else(|| Error::Config("no manifest given".into()))?;
        let severity = file.severity.unwrap_or(DEFAULT_SEVERITY);
        if !(1..=5).contains(&severity) {
            return Err(Error::Config(format!("severity {} outside 1..=5", severity)));
        }
        let variants = match &file.variants {
            Some(v) => parse_variants(v, severity)?,
            None => default_variants(severity)?,
        };
        let threshold = file.context_threshold.unwrap_or(DEFAULT_CONTEXT_THRESHOLD);
        if !(0.0..1.0).contains(&threshold) {
            return Err(Error::Config(format!("context threshold {} outside [0, 1)", threshold)));
        }
        if file.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        let model = match (file.network, file.external_preds, file.external_maps) {
            (Some(network), None, None) => Some(ModelSource::Builtin { network }),
            (None, Some(predictions), Some(maps)) => Some(ModelSource::External { predictions, maps }),
            (None, None, None) if !need_model => None,
            (Some(_), _, _) => {
                return Err(Error::Config("give either a network or external predictions, not both".into()))
            }
            _ => return Err(Error::Config("need a network, or both external predictions and external maps".into())),
        };
        let method_file = file.method.unwrap_or_default();
        let kind = match method_file.kind {
            Some(k) => k.parse::<MethodKind>().map_err(|e| Error::Config(e.to_string()))?,
            None => MethodKind::GradCam,
        };
        let mut method = MethodSpec::new(kind);
        method.target_layer = method_file.target_layer;
        Ok(Self {
            manifest,
            variants,
            severity,
            model,
            method,
            seed: file.seed.unwrap_or(DEFAULT_SEED),
            out: file.out.unwrap_or_else(|| PathBuf::from("out")),
            context_threshold: threshold,
            meannorm: file.meannorm.unwrap_or_default(),
            jobs: file.jobs,
        })
    }

    pub fn variant_labels(&self) -> Vec<String> {
        self.variants.iter().map(VariantKind::label).collect()
    }

    /// Thread pool sized by `jobs`.
    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.jobs {
            builder = builder.num_threads(n);
        }
        builder.build().map_err(|e| Error::Config(format!("thread pool: {}", e)))
    }
}
