//! Object/context volume attribution and the aggregate analyses built on it.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::tensor::{AttributionMap, BinaryMask};

/// Share of attribution mass on object and on context pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeAttribution {
    pub v_object: f64,
    pub v_context: f64,
}

/// `v_object = sum(A * M) / sum(A)`, `v_context = sum(A * (1 - M)) / sum(A)`.
pub fn volume_attribution(map: &AttributionMap, mask: &BinaryMask) -> Result<VolumeAttribution> {
    if map.dims() != mask.dims() {
        bail!(Shape, "map is {:?}, mask is {:?}", map.dims(), mask.dims());
    }
    volume_attribution_values(map.data(), mask)
}

/// [`volume_attribution`] over raw row-major values of any float width.
/// Entries must be finite and non-negative.
pub fn volume_attribution_values<T: Copy + Into<f64>>(values: &[T], mask: &BinaryMask) -> Result<VolumeAttribution> {
    if values.len() != mask.data().len() {
        bail!(Shape, "{} map values for a {:?} mask", values.len(), mask.dims());
    }
    let (mut total, mut object, mut context) = (0.0f64, 0.0f64, 0.0f64);
    for (&v, &m) in values.iter().zip(mask.data()) {
        let v: f64 = v.into();
        if !v.is_finite() || v < 0.0 {
            bail!(Domain, "attribution value {} is negative or not finite", v);
        }
        total += v;
        if m == 1 {
            object += v;
        } else {
            context += v;
        }
    }
    if total == 0.0 {
        return Err(Error::ZeroAttribution);
    }
    Ok(VolumeAttribution { v_object: object / total, v_context: context / total })
}

/// Running `(count, sum)` of volume attributions. Merging is a plain sum, so
/// a fixed merge order gives a fixed result.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VolumeAccumulator {
    pub count: usize,
    pub sum_object: f64,
    pub sum_context: f64,
}

impl VolumeAccumulator {
    pub fn push(&mut self, v: &VolumeAttribution) {
        self.count += 1;
        self.sum_object += v.v_object;
        self.sum_context += v.v_context;
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.sum_object += other.sum_object;
        self.sum_context += other.sum_context;
    }

    pub fn mean(&self) -> Result<GroupMean> {
        if self.count == 0 {
            bail!(EmptyGroup, "no records to average");
        }
        let n = self.count as f64;
        Ok(GroupMean { count: self.count, v_object: self.sum_object / n, v_context: self.sum_context / n })
    }
}

impl<'a> FromIterator<&'a VolumeAttribution> for VolumeAccumulator {
    fn from_iter<I: IntoIterator<Item = &'a VolumeAttribution>>(iter: I) -> Self {
        let mut acc = Self::default();
        iter.into_iter().for_each(|v| acc.push(v));
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub count: usize,
    pub v_object: f64,
    pub v_context: f64,
}

/// Mean volume attribution per key, in key order.
pub fn aggregate<K: Ord, I>(records: I) -> Result<BTreeMap<K, GroupMean>>
where
    I: IntoIterator<Item = (K, VolumeAttribution)>,
{
    let mut groups: BTreeMap<K, VolumeAccumulator> = BTreeMap::new();
    for (key, v) in records {
        groups.entry(key).or_default().push(&v);
    }
    if groups.is_empty() {
        bail!(EmptyGroup, "no records to aggregate");
    }
    groups.into_iter().map(|(k, acc)| Ok((k, acc.mean()?))).collect()
}

/// One model output. `correct` is always derived from the two class fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PredictionRow")]
pub struct PredictionRecord {
    pub sample_id: String,
    pub variant: String,
    pub model_id: String,
    pub predicted_class: usize,
    pub label_class: usize,
    pub correct: bool,
    pub score: f64,
}

#[derive(Deserialize)]
struct PredictionRow {
    sample_id: String,
    variant: String,
    model_id: String,
    predicted_class: usize,
    label_class: usize,
    score: f64,
}

impl From<PredictionRow> for PredictionRecord {
    fn from(r: PredictionRow) -> Self {
        Self::new(r.sample_id, r.variant, r.model_id, r.predicted_class, r.label_class, r.score)
    }
}

impl PredictionRecord {
    pub fn new(
        sample_id: impl Into<String>,
        variant: impl Into<String>,
        model_id: impl Into<String>,
        predicted_class: usize,
        label_class: usize,
        score: f64,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            variant: variant.into(),
            model_id: model_id.into(),
            predicted_class,
            label_class,
            correct: predicted_class == label_class,
            score,
        }
    }
}

/// `(correct, wrong)`, preserving input order.
pub fn split_by_correctness<'a, I>(preds: I) -> (Vec<&'a PredictionRecord>, Vec<&'a PredictionRecord>)
where
    I: IntoIterator<Item = &'a PredictionRecord>,
{
    preds.into_iter().partition(|p| p.correct)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeStratum {
    Large,
    Small,
    Other,
}

impl SizeStratum {
    pub const ALL: [SizeStratum; 3] = [SizeStratum::Large, SizeStratum::Small, SizeStratum::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            SizeStratum::Large => "large",
            SizeStratum::Small => "small",
            SizeStratum::Other => "other",
        }
    }

    /// Large for an object fraction in `[0.30, 0.50]`, small below `0.20`.
    pub fn of_fraction(object_fraction: f64) -> Self {
        if (0.30..=0.50).contains(&object_fraction) {
            SizeStratum::Large
        } else if object_fraction < 0.20 {
            SizeStratum::Small
        } else {
            SizeStratum::Other
        }
    }
}

pub fn size_strata(mask: &BinaryMask) -> SizeStratum {
    SizeStratum::of_fraction(mask.object_fraction())
}

/// Accuracies in percent. Means and declines are absent when their variant
/// list is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub orig: f64,
    pub per_variant: BTreeMap<String, f64>,
    pub cc_variants: Vec<String>,
    pub cp_variants: Vec<String>,
    pub mean_cc: Option<f64>,
    pub mean_cp: Option<f64>,
    pub decline_cc: Option<f64>,
    pub decline_cp: Option<f64>,
}

impl AccuracyTable {
    /// From per-variant accuracies (percent). `per_variant` must hold `orig`
    /// and every listed variant.
    pub fn from_accuracies(
        per_variant: BTreeMap<String, f64>,
        orig: &str,
        cc_variants: &[&str],
        cp_variants: &[&str],
    ) -> Result<Self> {
        let lookup = |name: &str| -> Result<f64> {
            per_variant.get(name).copied().ok_or_else(|| Error::MissingVariant(name.into()))
        };
        let orig_acc = lookup(orig)?;
        let mean = |names: &[&str]| -> Result<Option<f64>> {
            if names.is_empty() {
                return Ok(None);
            }
            let mut sum = 0.0;
            for n in names {
                sum += lookup(n)?;
            }
            Ok(Some(sum / names.len() as f64))
        };
        let mean_cc = mean(cc_variants)?;
        let mean_cp = mean(cp_variants)?;
        Ok(Self {
            orig: orig_acc,
            cc_variants: cc_variants.iter().map(|s| (*s).into()).collect(),
            cp_variants: cp_variants.iter().map(|s| (*s).into()).collect(),
            decline_cc: mean_cc.map(|m| orig_acc - m),
            decline_cp: mean_cp.map(|m| orig_acc - m),
            mean_cc,
            mean_cp,
            per_variant,
        })
    }
}

/// Accuracy table from prediction records grouped by their `variant` field.
pub fn accuracy_table<'a, I>(preds: I, orig: &str, cc_variants: &[&str], cp_variants: &[&str]) -> Result<AccuracyTable>
where
    I: IntoIterator<Item = &'a PredictionRecord>,
{
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for p in preds {
        let e = counts.entry(p.variant.clone()).or_default();
        e.0 += usize::from(p.correct);
        e.1 += 1;
    }
    let per_variant = counts.into_iter().map(|(k, (c, n))| (k, 100.0 * c as f64 / n as f64)).collect();
    AccuracyTable::from_accuracies(per_variant, orig, cc_variants, cp_variants)
}

/// Items kept by [`context_fraction_filter`] and the share retained.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered<T> {
    pub kept: Vec<T>,
    pub dropped: usize,
}

impl<T> Filtered<T> {
    pub fn kept_fraction(&self) -> f64 {
        let total = self.kept.len() + self.dropped;
        if total == 0 {
            0.0
        } else {
            self.kept.len() as f64 / total as f64
        }
    }
}

/// Keeps items whose context fraction is strictly above `threshold`.
pub fn context_fraction_filter<T, F>(items: Vec<T>, threshold: f64, mut context_fraction: F) -> Result<Filtered<T>>
where
    F: FnMut(&T) -> Result<f64>,
{
    if !(0.0..1.0).contains(&threshold) {
        bail!(Param, "context threshold {} outside [0, 1)", threshold);
    }
    let mut kept = Vec::with_capacity(items.len());
    let mut dropped = 0;
    for item in items {
        if context_fraction(&item)? > threshold {
            kept.push(item);
        } else {
            dropped += 1;
        }
    }
    Ok(Filtered { kept, dropped })
}
