//! Renders `analysis.json` into CSV and JSON report files.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;
use crate::pipeline::{Analysis, Layout};

pub const ACCURACY_CSV: &str = "accuracy.csv";
pub const ACCURACY_SUMMARY_CSV: &str = "accuracy_summary.csv";
pub const VOLUME_CSV: &str = "volume.csv";
pub const NO_INFORMATION_CSV: &str = "no_information.csv";
pub const REPORT_JSON: &str = "report.json";
pub const PROVENANCE_JSON: &str = "provenance.json";

fn pct(v: f64) -> String {
    format!("{:.1}", v)
}

fn frac(v: f64) -> String {
    format!("{:.6}", v)
}

fn opt(v: Option<f64>, f: fn(f64) -> String) -> String {
    v.map(f).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::io("<csv buffer>", std::io::Error::other(e));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

fn group_of(a: &Analysis, variant: &str) -> &'static str {
    if variant == crate::pipeline::ORIGINAL {
        "original"
    } else if a.cc_variants.iter().any(|v| v == variant) {
        "context_change"
    } else if a.cp_variants.iter().any(|v| v == variant) {
        "perturbation"
    } else {
        "no_information"
    }
}

/// Per-variant accuracy, one row per model and variant.
pub fn accuracy_csv(a: &Analysis) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for (model, m) in &a.models {
        for label in &a.variants {
            if let Some(s) = m.variants.get(label) {
                rows.push(vec![
                    model.clone(),
                    label.clone(),
                    group_of(a, label).into(),
                    s.n.to_string(),
                    s.correct.to_string(),
                    pct(s.accuracy),
                ]);
            }
        }
    }
    csv_bytes(&["model_id", "variant", "group", "n", "correct", "accuracy"], rows)
}

/// Original accuracy, group means and declines per model.
pub fn accuracy_summary_csv(a: &Analysis) -> Result<Vec<u8>> {
    let rows = a
        .models
        .iter()
        .map(|(model, m)| {
            let t = &m.accuracy;
            vec![
                model.clone(),
                pct(t.orig),
                opt(t.mean_cc, pct),
                opt(t.decline_cc, pct),
                opt(t.mean_cp, pct),
                opt(t.decline_cp, pct),
            ]
        })
        .collect();
    csv_bytes(&["model_id", "orig", "mean_cc", "decline_cc", "mean_cp", "decline_cp"], rows)
}

/// Volume attribution per model, variant, correctness split and size stratum.
/// Empty groups have `n = 0` and blank means.
pub fn volume_csv(a: &Analysis) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for (model, m) in &a.models {
        for label in &a.variants {
            let Some(s) = m.variants.get(label) else { continue };
            for (split, stratum, g) in s.volume.rows() {
                rows.push(vec![
                    model.clone(),
                    label.clone(),
                    split.into(),
                    stratum.into(),
                    g.map(|g| g.count).unwrap_or(0).to_string(),
                    opt(g.map(|g| g.v_object), frac),
                    opt(g.map(|g| g.v_context), frac),
                ]);
            }
        }
    }
    csv_bytes(&["model_id", "variant", "split", "stratum", "n", "v_object", "v_context"], rows)
}

/// The no-information backgrounds side by side.
pub fn no_information_csv(a: &Analysis) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for (model, m) in &a.models {
        for label in &a.no_information_variants {
            let Some(s) = m.variants.get(label) else { continue };
            let all = s.volume.all;
            rows.push(vec![
                model.clone(),
                label.clone(),
                s.n.to_string(),
                pct(s.accuracy),
                opt(all.map(|g| g.v_object), frac),
                opt(all.map(|g| g.v_context), frac),
            ]);
        }
    }
    csv_bytes(&["model_id", "variant", "n", "accuracy", "v_object", "v_context"], rows)
}

#[derive(Serialize)]
struct ReportJson<'a> {
    models: &'a std::collections::BTreeMap<String, crate::pipeline::ModelAnalysis>,
    cc_variants: &'a [String],
    cp_variants: &'a [String],
    no_information_variants: &'a [String],
    accounting: &'a crate::pipeline::Accounting,
    settings: Settings<'a>,
}

#[derive(Serialize)]
struct Settings<'a> {
    seed: u64,
    severity: u8,
    context_threshold: f64,
    variants: &'a [String],
    method: &'a ctxattr_core::attribution::MethodSpec,
    meannorm: crate::config::MeanSource,
}

pub fn report_json(a: &Analysis) -> Vec<u8> {
    let p = &a.provenance;
    io::json_bytes(&ReportJson {
        models: &a.models,
        cc_variants: &a.cc_variants,
        cp_variants: &a.cp_variants,
        no_information_variants: &a.no_information_variants,
        accounting: &a.accounting,
        settings: Settings {
            seed: p.seed,
            severity: p.severity,
            context_threshold: p.context_threshold,
            variants: &a.variants,
            method: &p.method,
            meannorm: p.meannorm,
        },
    })
}

/// Writes every report file into `dir`.
pub fn render(dir: &Path, a: &Analysis) -> Result<()> {
    io::write_atomic(&dir.join(ACCURACY_CSV), &accuracy_csv(a)?)?;
    io::write_atomic(&dir.join(ACCURACY_SUMMARY_CSV), &accuracy_summary_csv(a)?)?;
    io::write_atomic(&dir.join(VOLUME_CSV), &volume_csv(a)?)?;
    io::write_atomic(&dir.join(NO_INFORMATION_CSV), &no_information_csv(a)?)?;
    io::write_atomic(&dir.join(REPORT_JSON), &report_json(a))?;
    io::write_json(&dir.join(PROVENANCE_JSON), &a.provenance)
}

pub fn write_reports(layout: &Layout, a: &Analysis) -> Result<()> {
    render(&layout.root, a)
}

/// Re-renders the reports of an existing run directory.
pub fn report_from_dir(layout: &Layout) -> Result<Analysis> {
    let a: Analysis = io::read_json(&layout.analysis())?;
    write_reports(layout, &a)?;
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presentation_rounding() {
        assert_eq!(pct(89.95), "90.0");
        assert_eq!(pct(83.33333), "83.3");
        assert_eq!(opt(None, pct), "");
        assert_eq!(frac(0.5), "0.500000");
    }

    #[test]
    fn csv_quotes_fields_when_needed() {
        let bytes = csv_bytes(&["a", "b"], vec![vec!["x,y".into(), "1".into()]]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "a,b\n\"x,y\",1\n");
    }
}
