mod common;

use std::path::Path;

use ctxattr::config::ModelSource;
use ctxattr::pipeline::{self, run_pipeline, Layout, INCOMPLETE};
use ctxattr::{io, Error, Stage};
use ctxattr_core::metrics::PredictionRecord;
use ctxattr_core::AttributionMap;

const VARIANTS: &[&str] = &["only_fg", "mixed_next"];

/// Built-in run on the toy fixture; its predictions and maps double as an
/// external bundle.
fn builtin_run(root: &Path) -> (std::path::PathBuf, pipeline::Analysis) {
    let manifest = common::toy_dataset(&root.join("data"));
    let out = root.join("builtin");
    let cfg = common::builtin_config(&manifest, &root.join("data/network.json"), &out, VARIANTS);
    (manifest, run_pipeline(&cfg).unwrap())
}

fn stage_of(err: &Error) -> Option<Stage> {
    match err {
        Error::Stage { stage, .. } => Some(*stage),
        _ => None,
    }
}

#[test]
fn external_bundle_joins_every_row_and_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, builtin) = builtin_run(dir.path());
    let b = Layout::new(dir.path().join("builtin"));
    let out = dir.path().join("external");
    let cfg = common::external_config(&manifest, &b.predictions(), &b.maps(), &out, VARIANTS);
    let ext = run_pipeline(&cfg).unwrap();

    let rows = ext.accounting.join.joined;
    assert_eq!(rows, 12 * 3);
    assert!(ext.accounting.balanced);
    assert_eq!(ext.models, builtin.models);
    assert!(!out.join(INCOMPLETE).exists());
    assert!(!out.join("variants").exists());
}

#[test]
fn missing_map_names_sample_and_variant() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = builtin_run(dir.path());
    let b = Layout::new(dir.path().join("builtin"));
    let maps = dir.path().join("maps");
    common::copy_dir(&b.maps(), &maps);
    std::fs::remove_file(maps.join("mixed_next/toy05.attr")).unwrap();
    let out = dir.path().join("external");
    let cfg = common::external_config(&manifest, &b.predictions(), &maps, &out, VARIANTS);
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(stage_of(&err), Some(Stage::Analyze));
    match err.root() {
        Error::MissingMap { sample_id, variant, .. } => assert_eq!((&**sample_id, &**variant), ("toy05", "mixed_next")),
        other => panic!("{other}"),
    }
    assert_eq!(err.exit_code(), 3);
    let marker = std::fs::read_to_string(out.join(INCOMPLETE)).unwrap();
    assert!(marker.contains("toy05"), "{marker}");
}

fn with_extra_rows(src: &Path, dst: &Path, extra: &[PredictionRecord]) {
    let mut rows: Vec<PredictionRecord> = io::read_jsonl(src).unwrap().into_iter().map(|(_, r)| r).collect();
    rows.extend_from_slice(extra);
    io::write_jsonl(dst, &rows).unwrap();
}

#[test]
fn orphan_and_duplicate_rows_abort() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = builtin_run(dir.path());
    let b = Layout::new(dir.path().join("builtin"));
    let preds = dir.path().join("preds.jsonl");
    let out = dir.path().join("external");

    with_extra_rows(&b.predictions(), &preds, &[PredictionRecord::new("ghost", "original", "toy_colornet", 0, 0, 1.0)]);
    let cfg = common::external_config(&manifest, &preds, &b.maps(), &out, VARIANTS);
    match run_pipeline(&cfg).unwrap_err().root() {
        Error::OrphanRecord { sample_id, .. } => assert_eq!(sample_id, "ghost"),
        other => panic!("{other}"),
    }

    with_extra_rows(&b.predictions(), &preds, &[PredictionRecord::new("toy01", "only_fg", "toy_colornet", 2, 1, 0.5)]);
    match run_pipeline(&cfg).unwrap_err().root() {
        Error::DuplicateRecord { sample_id, variant, .. } => {
            assert_eq!((&**sample_id, &**variant), ("toy01", "only_fg"))
        }
        other => panic!("{other}"),
    }
}

#[test]
fn filtered_and_unlisted_rows_are_counted() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = builtin_run(dir.path());
    let b = Layout::new(dir.path().join("builtin"));
    let preds = dir.path().join("preds.jsonl");
    with_extra_rows(
        &b.predictions(),
        &preds,
        &[
            // toy12 is removed by the context filter.
            PredictionRecord::new("toy12", "original", "toy_colornet", 0, 0, 1.0),
            PredictionRecord::new("toy00", "fog_3", "toy_colornet", 0, 0, 1.0),
        ],
    );
    let cfg = common::external_config(&manifest, &preds, &b.maps(), &dir.path().join("ext"), VARIANTS);
    let a = run_pipeline(&cfg).unwrap();
    let j = &a.accounting.join;
    assert_eq!((j.prediction_rows, j.filtered_rows, j.unlisted_variant_rows, j.joined), (38, 1, 1, 36));
    assert!(a.accounting.balanced);
}

#[test]
fn correct_is_derived_not_trusted() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, builtin) = builtin_run(dir.path());
    let b = Layout::new(dir.path().join("builtin"));
    let text = std::fs::read_to_string(b.predictions()).unwrap();
    let flipped = text.replace("\"correct\":true", "\"correct\":false");
    let preds = dir.path().join("preds.jsonl");
    std::fs::write(&preds, flipped).unwrap();
    let cfg = common::external_config(&manifest, &preds, &b.maps(), &dir.path().join("ext"), VARIANTS);
    assert_eq!(run_pipeline(&cfg).unwrap().models, builtin.models);
}

#[test]
fn maps_at_other_resolutions_are_resized_and_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = builtin_run(dir.path());
    let b = Layout::new(dir.path().join("builtin"));
    let maps = dir.path().join("maps");
    common::copy_dir(&b.maps(), &maps);
    io::write_attr(&maps.join("only_fg/toy00.attr"), &AttributionMap::new(2, 2, vec![1.0; 4]).unwrap()).unwrap();
    let out = dir.path().join("ext");
    let cfg = common::external_config(&manifest, &b.predictions(), &maps, &out, VARIANTS);
    let a = run_pipeline(&cfg).unwrap();
    assert_eq!(a.accounting.join.resized_maps, 1);
    assert_eq!(a.provenance.resized_maps, 1);
    let prov = std::fs::read_to_string(out.join("provenance.json")).unwrap();
    assert!(prov.contains("\"resized_maps\": 1"));
}

#[test]
fn per_model_map_directories_take_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, builtin) = builtin_run(dir.path());
    let b = Layout::new(dir.path().join("builtin"));
    let maps = dir.path().join("maps");
    common::copy_dir(&b.maps(), &maps.join("toy_colornet"));
    let cfg = common::external_config(&manifest, &b.predictions(), &maps, &dir.path().join("ext"), VARIANTS);
    assert_eq!(run_pipeline(&cfg).unwrap().models, builtin.models);
}

#[test]
fn empty_filter_result_aborts() {
    let dir = tempfile::tempdir().unwrap();
    // Object covers 7x7 of 8x8: context fraction 0.23.
    let manifest = common::square_dataset(dir.path(), 4, 8, 8, 7, 2);
    let net = dir.path().join("net.json");
    io::save_network(&net, &ctxattr::fixture::network().unwrap()).unwrap();
    let out = dir.path().join("out");
    let cfg = common::builtin_config(&manifest, &net, &out, &["only_fg"]);
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(stage_of(&err), Some(Stage::Filter));
    assert!(matches!(err.root(), Error::FilterEmptied { .. }));
    assert!(out.join(INCOMPLETE).exists());
}

#[test]
fn network_input_size_differs_from_images() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::square_dataset(dir.path(), 4, 24, 40, 8, 2);
    let net = dir.path().join("net.json");
    io::save_network(&net, &ctxattr::fixture::network().unwrap()).unwrap();
    let out = dir.path().join("out");
    let cfg = common::builtin_config(&manifest, &net, &out, &["only_fg"]);
    let a = run_pipeline(&cfg).unwrap();
    // Maps come out at the network frame and are resized back to each mask.
    assert_eq!(a.accounting.join.resized_maps, 8);
    let map = io::read_attr(&Layout::new(&out).maps().join("original/s0.attr")).unwrap();
    assert_eq!(map.dims(), (32, 32));
}

#[test]
fn stages_run_separately_match_run() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, builtin) = builtin_run(dir.path());
    let out = dir.path().join("staged");
    let cfg = common::builtin_config(&manifest, &dir.path().join("data/network.json"), &out, VARIANTS);
    let layout = Layout::new(&out);
    let prep = pipeline::prepare(&cfg).unwrap();
    pipeline::synthesize_stage(&cfg, &prep, &layout).unwrap();
    let Some(ModelSource::Builtin { network }) = &cfg.model else { unreachable!() };
    let net = io::load_network(network).unwrap();
    pipeline::attribute_stage(&cfg, &prep, &layout, &net, "toy_colornet").unwrap();
    let a = pipeline::analyze_stage(&cfg, &prep, &layout).unwrap();
    assert_eq!(a.models, builtin.models);
}
