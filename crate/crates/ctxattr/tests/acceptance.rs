//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ctxattr::config::{ConfigFile, RunConfig};
use ctxattr::pipeline::{self, Layout};
use ctxattr::{fixture, io};
use ctxattr_core::attribution::{fullgrad_decomposition, gradcam, scorecam};
use ctxattr_core::engine::{
    grad_check_with, GradCheckConfig, LayerSpec, Network, NetworkBuilder, Padding, Shape, Tensor,
};
use ctxattr_core::metrics::{
    accuracy_table, volume_attribution, volume_attribution_values, AccuracyTable, PredictionRecord,
};
use ctxattr_core::seed::rng;
use ctxattr_core::synthesis::{synthesize, Corruption, CorruptionSpec, VariantKind};
use ctxattr_core::tensor::resize_plane;
use ctxattr_core::{AttributionMap, BinaryMask};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed < Duration::from_secs(limit_s), || format!("took {:.2?}, limit {}s", elapsed, limit_s))
}

fn random_pair(r: &mut impl Rng) -> (Vec<f64>, BinaryMask) {
    let (h, w) = (r.random_range(1..12usize), r.random_range(1..12usize));
    let values: Vec<f64> =
        (0..h * w).map(|_| if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..10.0f64).powi(3) }).collect();
    let mask = BinaryMask::from_fn(h, w, |_, _| r.random_bool(0.5)).unwrap();
    (values, mask)
}

fn volume_identities() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut pairs = 0;
    let mut worst_sum = 0.0f64;
    let mut worst_scale = 0.0f64;
    while pairs < 1000 {
        let (values, mask) = random_pair(&mut r);
        if values.iter().all(|&v| v == 0.0) {
            continue;
        }
        pairs += 1;
        let base = volume_attribution_values(&values, &mask).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((base.v_object + base.v_context - 1.0).abs());
        for c in [1e-6, 1.0, 1e6] {
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            let v = volume_attribution_values(&scaled, &mask).map_err(|e| e.to_string())?;
            worst_scale = worst_scale.max((v.v_object - base.v_object).abs()).max((v.v_context - base.v_context).abs());
        }
        // Support concentration on f32 maps.
        let (h, w) = mask.dims();
        let on: Vec<f32> =
            mask.data().iter().zip(&values).map(|(&m, &v)| if m == 1 { v as f32 + 1.0 } else { 0.0 }).collect();
        let off: Vec<f32> =
            mask.data().iter().zip(&values).map(|(&m, &v)| if m == 0 { v as f32 + 1.0 } else { 0.0 }).collect();
        if mask.object_count() > 0 {
            let v = volume_attribution(&AttributionMap::new(h, w, on).unwrap(), &mask).unwrap();
            ensure(v.v_object == 1.0 && v.v_context == 0.0, || format!("on-mask support gave {:?}", v))?;
        }
        if mask.context_count() > 0 {
            let v = volume_attribution(&AttributionMap::new(h, w, off).unwrap(), &mask).unwrap();
            ensure(v.v_context == 1.0 && v.v_object == 0.0, || format!("off-mask support gave {:?}", v))?;
        }
    }
    ensure(worst_sum <= 1e-9, || format!("complementarity error {:e}", worst_sum))?;
    ensure(worst_scale <= 1e-9, || format!("scale invariance error {:e}", worst_scale))?;
    within(start.elapsed(), 5)?;
    Ok(format!("1000 pairs, sum err {:.1e}, scale err {:.1e}, {:.2?}", worst_sum, worst_scale, start.elapsed()))
}

/// Object and context mass summed separately, then divided.
fn direct_oracle(values: &[f32], mask: &BinaryMask) -> (f64, f64) {
    let mut obj = 0.0f64;
    let mut ctx = 0.0f64;
    for (v, m) in values.iter().zip(mask.data()) {
        if *m == 1 {
            obj += f64::from(*v);
        } else {
            ctx += f64::from(*v);
        }
    }
    (obj / (obj + ctx), ctx / (obj + ctx))
}

fn metric_oracle() -> Outcome {
    let map = AttributionMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mask = BinaryMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
    let v = volume_attribution(&map, &mask).map_err(|e| e.to_string())?;
    ensure(v.v_object == 0.5 && v.v_context == 0.5, || format!("worked example gave {:?}", v))?;
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 20 {
        let (values, mask) = random_pair(&mut r);
        let values: Vec<f32> = values.iter().map(|&v| v as f32).collect();
        if values.iter().all(|&v| v == 0.0) {
            continue;
        }
        cases += 1;
        let (h, w) = mask.dims();
        let got = volume_attribution(&AttributionMap::new(h, w, values.clone()).unwrap(), &mask)
            .map_err(|e| e.to_string())?;
        let (o, c) = direct_oracle(&values, &mask);
        worst = worst.max((got.v_object - o).abs()).max((got.v_context - c).abs());
    }
    ensure(worst <= 1e-12, || format!("oracle error {:e}", worst))?;
    Ok(format!("worked example 0.5, 20 random cases, max err {:.1e}", worst))
}

fn random_input(shape: Shape, r: &mut impl Rng) -> Tensor {
    Tensor::new(shape, (0..shape.len()).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Redraws until every ReLU input and max-pool winner is clear of its switch point.
fn non_degenerate(net: &Network, r: &mut impl Rng) -> Tensor {
    loop {
        let x = random_input(net.input_shape(), r);
        if net.kink_margin(&x, &net.forward(&x).unwrap()) > 1e-6 {
            return x;
        }
    }
}

fn fullgrad_completeness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for s in 0..5u64 {
        let net = NetworkBuilder::new(Shape::spatial(3, 8, 8))
            .bias_scale(0.5)
            .conv2d(4, 3, 1, Padding::Same, true)
            .relu()
            .conv2d(4, 3, 1, Padding::Same, true)
            .relu()
            .max_pool(2, 2)
            .flatten()
            .dense(3, true)
            .build(&mut rng(500 + s))
            .map_err(|e| e.to_string())?;
        let mut r = rng(600 + s);
        for _ in 0..20 {
            let x = non_degenerate(&net, &mut r);
            let class = r.random_range(0..3);
            let d = fullgrad_decomposition(&net, &x, class).map_err(|e| e.to_string())?;
            let rel = d.residual() / d.logit.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-4, || format!("relative residual {:e}", worst))?;
    within(start.elapsed(), 30)?;
    Ok(format!("5 nets x 20 inputs, max relative residual {:.1e}, {:.2?}", worst, start.elapsed()))
}

fn gradient_check() -> Outcome {
    // Between them these cover every layer kind, padding mode and a stride.
    let nets = [
        NetworkBuilder::new(Shape::spatial(2, 7, 7))
            .conv2d(3, 3, 2, Padding::Same, true)
            .relu()
            .avg_pool(2, 1)
            .global_avg_pool()
            .dense(2, true),
        NetworkBuilder::new(Shape::spatial(2, 6, 6))
            .conv2d(3, 2, 1, Padding::Valid, false)
            .max_pool(3, 1)
            .relu()
            .flatten()
            .dense(4, false)
            .relu()
            .dense(2, true),
        NetworkBuilder::new(Shape::spatial(3, 8, 8))
            .conv2d(4, 3, 1, Padding::Same, true)
            .relu()
            .conv2d(5, 3, 1, Padding::Same, true)
            .relu()
            .max_pool(2, 2)
            .flatten()
            .dense(3, true),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, b) in nets.into_iter().enumerate() {
        let net = b.build(&mut rng(700 + i as u64)).map_err(|e| e.to_string())?;
        let mut r = rng(800 + i as u64);
        for class in 0..2 {
            let x = non_degenerate(&net, &mut r);
            let report = grad_check_with(&net, &x, class, &GradCheckConfig::default()).map_err(|e| e.to_string())?;
            ensure(report.checked > 0, || format!("net {} checked no coordinates", i))?;
            worst = worst.max(report.max_rel_err);
            checked += report.checked;
        }
    }
    ensure(worst <= 1e-3, || format!("max relative error {:e}", worst))?;
    Ok(format!("{} coordinates, max relative error {:.1e}", checked, worst))
}

fn max_abs_diff(a: &AttributionMap, b: &AttributionMap) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| f64::from((x - y).abs())).fold(0.0, f64::max)
}

fn gradcam_is_cam() -> Outcome {
    let mut worst_cam = 0.0f64;
    let mut worst_scale = 0.0f64;
    for s in 0..5u64 {
        let net = NetworkBuilder::new(Shape::spatial(3, 8, 8))
            .conv2d(4, 3, 1, Padding::Same, true)
            .relu()
            .conv2d(5, 3, 2, Padding::Same, true)
            .relu()
            .global_avg_pool()
            .dense(3, true)
            .build(&mut rng(900 + s))
            .map_err(|e| e.to_string())?;
        let mut r = rng(1000 + s);
        let x =
            Tensor::new(net.input_shape(), (0..net.input_shape().len()).map(|_| r.random_range(0.0..1.0)).collect())
                .unwrap();
        let target = 3;
        let acts = net.forward(&x).unwrap().output(target).clone();
        let (h, w) = acts.shape().frame();
        let LayerSpec::Dense { weight, .. } = net.layers().last().unwrap() else { unreachable!() };
        for class in 0..3 {
            let row = &weight[class * 5..(class + 1) * 5];
            let mut cam = vec![0.0; h * w];
            for (k, wk) in row.iter().enumerate() {
                for (c, a) in cam.iter_mut().zip(acts.plane(k)) {
                    *c += wk * a;
                }
            }
            cam.iter_mut().for_each(|v| *v = v.max(0.0));
            let lifted = resize_plane(&cam, h, w, 8, 8);
            let oracle = AttributionMap::from_f64_clamped(8, 8, &lifted).unwrap().normalized();
            let got = gradcam(&net, &x, class, target).map_err(|e| e.to_string())?.normalized();
            worst_cam = worst_cam.max(max_abs_diff(&got, &oracle));

            for factor in [0.25, 3.0, 40.0] {
                let scaled = net
                    .map_layers(|layers| {
                        let Some(LayerSpec::Dense { weight, bias, .. }) = layers.last_mut() else { unreachable!() };
                        weight[class * 5..(class + 1) * 5].iter_mut().for_each(|w| *w *= factor);
                        if let Some(b) = bias {
                            b[class] *= factor;
                        }
                    })
                    .unwrap();
                let m = gradcam(&scaled, &x, class, target).map_err(|e| e.to_string())?.normalized();
                worst_scale = worst_scale.max(max_abs_diff(&m, &got));
            }
        }
    }
    ensure(worst_cam <= 1e-5, || format!("CAM mismatch {:e}", worst_cam))?;
    ensure(worst_scale <= 1e-6, || format!("head scaling changed map by {:e}", worst_scale))?;
    Ok(format!("5 nets, CAM err {:.1e}, head-scale err {:.1e}", worst_cam, worst_scale))
}

fn scorecam_gradient_free() -> Outcome {
    let kernel: Vec<f64> = (1..=9).map(|v| f64::from(v) * 0.1).collect();
    let single = Network::new(
        Shape::spatial(1, 4, 4),
        2,
        vec![
            LayerSpec::Conv2d {
                out_channels: 1,
                kernel: [3, 3],
                stride: 2,
                padding: Padding::Same,
                weight: kernel,
                bias: Some(vec![0.0]),
            },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out_dim: 2, weight: vec![1.0, -1.0], bias: None },
        ],
    )
    .unwrap();
    let mut r = rng(11);
    let x = Tensor::new(Shape::spatial(1, 4, 4), (0..16).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
    let map = scorecam(&single, &x, 0, 1).map_err(|e| e.to_string())?.normalized();
    let acts = single.forward(&x).unwrap().output(1).clone();
    let (h, w) = acts.shape().frame();
    let oracle = AttributionMap::from_f64_clamped(4, 4, &resize_plane(acts.plane(0), h, w, 4, 4)).unwrap().normalized();
    let diff = max_abs_diff(&map, &oracle);
    ensure(diff <= 1e-6, || format!("singleton map differs by {:e}", diff))?;

    let net = fixture::network().map_err(|e| e.to_string())?;
    for s in fixture::samples().map_err(|e| e.to_string())?.iter().take(4) {
        scorecam(&net, &Tensor::from(&s.image), s.record.class_id, 4).map_err(|e| e.to_string())?;
    }
    let calls = single.backward_count() + net.backward_count();
    ensure(calls == 0, || format!("{} backward calls", calls))?;
    Ok(format!("0 backward calls, singleton err {:.1e}", diff))
}

fn rgb_at_mask(rgb: &[u8], mask: &BinaryMask) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, &m) in mask.data().iter().enumerate() {
        if m == 1 {
            out.extend_from_slice(&rgb[3 * i..3 * i + 3]);
        }
    }
    out
}

fn synthesis_config(root: &Path, manifest: &Path, jobs: usize) -> RunConfig {
    RunConfig::resolve(
        ConfigFile {
            manifest: Some(manifest.into()),
            variants: Some(vec!["all".into()]),
            // Keep all 16 samples, including the large-object ones.
            context_threshold: Some(0.0),
            jobs: Some(jobs),
            out: Some(root.join(format!("jobs{}", jobs))),
            ..Default::default()
        },
        false,
    )
    .unwrap()
}

fn synthesis_bit_exactness() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = common::toy_dataset(&dir.path().join("data"));
    let samples = fixture::samples().map_err(|e| e.to_string())?;

    // In memory, every kind at every severity keeps object pixels bit-exact.
    let mut kinds = vec![
        VariantKind::Original,
        VariantKind::OnlyFg,
        VariantKind::GaussianNoiseBg,
        VariantKind::WhiteNoiseBg,
        VariantKind::MeannormNoiseBg,
    ];
    for c in Corruption::ALL {
        for sev in 1..=5 {
            kinds.push(VariantKind::CorruptContext(CorruptionSpec::new(c, sev).unwrap()));
        }
    }
    for (i, s) in samples.iter().enumerate() {
        let donor = &samples[(i + 1) % samples.len()].image;
        let mut all = kinds.clone();
        all.extend([VariantKind::MixedSame, VariantKind::MixedRand, VariantKind::MixedNext]);
        for kind in &all {
            let out = synthesize(kind, &s.image, &s.mask, kind.donor_strategy().map(|_| donor), 42)
                .map_err(|e| e.to_string())?;
            for (c, (a, b)) in out.data().chunks(32 * 32).zip(s.image.data().chunks(32 * 32)).enumerate() {
                for (p, &m) in s.mask.data().iter().enumerate() {
                    if m == 1 && a[p].to_bits() != b[p].to_bits() {
                        return Err(format!("{} {} channel {} pixel {} changed", s.record.sample_id, kind, c, p));
                    }
                    if m == 0 && *kind == VariantKind::OnlyFg && a[p] != 0.0 {
                        return Err(format!("{} only_fg background not zero", s.record.sample_id));
                    }
                }
            }
        }
    }

    // On disk through the pipeline, at 1, 2 and 8 workers.
    let mut snapshots = Vec::new();
    for jobs in [1, 2, 8] {
        let cfg = synthesis_config(dir.path(), &manifest, jobs);
        let prep = pipeline::prepare(&cfg).map_err(|e| e.to_string())?;
        ensure(prep.kept.len() == 16, || format!("{} samples kept", prep.kept.len()))?;
        let layout = Layout::new(&cfg.out);
        pipeline::synthesize_stage(&cfg, &prep, &layout).map_err(|e| e.to_string())?;
        for s in &samples {
            let id = &s.record.sample_id;
            let src = s.image.to_rgb8();
            for label in cfg.variant_labels() {
                let out = io::load_image(&layout.variant_image(&label, id)).map_err(|e| e.to_string())?.to_rgb8();
                ensure(rgb_at_mask(&out, &s.mask) == rgb_at_mask(&src, &s.mask), || {
                    format!("{}/{} object bytes differ", label, id)
                })?;
                if label == "only_fg" {
                    let inv = BinaryMask::from_fn(32, 32, |y, x| !s.mask.is_object(y, x)).unwrap();
                    ensure(rgb_at_mask(&out, &inv).iter().all(|&b| b == 0), || {
                        format!("only_fg/{} background not zero", id)
                    })?;
                }
            }
        }
        snapshots.push(common::snapshot(&layout.root.join("variants")));
    }
    let files = snapshots[0].len();
    ensure(files == 16 * 13 * 2, || format!("{} variant files", files))?;
    ensure(snapshots[0] == snapshots[1] && snapshots[1] == snapshots[2], || {
        "outputs differ across worker counts".into()
    })?;
    Ok(format!("{} in-memory kinds, {} files identical at 1/2/8 workers", kinds.len() + 3, files))
}

fn reference_row_declines() -> Outcome {
    let rows = [
        ("original", 95.9),
        ("only_fg", 88.1),
        ("mixed_next", 82.1),
        ("mixed_rand", 83.8),
        ("mixed_same", 89.6),
        ("fog", 93.4),
        ("snow", 92.5),
        ("motion_blur", 93.6),
        ("gaussian_noise", 93.3),
        ("pixelate", 94.1),
    ];
    let per_variant: BTreeMap<String, f64> = rows.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let cc = ["only_fg", "mixed_next", "mixed_rand", "mixed_same"];
    let cp = ["fog", "snow", "motion_blur", "gaussian_noise", "pixelate"];
    let t = AccuracyTable::from_accuracies(per_variant, "original", &cc, &cp).map_err(|e| e.to_string())?;
    let (dcc, dcp) = (t.decline_cc.unwrap(), t.decline_cp.unwrap());
    ensure((dcc - 10.0).abs() <= 0.05, || format!("decline_cc {}", dcc))?;
    ensure((dcp - 2.5).abs() <= 0.05, || format!("decline_cp {}", dcp))?;

    // The same row through prediction records: 1000 per variant at those rates.
    let mut preds = Vec::new();
    for (variant, acc) in rows {
        let correct = (acc * 10.0f64).round() as usize;
        for i in 0..1000 {
            let predicted = usize::from(i >= correct);
            preds.push(PredictionRecord::new(format!("s{}", i), variant, "resnet50", predicted, 0, 1.0));
        }
    }
    let from_preds = accuracy_table(&preds, "original", &cc, &cp).map_err(|e| e.to_string())?;
    let (pcc, pcp) = (from_preds.decline_cc.unwrap(), from_preds.decline_cp.unwrap());
    ensure((pcc - dcc).abs() < 1e-9 && (pcp - dcp).abs() < 1e-9, || format!("record path gave {} / {}", pcc, pcp))?;
    Ok(format!("decline_cc {:.2}, decline_cp {:.2}", dcc, dcp))
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let reports =
        ["accuracy.csv", "accuracy_summary.csv", "volume.csv", "no_information.csv", "report.json", "provenance.json"];
    let mut outputs = Vec::new();
    let mut analysis = None;
    for (i, jobs) in [(0, 1usize), (1, 8)] {
        let mut file = ConfigFile::load(&fixture::shipped_dir().join("run.toml")).map_err(|e| e.to_string())?;
        file.out = Some(dir.path().join(format!("run{}", i)));
        file.jobs = Some(jobs);
        let cfg = RunConfig::resolve(file, true).map_err(|e| e.to_string())?;
        analysis = Some(pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())?);
        let bytes: Vec<Vec<u8>> = reports.iter().map(|r| std::fs::read(cfg.out.join(r)).unwrap()).collect();
        outputs.push(bytes);
    }
    for (k, name) in reports.iter().enumerate() {
        ensure(outputs[0][k] == outputs[1][k], || format!("{} differs between runs", name))?;
    }
    let a = analysis.unwrap();
    ensure(a.accounting.balanced, || "accounting does not balance".into())?;
    let (model, m) = a.models.iter().next().ok_or("no model in report")?;
    let t = &m.accuracy;
    ensure(t.decline_cc.is_some() && t.decline_cp.is_some(), || "accuracy table lacks declines".into())?;
    ensure(t.cc_variants.len() == 4 && t.cp_variants.len() == 5, || "accuracy table lacks variants".into())?;
    let correct: usize = m.variants.values().filter_map(|s| s.volume.correct.map(|g| g.count)).sum();
    let wrong: usize = m.variants.values().filter_map(|s| s.volume.wrong.map(|g| g.count)).sum();
    ensure(correct > 0 && wrong > 0, || format!("correctness split {} / {}", correct, wrong))?;
    let orig = &m.variants["original"].volume;
    ensure(orig.large.is_some() && orig.small.is_some() && orig.other.is_some(), || "a size stratum is empty".into())?;
    ensure(a.no_information_variants.len() == 4, || "no-information variants missing".into())?;
    for v in &a.no_information_variants {
        ensure(m.variants.get(v).and_then(|s| s.volume.all).is_some(), || format!("{} has no volume", v))?;
    }
    let no_info_rows = String::from_utf8_lossy(&outputs[0][3]).lines().count() - 1;
    ensure(no_info_rows == 4, || format!("no_information.csv has {} rows", no_info_rows))?;
    Ok(format!("{}: 6 reports identical at 1 and 8 workers; split {} correct / {} wrong", model, correct, wrong))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("volume attribution identities", volume_identities),
        ("volume attribution oracle", metric_oracle),
        ("FullGrad completeness", fullgrad_completeness),
        ("engine gradient check", gradient_check),
        ("GradCAM equals CAM", gradcam_is_cam),
        ("ScoreCAM gradient-freedom", scorecam_gradient_free),
        ("synthesis bit-exactness and determinism", synthesis_bit_exactness),
        ("ResNet50 reference row declines", reference_row_declines),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {} ({})", name, detail),
            Err(why) => {
                failed += 1;
                println!("FAIL  {}: {}", name, why);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
