use mbp_core::data::{generate_toy_scene, synthesize_blur, BlurSpec, PairedSequence};
use mbp_core::infer::{infer_sequence, InferOptions};
use mbp_core::metrics::{
    evaluate, format_comparison, format_report, parse_report, psnr, psnr_values, rank_by_psnr, ssim, ssim_values,
    Aggregate, EvalOptions, Fingerprint, MetricsReport, ReportStyle, SceneMetrics, PSNR_RULE, SSIM_RULE,
};
use mbp_core::{Frame, FrameSequence, Model, ModelConfig, Variant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frame(h: usize, w: usize, f: impl FnMut(usize) -> f32) -> Frame {
    Frame::from_fn(h, w, f)
}

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    frame(h, w, |_| rng.gen())
}

/// Direct per-window SSIM: every window position evaluated from scratch with
/// centred second moments.
fn ssim_oracle(a: &[f64], b: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let k = 11;
    let mut g = vec![0.0; k * k];
    for y in 0..k {
        for x in 0..k {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            g[y * k + x] = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    for ch in 0..c {
        let at = |img: &[f64], y: usize, x: usize| img[(ch * h + y) * w + x];
        let mut sum = 0.0;
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in 0..k {
                    for x in 0..k {
                        ma += g[y * k + x] * at(a, y0 + y, x0 + x);
                        mb += g[y * k + x] * at(b, y0 + y, x0 + x);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for y in 0..k {
                    for x in 0..k {
                        let da = at(a, y0 + y, x0 + x) - ma;
                        let db = at(b, y0 + y, x0 + x) - mb;
                        va += g[y * k + x] * da * da;
                        vb += g[y * k + x] * db * db;
                        cov += g[y * k + x] * da * db;
                    }
                }
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        acc += sum / ((h - k + 1) * (w - k + 1)) as f64;
    }
    acc / c as f64
}

fn values(f: &Frame) -> Vec<f64> {
    f.data().iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect()
}

#[test]
fn psnr_identical_is_the_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_frame(&mut rng, 8, 8);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
}

#[test]
fn psnr_uniform_tenth_is_twenty_db() {
    let a = vec![0.3; 300];
    let b = vec![0.4; 300];
    let d: f64 = 0.4 - 0.3;
    let want = 10.0 * (1.0 / (d * d)).log10();
    assert!((psnr_values(&a, &b, 1.0).unwrap() - 20.0).abs() <= 1e-9);
    assert!((psnr_values(&a, &b, 1.0).unwrap() - want).abs() <= 1e-12);
    let z = vec![0.0; 300];
    let t = vec![0.1; 300];
    assert!((psnr_values(&z, &t, 1.0).unwrap() - 20.0).abs() <= 1e-9);

    // frames store f32, so the difference is 0.1 only to single precision
    let fa = frame(4, 4, |_| 0.0);
    let fb = frame(4, 4, |_| 0.1);
    let d = 0.1f32 as f64;
    assert!((psnr(&fa, &fb, 1.0).unwrap() - 10.0 * (1.0 / (d * d)).log10()).abs() <= 1e-9);
}

#[test]
fn psnr_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let a = frame(12, 9, |_| rng.gen_range(-0.2..1.2));
        let b = random_frame(&mut rng, 12, 9);
        let mut sse = 0.0;
        for i in 0..a.data().len() {
            let x = (a.data()[i] as f64).max(0.0).min(1.0);
            let y = (b.data()[i] as f64).max(0.0).min(1.0);
            sse += (x - y).powi(2);
        }
        let want = 10.0 * (1.0 / (sse / a.data().len() as f64)).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - want).abs() <= 1e-9);
        let peak = 2.0;
        let want2 = 10.0 * (peak * peak / (sse / a.data().len() as f64)).log10();
        assert!((psnr(&a, &b, peak).unwrap() - want2).abs() <= 1e-9);
    }
}

#[test]
fn metrics_reject_mismatched_frames() {
    let (a, b) = (Frame::zeros(16, 16), Frame::zeros(16, 20));
    assert!(psnr(&a, &b, 1.0).is_err());
    assert!(ssim(&a, &b).is_err());
    assert!(ssim(&Frame::zeros(10, 40), &Frame::zeros(10, 40)).is_err());
}

#[test]
fn ssim_identical_is_exactly_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (h, w) in [(11, 11), (16, 24), (33, 17)] {
        let a = random_frame(&mut rng, h, w);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }
}

#[test]
fn ssim_constant_pair_closed_form() {
    let (h, w) = (16, 16);
    let a = vec![0.2; 3 * h * w];
    let b = vec![0.6; 3 * h * w];
    let c1 = 1e-4;
    let want = (2.0 * 0.2 * 0.6 + c1) / (0.2f64 * 0.2 + 0.6 * 0.6 + c1);
    let got = ssim_values(&a, &b, 3, h, w).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!((got - 0.6001).abs() < 1e-4);
}

#[test]
fn ssim_matches_sliding_window_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (h, w) in [(11, 11), (14, 19), (24, 16)] {
        let a = random_frame(&mut rng, h, w);
        // correlated second frame so the structure term is not trivial
        let b = frame(h, w, |i| (a.data()[i] * 0.7 + rng.gen::<f32>() * 0.3).min(1.0));
        let got = ssim(&a, &b).unwrap();
        let want = ssim_oracle(&values(&a), &values(&b), 3, h, w);
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
}

fn frame_pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    (
        proptest::collection::vec(0.0f32..=1.0, 3 * 12 * 13),
        proptest::collection::vec(0.0f32..=1.0, 3 * 12 * 13),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn metrics_are_symmetric((x, y) in frame_pair()) {
        let a = frame(12, 13, |i| x[i]);
        let b = frame(12, 13, |i| y[i]);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn ssim_is_bounded_and_one_on_the_diagonal((x, y) in frame_pair(), mix in 0.0f32..1.0) {
        let a = frame(12, 13, |i| x[i]);
        let b = frame(12, 13, |i| mix * x[i] + (1.0 - mix) * y[i]);
        let s = ssim(&a, &b).unwrap();
        prop_assert!(s.abs() <= 1.0, "{}", s);
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(ssim(&b, &b).unwrap(), 1.0);
    }

    #[test]
    fn larger_error_pattern_lowers_psnr(base in proptest::collection::vec(0.25f32..0.75, 48),
                                        err in proptest::collection::vec(-0.1f32..0.1, 48),
                                        alpha in 1.01f32..2.5) {
        prop_assume!(err.iter().any(|e| e.abs() > 1e-3));
        let a = frame(4, 4, |i| base[i]);
        let b1 = frame(4, 4, |i| base[i] + err[i]);
        let b2 = frame(4, 4, |i| base[i] + alpha * err[i]);
        prop_assert!(psnr(&a, &b2, 1.0).unwrap() < psnr(&a, &b1, 1.0).unwrap());
    }
}

fn toy_pair(seed: u64, frames: usize, h: usize, w: usize) -> PairedSequence {
    let clip = generate_toy_scene(seed, frames * 3, h, w, 1.5).unwrap();
    synthesize_blur(&clip, &BlurSpec { window: 3, stride: 3, gamma: 2.2 }, &format!("scene{seed}")).unwrap()
}

fn identity_model() -> (Model, mbp_core::ParameterStore<f32>) {
    let model = Model::new(ModelConfig::tiny(2, 2, Variant::RnnMbp)).unwrap();
    let params = model.init_params(0);
    (model, params)
}

#[test]
fn identity_model_scores_the_blurry_input() {
    let (model, params) = identity_model();
    let data = vec![toy_pair(1, 3, 16, 16), toy_pair(2, 2, 16, 24)];
    let report = evaluate(&model, &params, &data, &EvalOptions::new("identity")).unwrap();
    for (s, pair) in report.per_scene.iter().zip(&data) {
        let n = pair.len() as f64;
        let p: f64 = pair.blurry().iter().zip(pair.sharp().iter()).map(|(b, g)| psnr(b, g, 1.0).unwrap()).sum();
        let q: f64 = pair.blurry().iter().zip(pair.sharp().iter()).map(|(b, g)| ssim(b, g).unwrap()).sum();
        assert_eq!(s.psnr_mean, p / n);
        assert_eq!(s.ssim_mean, q / n);
        assert_eq!(s.frame_count, pair.len());
        assert_eq!(s.scene_id, pair.scene_id());
    }
    assert_eq!(report.params, model.count_parameters());
    assert!(report.seconds_per_frame > 0.0 && report.seconds_per_frame.is_finite());
    assert!(report.fingerprint.tiled.is_none());
    assert_eq!(report.fingerprint.psnr_rule, PSNR_RULE);
    assert_eq!(report.fingerprint.ssim_rule, SSIM_RULE);
}

#[test]
fn aggregate_is_the_frame_weighted_mean() {
    let (model, params) = identity_model();
    let data = vec![toy_pair(3, 4, 16, 16), toy_pair(4, 1, 16, 16), toy_pair(5, 2, 12, 16)];
    let r = evaluate(&model, &params, &data, &EvalOptions::new("x")).unwrap();
    let mut p = 0.0;
    let mut s = 0.0;
    let mut n = 0usize;
    for scene in &r.per_scene {
        p += scene.psnr_mean * scene.frame_count as f64;
        s += scene.ssim_mean * scene.frame_count as f64;
        n += scene.frame_count;
    }
    assert_eq!(n, 7);
    assert!((r.aggregate.psnr - p / n as f64).abs() < 1e-12);
    assert!((r.aggregate.ssim - s / n as f64).abs() < 1e-12);
}

#[test]
fn empty_split_is_an_error() {
    let (model, params) = identity_model();
    assert!(evaluate(&model, &params, &[], &EvalOptions::new("x")).is_err());
}

#[test]
fn wrong_parameters_are_rejected() {
    let (model, _) = identity_model();
    let other = Model::new(ModelConfig::tiny(4, 2, Variant::RnnMbp)).unwrap().init_params(0);
    assert!(evaluate(&model, &other, &[toy_pair(1, 2, 16, 16)], &EvalOptions::new("x")).is_err());
}

#[test]
fn tiled_fallback_is_flagged_and_seamless_for_identity() {
    let (model, params) = identity_model();
    let data = vec![toy_pair(6, 2, 72, 100)];
    let mut opts = EvalOptions::new("tiled");
    opts.infer = InferOptions { max_pixels: 48 * 48, tile: 48 };
    let tiled = evaluate(&model, &params, &data, &opts).unwrap();
    let whole = evaluate(&model, &params, &data, &EvalOptions::new("whole")).unwrap();
    let info = tiled.fingerprint.tiled.expect("tiling should be reported");
    assert_eq!((info.tile, info.overlap), (48, 16));
    assert!((tiled.aggregate.psnr - whole.aggregate.psnr).abs() < 1e-3);

    let out = infer_sequence(&model, &params, data[0].blurry(), &opts.infer).unwrap();
    assert!(out.tiled);
    for (o, i) in out.frames.iter().zip(data[0].blurry().iter()) {
        for (a, b) in o.data().iter().zip(i.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn tiling_stays_close_to_whole_frame_inference() {
    let model = Model::new(ModelConfig::tiny(2, 2, Variant::RnnMbp)).unwrap();
    let mut params = model.init_params(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for v in params.get_mut("reconstructor.out.weight").unwrap().data_mut() {
        *v = rng.gen_range(-0.05..0.05);
    }
    let seq = toy_pair(7, 2, 64, 96).blurry().clone();
    let whole = infer_sequence(&model, &params, &seq, &InferOptions::default()).unwrap();
    let tiled = infer_sequence(&model, &params, &seq, &InferOptions { max_pixels: 1, tile: 48 }).unwrap();
    assert!(!whole.tiled && tiled.tiled);
    let mut max = 0.0f32;
    for (a, b) in whole.frames.iter().zip(tiled.frames.iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            max = max.max((x - y).abs());
        }
    }
    assert!(max > 0.0 && max < 0.1, "max tile seam difference {max}");
}

#[test]
fn odd_sizes_are_padded_and_cropped() {
    let (model, params) = identity_model();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let seq = FrameSequence::new((0..3).map(|_| random_frame(&mut rng, 18, 23)).collect()).unwrap();
    let out = infer_sequence(&model, &params, &seq, &InferOptions::default()).unwrap();
    assert_eq!((out.frames.len(), out.frames.height(), out.frames.width()), (3, 18, 23));
    assert_eq!(out.frames, seq);
}

#[test]
fn dumped_frames_match_the_outputs() {
    let (model, params) = identity_model();
    let data = vec![toy_pair(9, 2, 16, 16)];
    let dir = tempfile::tempdir().unwrap();
    let mut opts = EvalOptions::new("dump");
    opts.dump_dir = Some(dir.path().to_path_buf());
    evaluate(&model, &params, &data, &opts).unwrap();
    let scene = dir.path().join("scene9");
    let back = mbp_core::data::read_frame(&scene.join("00000001.png")).unwrap();
    let want = mbp_core::data::quantize(&data[0].blurry().frames()[1]);
    assert_eq!(back, want);
    assert!(!scene.join("00000002.png").exists());
}

fn sample_report(label: &str, scenes: &[(&str, f64, f64, usize)]) -> MetricsReport {
    let per_scene: Vec<SceneMetrics> = scenes
        .iter()
        .map(|&(id, p, s, n)| SceneMetrics { scene_id: id.into(), psnr_mean: p, ssim_mean: s, frame_count: n })
        .collect();
    MetricsReport {
        aggregate: MetricsReport::aggregate_of(&per_scene),
        per_scene,
        params: 6156,
        seconds_per_frame: 0.0123456789,
        fingerprint: Fingerprint {
            label: label.into(),
            model: ModelConfig::tiny(2, 2, Variant::RnnMbp),
            checkpoint: Some("runs/a/checkpoints/step_00000010.mbp".into()),
            psnr_rule: PSNR_RULE.into(),
            ssim_rule: SSIM_RULE.into(),
            tiled: None,
        },
    }
}

#[test]
fn single_scene_csv_has_one_row_plus_aggregate() {
    let r = sample_report("a", &[("s0", 28.5, 0.91, 8)]);
    let csv = format_report(&r, ReportStyle::Csv).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3, "{csv}");
    assert_eq!(rows[0], "scene_id,frames,psnr,ssim");
    assert!(rows[1].starts_with("s0,8,"));
    assert!(rows[2].starts_with("(aggregate),8,"));
    let text = format_report(&r, ReportStyle::Text).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.contains("28.500"));
}

proptest! {
    #[test]
    fn reports_round_trip(scenes in proptest::collection::vec(("[a-z0-9_ ,\"]{1,12}", 0.0f64..100.0, -1.0f64..1.0, 1usize..500), 1..6),
                          spf in 0.0f64..10.0, tiled in any::<bool>()) {
        let refs: Vec<(&str, f64, f64, usize)> = scenes.iter().map(|(a, b, c, d)| (a.as_str(), *b, *c, *d)).collect();
        let mut r = sample_report("label, with comma", &refs);
        r.seconds_per_frame = spf;
        if tiled {
            r.fingerprint.tiled = Some(mbp_core::metrics::TileInfo { tile: 256, overlap: 16 });
        }
        for style in [ReportStyle::Csv, ReportStyle::Json] {
            let text = format_report(&r, style).unwrap();
            prop_assert_eq!(&parse_report(&text, style).unwrap(), &r);
        }
    }
}

#[test]
fn comparison_is_sorted_by_psnr() {
    let reports: Vec<MetricsReport> = [("b", 30.1), ("c", 29.0), ("a", 31.7), ("d", 30.1000001)]
        .iter()
        .map(|&(l, p)| sample_report(l, &[("s", p, 0.9, 4)]))
        .collect();
    let ranked: Vec<&str> = rank_by_psnr(&reports).iter().map(|r| r.fingerprint.label.as_str()).collect();
    assert_eq!(ranked, ["a", "d", "b", "c"]);
    let text = format_comparison(&reports, ReportStyle::Text).unwrap();
    let order: Vec<&str> = text.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(order, ["a", "d", "b", "c"]);
    let csv = format_comparison(&reports, ReportStyle::Csv).unwrap();
    let psnrs: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(psnrs.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(psnrs.len(), 4);
}

#[test]
fn report_parse_errors_are_descriptive() {
    assert!(parse_report("scene_id,frames,psnr,ssim\n", ReportStyle::Csv).is_err());
    let r = sample_report("a", &[("s0", 28.5, 0.91, 8)]);
    let csv = format_report(&r, ReportStyle::Csv).unwrap();
    let no_agg: String = csv.lines().filter(|l| !l.starts_with("(aggregate)")).map(|l| format!("{l}\n")).collect();
    let err = parse_report(&no_agg, ReportStyle::Csv).unwrap_err().to_string();
    assert!(err.contains("aggregate"), "{err}");
    assert!(parse_report(&csv, ReportStyle::Text).is_err());
    let _ = Aggregate { psnr: 0.0, ssim: 0.0 };
}
