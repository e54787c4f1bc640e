use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mbp_core::data::{load_dataset, read_frame_dir, DatasetSpec, Split};
use mbp_core::metrics::psnr;

fn mbp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbp"))
        .args(args)
        .env_remove("MBP_DETERMINISTIC")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = mbp(args);
    assert!(o.status.success(), "mbp {args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: [&str; 4] = ["--channels", "2", "--reduction", "2"];

fn toy_dataset(dir: &Path, h: usize, w: usize) -> PathBuf {
    let out = dir.join("data");
    let (h, w) = (h.to_string(), w.to_string());
    ok(&[
        "synthesize", "--out", p(&out), "--train-scenes", "2", "--test-scenes", "2", "--frames", "4", "--height", &h,
        "--width", &w, "--seed", "3",
    ]);
    out
}

fn train_tiny(data: &Path, run: &Path, steps: &str) -> Output {
    let mut args = vec![
        "train", "--data", p(data), "--run-dir", p(run), "--total-steps", steps, "--patch", "16", "--seq-len", "2",
        "--batch-size", "1", "--checkpoint-every", "0",
    ];
    args.extend(TINY);
    mbp(&args)
}

#[test]
fn help_lists_subcommands_and_flags() {
    let top = ok(&["--help"]);
    for cmd in ["synthesize", "train", "eval", "infer", "params"] {
        assert!(top.contains(cmd), "missing {cmd} in:\n{top}");
    }
    let train = ok(&["train", "--help"]);
    for flag in ["--config", "--set", "--dump-config", "--resume", "--total-steps", "--variant", "--deterministic"] {
        assert!(train.contains(flag), "missing {flag} in:\n{train}");
    }
    let eval = ok(&["eval", "--help"]);
    for flag in ["--checkpoint", "--compare", "--dump-frames", "--tile"] {
        assert!(eval.contains(flag), "missing {flag} in:\n{eval}");
    }
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(code(&mbp(&["frobnicate"])), 2);
    assert_eq!(code(&mbp(&["train", "--no-such-flag"])), 2);
}

#[test]
fn params_reports_tiny_count() {
    let out = ok(&["params", "--variant", "rnn_mbp", "--channels", "2", "--reduction", "2", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v[0]["params"], 6156);
    assert_eq!(v[0]["variant"], "rnn_mbp");

    let all = ok(&["params", "--all-variants", "--channels", "2", "--reduction", "2"]);
    let counts: Vec<&str> = all.lines().map(|l| l.split_whitespace().nth(3).unwrap()).collect();
    assert_eq!(counts, ["848", "3856", "6156"]);
}

#[test]
fn params_rejects_unknown_variant() {
    let o = mbp(&["params", "--variant", "transformer"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("transformer"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn config_errors_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nbase_channels = \"wide\"\nvariant = \"nope\"\n[train]\nbatch_size = 0\n[extras]\n").unwrap();
    let o = mbp(&["train", "--config", p(&cfg), "--set", "train.lr_max=-1", "--set", "model.depth=3"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for needle in ["base_channels", "variant", "batch_size", "lr_max", "[extras]", "depth"] {
        assert!(err.contains(needle), "missing {needle:?} in:\n{err}");
    }
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = ok(&["train", "--total-steps", "123", "--set", "model.variant=baseline", "--lr", "0.001", "--dump-config"]);
    assert!(first.contains("total_steps = 123"), "{first}");
    let path = dir.path().join("dumped.toml");
    std::fs::write(&path, &first).unwrap();
    let second = ok(&["train", "--config", p(&path), "--dump-config"]);
    assert_eq!(first, second);
    // command-line flags override the file
    let third = ok(&["train", "--config", p(&path), "--total-steps", "5", "--dump-config"]);
    assert!(third.contains("total_steps = 5"));
    assert!(third.contains("variant = \"baseline\""));
}

#[test]
fn deterministic_env_is_honoured() {
    let o = Command::new(env!("CARGO_BIN_EXE_mbp"))
        .args(["train", "--dump-config"])
        .env("MBP_DETERMINISTIC", "1")
        .output()
        .unwrap();
    assert!(stdout(&o).contains("deterministic = true"), "{}", stdout(&o));
    let bad = Command::new(env!("CARGO_BIN_EXE_mbp"))
        .args(["train", "--dump-config"])
        .env("MBP_DETERMINISTIC", "maybe")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
}

#[test]
fn synthesize_is_reproducible_and_loadable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = toy_dataset(a.path(), 32, 32);
    let db = toy_dataset(b.path(), 32, 32);
    for split in [Split::Train, Split::Test] {
        let load = |root: &Path| {
            load_dataset(&DatasetSpec {
                root: root.to_path_buf(),
                split,
                patch: None,
                seq_len: 1,
            })
            .unwrap()
        };
        let (sa, sb) = (load(&da), load(&db));
        assert_eq!(sa.len(), 2);
        for (x, y) in sa.iter().zip(&sb) {
            assert_eq!(x.scene_id(), y.scene_id());
            assert_eq!(x.len(), 4);
            for (fx, fy) in x.blurry().iter().zip(y.blurry().iter()) {
                assert_eq!(fx.data(), fy.data());
            }
        }
    }
}

#[test]
fn synthesize_refuses_non_empty_out_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path(), 32, 32);
    let o = mbp(&["synthesize", "--out", p(&data), "--train-scenes", "1", "--test-scenes", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--force"));
    ok(&[
        "synthesize", "--out", p(&data), "--train-scenes", "1", "--test-scenes", "0", "--frames", "3", "--height", "16",
        "--width", "16", "--force",
    ]);
    assert_eq!(std::fs::read_dir(data.join("train")).unwrap().count(), 1);
    assert!(!data.join("test").exists());
}

#[test]
fn synthesize_from_sharp_clips() {
    let dir = tempfile::tempdir().unwrap();
    let toy = toy_dataset(dir.path(), 16, 16);
    // reuse the toy sharp frames as a high-frame-rate source clip
    let src = dir.path().join("src");
    std::fs::create_dir_all(src.join("clip")).unwrap();
    let mut n = 0;
    for scene in ["train000", "train001"] {
        for (path, _) in read_frame_dir(&toy.join("train").join(scene).join("gt")).unwrap() {
            std::fs::copy(&path, src.join("clip").join(format!("{n:08}.png"))).unwrap();
            n += 1;
        }
    }
    let out = dir.path().join("blurred");
    let o = ok(&["synthesize", "--source", p(&src), "--out", p(&out), "--split", "test", "--window", "3", "--stride", "2"]);
    assert!(o.contains("1 scenes"), "{o}");
    let scenes = load_dataset(&DatasetSpec {
        root: out,
        split: Split::Test,
        patch: None,
        seq_len: 1,
    })
    .unwrap();
    // 8 sharp frames, window 3, stride 2 -> windows starting at 0, 2, 4
    assert_eq!(scenes[0].len(), 3);
}

#[test]
fn zero_steps_writes_identity_checkpoint_and_eval_matches_blurry() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path(), 32, 32);
    let run = dir.path().join("run");
    let o = train_tiny(&data, &run, "0");
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run.join("checkpoints").join("step_00000000.mbp");
    assert!(ckpt.is_file());

    let out = ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--style", "json"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();

    let scenes = load_dataset(&DatasetSpec {
        root: data,
        split: Split::Test,
        patch: None,
        seq_len: 1,
    })
    .unwrap();
    let mut vals = Vec::new();
    for s in &scenes {
        for (b, g) in s.blurry().iter().zip(s.sharp().iter()) {
            vals.push(psnr(b, g, 1.0).unwrap());
        }
    }
    let blurry_psnr = vals.iter().sum::<f64>() / vals.len() as f64;
    let got = report["aggregate"]["psnr"].as_f64().unwrap();
    assert!((got - blurry_psnr).abs() < 1e-9, "eval {got} vs blurry {blurry_psnr}");
    assert!(run.join("report.csv").is_file() && run.join("report.json").is_file());
}

#[test]
fn train_refuses_existing_run_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path(), 32, 32);
    let run = dir.path().join("run");
    assert!(train_tiny(&data, &run, "2").status.success());
    let again = train_tiny(&data, &run, "2");
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--resume"));

    let mut args = vec![
        "train", "--data", p(&data), "--run-dir", p(&run), "--total-steps", "4", "--patch", "16", "--seq-len", "2",
        "--batch-size", "1", "--checkpoint-every", "0", "--resume",
    ];
    args.extend(TINY);
    let o = mbp(&args);
    // a different total_steps changes the schedule, so the checkpoint is refused
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let mut args = vec![
        "train", "--data", p(&data), "--run-dir", p(&run), "--total-steps", "2", "--patch", "16", "--seq-len", "2",
        "--batch-size", "1", "--checkpoint-every", "0", "--force",
    ];
    args.extend(TINY);
    let o = mbp(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["steps"], 2);
}

#[test]
fn train_without_data_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = mbp(&["train", "--run-dir", p(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--data"));
}

#[test]
fn eval_missing_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path(), 16, 16);
    let o = mbp(&["eval", "--checkpoint", p(&dir.path().join("none.mbp")), "--data", p(&data)]);
    assert_eq!(code(&o), 2);
    let o = mbp(&["eval", "--run-dir", p(&dir.path().join("empty")), "--data", p(&data)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_dumps_frames_and_compares_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path(), 32, 32);
    let run = dir.path().join("run");
    assert!(train_tiny(&data, &run, "2").status.success());
    let out = dir.path().join("eval");
    ok(&["eval", "--run-dir", p(&run), "--data", p(&data), "--out", p(&out), "--dump-frames", "--label", "a"]);
    assert_eq!(read_frame_dir(&out.join("output").join("test001")).unwrap().len(), 4);

    let init = run.join("checkpoints").join("step_00000000.mbp");
    let out_b = dir.path().join("eval_b");
    ok(&["eval", "--checkpoint", p(&init), "--data", p(&data), "--out", p(&out_b), "--label", "b"]);
    let table = ok(&[
        "eval", "--compare", p(&out.join("report.json")), p(&out_b.join("report.csv")), "--style", "csv",
    ]);
    let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels.len(), 2);
    assert!(labels.contains(&"a") && labels.contains(&"b"));
}

#[test]
fn infer_keeps_names_pads_odd_sizes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path(), 32, 32);
    let run = dir.path().join("run");
    assert!(train_tiny(&data, &run, "2").status.success());
    let ckpt = run.join("checkpoints").join("step_00000002.mbp");

    // odd-sized input made by cropping the toy frames
    let input = dir.path().join("in");
    std::fs::create_dir_all(&input).unwrap();
    for (i, (path, _)) in read_frame_dir(&data.join("test").join("test000").join("blur")).unwrap().iter().enumerate() {
        let f = mbp_core::data::read_frame(path).unwrap().crop(0, 0, 30, 27);
        mbp_core::data::write_frame(&f, &input.join(format!("frame_{i}.png"))).unwrap();
    }
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    for o in [&o1, &o2] {
        ok(&["infer", "--checkpoint", p(&ckpt), "--input", p(&input), "--output", p(o)]);
    }
    let a = read_frame_dir(&o1).unwrap();
    let b = read_frame_dir(&o2).unwrap();
    assert_eq!(a.len(), 4);
    for ((pa, fa), (_, fb)) in a.iter().zip(&b) {
        assert!(pa.file_name().unwrap().to_str().unwrap().starts_with("frame_"));
        assert_eq!((fa.height(), fa.width()), (30, 27));
        assert_eq!(fa.data(), fb.data());
    }
    let again = mbp(&["infer", "--checkpoint", p(&ckpt), "--input", p(&input), "--output", p(&o1)]);
    assert_eq!(code(&again), 2);
    ok(&["infer", "--checkpoint", p(&ckpt), "--input", p(&input), "--output", p(&o1), "--force", "--max-pixels", "64", "--tile", "36"]);
}
