use std::path::{Path, PathBuf};

use clap::Args;
use mbp_core::data::{
    load_dataset, read_frame_dir, synthesize_blur, write_frame, write_pair, BlurSpec, DatasetSpec, SceneMeta,
    SharpClip, Split,
};
use mbp_core::infer::infer_sequence;
use mbp_core::metrics::{evaluate, format_comparison, format_report, parse_report, EvalOptions, MetricsReport, ReportStyle};
use mbp_core::train::{latest_checkpoint, train_loop, LoopOptions, CHECKPOINT_DIR, LOG_FILE};
use mbp_core::{FrameSequence, Model, ModelConfig, ParameterStore, Variant};

use crate::config::{ConfigBuilder, RunConfig};
use crate::{CliError, Common, ModelArgs};

type CliResult<T = ()> = Result<T, CliError>;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn deterministic_env() -> CliResult<bool> {
    match std::env::var("MBP_DETERMINISTIC") {
        Err(_) => Ok(false),
        Ok(v) => match v.trim() {
            "1" | "true" => Ok(true),
            "" | "0" | "false" => Ok(false),
            other => Err(CliError::Usage(format!("MBP_DETERMINISTIC must be 0 or 1, got {other:?}"))),
        },
    }
}

/// Config file, then `--set`, then subcommand flags, then `MBP_DETERMINISTIC`.
fn resolve(common: &Common, flags: impl FnOnce(&mut ConfigBuilder)) -> CliResult<Option<RunConfig>> {
    let mut b = ConfigBuilder::new().file(common.config.as_deref())?;
    for s in &common.set {
        b.set_str(s);
    }
    flags(&mut b);
    if deterministic_env()? {
        b.set("run", "deterministic", true);
    }
    let cfg = b.build()?;
    if common.dump_config {
        print!("{}", cfg.to_toml());
        return Ok(None);
    }
    Ok(Some(cfg))
}

fn apply_model(b: &mut ConfigBuilder, m: &ModelArgs) {
    b.set_opt("model", "variant", m.variant.clone());
    b.set_opt("model", "base_channels", m.channels.map(|v| v as i64));
    b.set_opt("model", "cab_reduction", m.reduction.map(|v| v as i64));
}

fn is_nonempty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn remove_if_present(p: &Path) -> CliResult {
    if p.is_dir() {
        std::fs::remove_dir_all(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    } else if p.exists() {
        std::fs::remove_file(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn require_dir(p: &Path, what: &str) -> CliResult {
    if !p.is_dir() {
        return Err(CliError::Usage(format!("{what} {} does not exist or is not a directory", p.display())));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset root to create.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory, replacing the splits being generated.
    #[arg(long)]
    force: bool,
    /// Directory of sharp high-frame-rate clips, one sub-directory of PNG frames per scene.
    /// Without it, procedural toy scenes are rendered.
    #[arg(long, value_name = "DIR")]
    source: Option<PathBuf>,
    /// Split that --source scenes are written to.
    #[arg(long, default_value = "train")]
    split: String,
    /// Frame rate of the --source clips.
    #[arg(long, default_value_t = 240.0)]
    fps: f64,
    /// Toy scenes: master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Toy scenes: number of training scenes.
    #[arg(long)]
    train_scenes: Option<usize>,
    /// Toy scenes: number of test scenes.
    #[arg(long)]
    test_scenes: Option<usize>,
    /// Toy scenes: blurry frames per scene.
    #[arg(long)]
    frames: Option<usize>,
    /// Toy scenes: frame height (multiple of 4).
    #[arg(long)]
    height: Option<usize>,
    /// Toy scenes: frame width (multiple of 4).
    #[arg(long)]
    width: Option<usize>,
    /// Toy scenes: lowest per-scene speed in pixels per sharp frame.
    #[arg(long)]
    motion_min: Option<f64>,
    /// Toy scenes: highest per-scene speed in pixels per sharp frame.
    #[arg(long)]
    motion_max: Option<f64>,
    /// Sharp frames averaged per blurry frame (odd).
    #[arg(long)]
    window: Option<usize>,
    /// Sharp frames between consecutive blur windows.
    #[arg(long)]
    stride: Option<usize>,
    /// Gamma used to linearise frames before averaging (1 averages raw values).
    #[arg(long)]
    gamma: Option<f64>,
}

pub fn synthesize(a: SynthesizeArgs) -> CliResult {
    let Some(cfg) = resolve(&a.common, |b| {
        b.set_opt("synth", "seed", a.seed.map(|v| v as i64));
        b.set_opt("synth", "train_scenes", a.train_scenes.map(|v| v as i64));
        b.set_opt("synth", "test_scenes", a.test_scenes.map(|v| v as i64));
        b.set_opt("synth", "frames", a.frames.map(|v| v as i64));
        b.set_opt("synth", "height", a.height.map(|v| v as i64));
        b.set_opt("synth", "width", a.width.map(|v| v as i64));
        b.set_opt("synth", "motion_min", a.motion_min);
        b.set_opt("synth", "motion_max", a.motion_max);
        b.set_opt("synth", "window", a.window.map(|v| v as i64));
        b.set_opt("synth", "stride", a.stride.map(|v| v as i64));
        b.set_opt("synth", "gamma", a.gamma);
    })?
    else {
        return Ok(());
    };
    let out = a.out.clone().ok_or_else(|| CliError::Usage("synthesize needs --out DIR".into()))?;
    let split: Split = a.split.parse()?;
    if is_nonempty_dir(&out) && !a.force {
        return Err(CliError::Usage(format!(
            "output directory {} is not empty; pass --force to overwrite",
            out.display()
        )));
    }
    let written: Vec<Split> = match &a.source {
        None => {
            if a.force {
                remove_if_present(&out.join("train"))?;
                remove_if_present(&out.join("test"))?;
            }
            cfg.synth.write(&out)?;
            write_text(
                &out.join("synth.toml"),
                &toml::to_string_pretty(&cfg.synth).expect("synth config serializes"),
            )?;
            [(Split::Train, cfg.synth.train_scenes), (Split::Test, cfg.synth.test_scenes)]
                .into_iter()
                .filter(|(_, n)| *n > 0)
                .map(|(s, _)| s)
                .collect()
        }
        Some(src) => {
            require_dir(src, "source directory")?;
            if a.force {
                remove_if_present(&out.join(split.as_str()))?;
            }
            if !(a.fps > 0.0) {
                return Err(CliError::Usage(format!("--fps must be positive, got {}", a.fps)));
            }
            synthesize_from_source(src, &out, split, a.fps, &cfg.synth.blur())?;
            vec![split]
        }
    };
    // read back what was written through the regular loader
    let mut counts = Vec::new();
    for s in written {
        let spec = DatasetSpec {
            root: out.clone(),
            split: s,
            patch: None,
            seq_len: 1,
        };
        let scenes = load_dataset(&spec)?;
        let frames: usize = scenes.iter().map(|p| p.len()).sum();
        counts.push(format!("{s}: {} scenes, {frames} frame pairs", scenes.len()));
    }
    println!("{}: {}", out.display(), counts.join("; "));
    Ok(())
}

fn synthesize_from_source(src: &Path, out: &Path, split: Split, fps: f64, blur: &BlurSpec) -> CliResult {
    let mut scenes: Vec<PathBuf> = std::fs::read_dir(src)
        .map_err(|e| runtime(format!("{}: {e}", src.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    scenes.sort();
    if scenes.is_empty() {
        return Err(CliError::Usage(format!("source directory {} has no scene sub-directories", src.display())));
    }
    for dir in scenes {
        let id = dir.file_name().unwrap().to_string_lossy().to_string();
        let frames: Vec<_> = read_frame_dir(&dir)?.into_iter().map(|(_, f)| f).collect();
        if frames.is_empty() {
            return Err(runtime(format!("scene {id}: no PNG frames in {}", dir.display())));
        }
        let clip = SharpClip {
            frames: FrameSequence::new(frames).map_err(|e| runtime(format!("scene {id}: {e}")))?,
            fps,
            velocity: None,
        };
        let pair = synthesize_blur(&clip, blur, &id).map_err(|e| runtime(format!("scene {id}: {e}")))?;
        let meta = SceneMeta {
            fps: Some(fps / blur.stride as f64),
            exposure: Some(blur.window as f64 / fps),
            source: Some(dir.display().to_string()),
            extra: Default::default(),
        };
        write_pair(out, split, &pair, &meta)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Dataset root containing train/.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Directory for checkpoints, the training log and the resolved config.
    #[arg(long, value_name = "DIR")]
    run_dir: Option<PathBuf>,
    /// Continue from the newest checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
    /// Discard existing checkpoints and log in the run directory.
    #[arg(long, conflicts_with = "resume")]
    force: bool,
    /// Serialise data sampling with optimisation (also MBP_DETERMINISTIC=1).
    #[arg(long)]
    deterministic: bool,
    /// Number of optimiser updates.
    #[arg(long)]
    total_steps: Option<u64>,
    /// Training windows per update.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Frames per training window.
    #[arg(long)]
    seq_len: Option<usize>,
    /// Square training crop side, or "full".
    #[arg(long)]
    patch: Option<String>,
    /// Peak (initial) learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Final learning rate of the cosine schedule.
    #[arg(long)]
    lr_min: Option<f64>,
    /// Seed for initialisation and batch sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Steps between checkpoints (0 = final only).
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Clip the global gradient norm to this value.
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Disable random flips and rotations of training windows.
    #[arg(long)]
    no_augment: bool,
    /// Progress line on stderr every N steps (0 = silent).
    #[arg(long)]
    progress_every: Option<u64>,
}

pub fn train(a: TrainArgs) -> CliResult {
    let Some(cfg) = resolve(&a.common, |b| {
        apply_model(b, &a.model);
        b.set_opt("data", "root", a.data.as_ref().map(|p| p.display().to_string()));
        b.set_opt("run", "dir", a.run_dir.as_ref().map(|p| p.display().to_string()));
        if a.deterministic {
            b.set("run", "deterministic", true);
        }
        b.set_opt("run", "progress_every", a.progress_every.map(|v| v as i64));
        b.set_opt("train", "total_steps", a.total_steps.map(|v| v as i64));
        b.set_opt("train", "batch_size", a.batch_size.map(|v| v as i64));
        b.set_opt("train", "seq_len", a.seq_len.map(|v| v as i64));
        if let Some(p) = &a.patch {
            b.set_str(&format!("train.patch={p}"));
        }
        b.set_opt("train", "lr_max", a.lr);
        b.set_opt("train", "lr_min", a.lr_min);
        b.set_opt("train", "seed", a.seed.map(|v| v as i64));
        b.set_opt("train", "checkpoint_every", a.checkpoint_every.map(|v| v as i64));
        b.set_opt("train", "grad_clip", a.grad_clip);
        if a.no_augment {
            b.set("train", "augment", false);
        }
    })?
    else {
        return Ok(());
    };
    let root = cfg
        .data
        .root
        .clone()
        .ok_or_else(|| CliError::Usage("no dataset: pass --data DIR or set [data] root".into()))?;
    require_dir(&root, "dataset root")?;
    let run_dir = cfg.run.dir.clone();
    let has_state = run_dir.join(CHECKPOINT_DIR).is_dir() || run_dir.join(LOG_FILE).exists();
    if has_state && !a.resume && !a.force {
        return Err(CliError::Usage(format!(
            "run directory {} already holds a run; pass --resume to continue it or --force to start over",
            run_dir.display()
        )));
    }
    if a.force {
        remove_if_present(&run_dir.join(CHECKPOINT_DIR))?;
        remove_if_present(&run_dir.join(LOG_FILE))?;
    }
    if a.resume && latest_checkpoint(&run_dir)?.is_none() {
        return Err(CliError::Usage(format!("--resume: no checkpoint in {}", run_dir.display())));
    }

    let model = Model::new(cfg.model.clone())?;
    let data = load_dataset(&DatasetSpec {
        root,
        split: Split::Train,
        patch: cfg.train.patch,
        seq_len: cfg.train.seq_len,
    })?;
    std::fs::create_dir_all(&run_dir).map_err(|e| runtime(format!("{}: {e}", run_dir.display())))?;
    write_text(&run_dir.join("config.toml"), &cfg.to_toml())?;
    eprintln!(
        "training {} (C={}, r={}, {} parameters) on {} scenes for {} steps",
        cfg.model.variant,
        cfg.model.base_channels,
        cfg.model.cab_reduction,
        model.count_parameters(),
        data.len(),
        cfg.train.total_steps
    );
    let opts = LoopOptions {
        run_dir: run_dir.clone(),
        resume: a.resume,
        deterministic: cfg.run.deterministic,
        stop_at: None,
        progress_every: cfg.run.progress_every,
    };
    let out = train_loop(&model, &data, &cfg.train, &opts)?;
    let summary = serde_json::json!({
        "steps": out.state.step,
        "final_loss": out.losses.last(),
        "loss_ema": out.state.loss_ema,
        "wall_time": out.state.wall_time,
        "checkpoint": out.checkpoint.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint or parameter file to evaluate.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Run directory; its newest checkpoint is used when --checkpoint is absent.
    #[arg(long, value_name = "DIR")]
    run_dir: Option<PathBuf>,
    /// Dataset root.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Split to score: test or train.
    #[arg(long, default_value = "test")]
    split: String,
    /// Where report.csv, report.json and dumped frames go (default: the run directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Name of this model in comparison tables (default: the variant).
    #[arg(long)]
    label: Option<String>,
    /// Format printed on stdout: text, csv or json.
    #[arg(long, default_value = "text")]
    style: String,
    /// Also write deblurred frames to <out>/output/<scene>/.
    #[arg(long)]
    dump_frames: bool,
    /// Tile edge for the large-frame fallback.
    #[arg(long)]
    tile: Option<usize>,
    /// Frames above this many pixels are processed in tiles.
    #[arg(long)]
    max_pixels: Option<usize>,
    /// Print a PSNR-sorted comparison of existing report.json/report.csv files instead of evaluating.
    #[arg(long, value_name = "REPORT", num_args = 1..)]
    compare: Vec<PathBuf>,
}

fn read_report(path: &Path) -> CliResult<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let style = if path.extension().is_some_and(|e| e == "csv") { ReportStyle::Csv } else { ReportStyle::Json };
    parse_report(&text, style).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn eval(a: EvalArgs) -> CliResult {
    let Some(cfg) = resolve(&a.common, |b| {
        b.set_opt("data", "root", a.data.as_ref().map(|p| p.display().to_string()));
        b.set_opt("run", "dir", a.run_dir.as_ref().map(|p| p.display().to_string()));
        b.set_opt("eval", "tile", a.tile.map(|v| v as i64));
        b.set_opt("eval", "max_pixels", a.max_pixels.map(|v| v as i64));
        if a.dump_frames {
            b.set("eval", "dump_frames", true);
        }
    })?
    else {
        return Ok(());
    };
    let style: ReportStyle = a.style.parse()?;
    if !a.compare.is_empty() {
        let reports = a.compare.iter().map(|p| read_report(p)).collect::<CliResult<Vec<_>>>()?;
        print!("{}", format_comparison(&reports, style)?);
        return Ok(());
    }
    let split: Split = a.split.parse()?;

    let checkpoint = match &a.checkpoint {
        Some(p) => p.clone(),
        None => latest_checkpoint(&cfg.run.dir)?.ok_or_else(|| {
            CliError::Usage(format!(
                "no checkpoint given and none found in {}; pass --checkpoint FILE",
                cfg.run.dir.display()
            ))
        })?,
    };
    if !checkpoint.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let root = cfg
        .data
        .root
        .clone()
        .ok_or_else(|| CliError::Usage("no dataset: pass --data DIR or set [data] root".into()))?;
    require_dir(&root, "dataset root")?;

    let (model_cfg, params) = ParameterStore::load(&checkpoint)?;
    let model = Model::new(model_cfg)?;
    let data = load_dataset(&DatasetSpec {
        root,
        split,
        patch: None,
        seq_len: 1,
    })?;
    let out = a.out.clone().unwrap_or_else(|| default_report_dir(&checkpoint, a.checkpoint.is_none(), &cfg));
    std::fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let opts = EvalOptions {
        label: a.label.clone().unwrap_or_else(|| model.config().variant.to_string()),
        checkpoint: Some(checkpoint.display().to_string()),
        infer: cfg.eval.infer(),
        dump_dir: cfg.eval.dump_frames.then(|| out.join("output")),
    };
    let report = evaluate(&model, &params, &data, &opts)?;
    write_text(&out.join("report.csv"), &format_report(&report, ReportStyle::Csv)?)?;
    write_text(&out.join("report.json"), &format_report(&report, ReportStyle::Json)?)?;
    print!("{}", format_report(&report, style)?);
    Ok(())
}

/// `<run>` for `<run>/checkpoints/step_*.mbp`, otherwise the checkpoint's directory.
fn default_report_dir(checkpoint: &Path, from_run_dir: bool, cfg: &RunConfig) -> PathBuf {
    if from_run_dir {
        return cfg.run.dir.clone();
    }
    let parent = checkpoint.parent().unwrap_or(Path::new("."));
    if parent.file_name().is_some_and(|n| n == CHECKPOINT_DIR) {
        parent.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        parent.to_path_buf()
    }
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint or parameter file.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Directory of blurry PNG frames, processed in file-name order as one sequence.
    #[arg(long, value_name = "DIR")]
    input: Option<PathBuf>,
    /// Directory for the deblurred frames (same file names as the input).
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Tile edge for the large-frame fallback.
    #[arg(long)]
    tile: Option<usize>,
    /// Frames above this many pixels are processed in tiles.
    #[arg(long)]
    max_pixels: Option<usize>,
}

pub fn infer(a: InferArgs) -> CliResult {
    let Some(cfg) = resolve(&a.common, |b| {
        b.set_opt("eval", "tile", a.tile.map(|v| v as i64));
        b.set_opt("eval", "max_pixels", a.max_pixels.map(|v| v as i64));
    })?
    else {
        return Ok(());
    };
    let need = |p: &Option<PathBuf>, flag: &str| p.clone().ok_or_else(|| CliError::Usage(format!("infer needs {flag}")));
    let checkpoint = need(&a.checkpoint, "--checkpoint FILE")?;
    let input = need(&a.input, "--input DIR")?;
    let output = need(&a.output, "--output DIR")?;
    if !checkpoint.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    require_dir(&input, "input directory")?;
    if is_nonempty_dir(&output) && !a.force {
        return Err(CliError::Usage(format!(
            "output directory {} is not empty; pass --force to overwrite",
            output.display()
        )));
    }
    let frames = read_frame_dir(&input)?;
    if frames.is_empty() {
        return Err(CliError::Usage(format!("no PNG frames in {}", input.display())));
    }
    let (names, frames): (Vec<_>, Vec<_>) = frames.into_iter().unzip();
    let seq = FrameSequence::new(frames)?;
    let (model_cfg, params) = ParameterStore::load(&checkpoint)?;
    let model = Model::new(model_cfg)?;
    let out = infer_sequence(&model, &params, &seq, &cfg.eval.infer())?;
    std::fs::create_dir_all(&output).map_err(|e| runtime(format!("{}: {e}", output.display())))?;
    for (name, f) in names.iter().zip(out.frames.iter()) {
        write_frame(f, &output.join(name.file_name().expect("frame files have names")))?;
    }
    println!(
        "{} frames {}x{} -> {}{}",
        names.len(),
        seq.height(),
        seq.width(),
        output.display(),
        if out.tiled { " (tiled)" } else { "" }
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Report every variant at the configured width.
    #[arg(long)]
    all_variants: bool,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

pub fn params(a: ParamsArgs) -> CliResult {
    let Some(cfg) = resolve(&a.common, |b| apply_model(b, &a.model))? else {
        return Ok(());
    };
    let variants = if a.all_variants { Variant::ALL.to_vec() } else { vec![cfg.model.variant] };
    let rows: Vec<(ModelConfig, usize)> = variants
        .into_iter()
        .map(|v| {
            let c = ModelConfig { variant: v, ..cfg.model.clone() };
            mbp_core::count_parameters(&c).map(|n| (c, n))
        })
        .collect::<Result<_, _>>()?;
    if a.json {
        let v: Vec<_> = rows
            .iter()
            .map(|(c, n)| {
                serde_json::json!({
                    "variant": c.variant,
                    "base_channels": c.base_channels,
                    "cab_reduction": c.cab_reduction,
                    "params": n,
                })
            })
            .collect();
        println!("{}", serde_json::Value::Array(v));
    } else {
        for (c, n) in rows {
            println!(
                "{:<12}  C={:<3} r={:<3} {:>10} ({:.2}M)",
                c.variant.as_str(),
                c.base_channels,
                c.cab_reduction,
                n,
                n as f64 / 1e6
            );
        }
    }
    Ok(())
}
