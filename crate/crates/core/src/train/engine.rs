use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mbp_tensor::{Backend, Grads, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{latest_checkpoint, Checkpoint, CHECKPOINT_DIR};
use super::{cosine_lr, Adam, TrainConfig};
use crate::data::{cut_window, sample_coords, PairedSequence, WindowCoords};
use crate::error::{Error, Result};
use crate::model::{Model, ParameterStore};

/// Newline-delimited JSON log inside the run directory.
pub const LOG_FILE: &str = "train_log.ndjson";

/// Mutable part of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Updates applied so far.
    pub step: u64,
    pub params: ParameterStore<f32>,
    pub adam: Adam,
    /// Exponential moving average of the step loss (factor 0.99).
    pub loss_ema: Option<f64>,
    /// Seconds spent training, summed over resumed segments.
    pub wall_time: f64,
}

impl TrainState {
    pub fn new(params: ParameterStore<f32>) -> Self {
        let adam = Adam::new(&params);
        Self {
            step: 0,
            params,
            adam,
            loss_ema: None,
            wall_time: 0.0,
        }
    }
}

/// One training window and where it came from.
#[derive(Debug, Clone)]
pub struct Sample {
    pub pair: PairedSequence,
    pub coords: Option<WindowCoords>,
}

impl std::fmt::Display for Sample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.coords {
            Some(c) => write!(f, "{} [{c}]", self.pair.scene_id()),
            None => write!(f, "{}", self.pair.scene_id()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Index of the update, counted from 0.
    pub step: u64,
    pub lr: f64,
    /// Loss before the update.
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub wall_time: f64,
}

/// One Adam update on the mean Charbonnier loss over every frame of `batch`.
pub fn train_step(model: &Model, state: &mut TrainState, batch: &[Sample], cfg: &TrainConfig) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    let step = state.step;
    let lr = cosine_lr(step, cfg)?;
    let numel: usize = batch
        .iter()
        .map(|s| s.pair.len() * 3 * s.pair.height() * s.pair.width())
        .sum();
    let inv = 1.0 / numel as f32;
    let eps = cfg.charbonnier_eps as f32;

    let mut grads = Grads {
        grads: vec![None; state.params.len()],
    };
    let mut loss_sum = 0.0f64;
    for sample in batch {
        let tape = Tape::new(state.params.tensors());
        let inputs: Vec<_> = sample
            .pair
            .blurry()
            .iter()
            .map(|f| tape.constant(f.tensor().clone()))
            .collect();
        let outputs = model.forward(&tape, &inputs)?;
        let terms: Vec<_> = outputs
            .iter()
            .zip(sample.pair.sharp().iter())
            .map(|(o, gt)| {
                let target = tape.constant(gt.tensor().clone());
                tape.charbonnier_sum(o, &target, eps)
            })
            .collect();
        let total = tape.sum_all(&terms);
        loss_sum += tape.value(&total).data()[0] as f64;
        let loss = tape.scale(&total, inv);
        grads.accumulate(tape.backward(loss));
    }
    let loss = loss_sum / numel as f64;
    if !loss.is_finite() {
        let names: Vec<String> = batch.iter().map(|s| s.to_string()).collect();
        return Err(Error::NonFiniteLoss {
            step,
            loss,
            batch: names.join("; "),
        });
    }

    let grad_norm = (grads.squared_norm() as f64).sqrt();
    if let Some(max) = cfg.grad_clip {
        if grad_norm > max {
            grads.scale((max / grad_norm) as f32);
        }
    }
    state.adam.update(&mut state.params, &grads, lr);
    state.step += 1;
    state.loss_ema = Some(match state.loss_ema {
        Some(e) => 0.99 * e + 0.01 * loss,
        None => loss,
    });
    Ok(StepReport {
        step,
        lr,
        loss,
        grad_norm,
    })
}

/// Draws the batch for update `step`. Depends only on `(cfg.seed, step)`,
/// so resumed and prefetched runs see identical data.
pub fn sample_batch(dataset: &[PairedSequence], cfg: &TrainConfig, step: u64) -> Result<Vec<Sample>> {
    if dataset.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(step + 1);
    (0..cfg.batch_size)
        .map(|_| {
            let pair = &dataset[rng.gen_range(0..dataset.len())];
            let coords = sample_coords(pair, cfg.seq_len, cfg.patch, cfg.augment(), &mut rng)?;
            Ok(Sample {
                pair: cut_window(pair, &coords)?,
                coords: Some(coords),
            })
        })
        .collect()
}

/// How [`train_loop`] treats its run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopOptions {
    pub run_dir: PathBuf,
    /// Continue from the newest checkpoint in `run_dir` if there is one.
    pub resume: bool,
    /// Sample batches on the training thread instead of a prefetch thread.
    pub deterministic: bool,
    /// Stop (with a checkpoint) once this many updates have been applied.
    pub stop_at: Option<u64>,
    /// Progress lines on stderr every this many steps; 0 silences them.
    pub progress_every: u64,
}

impl LoopOptions {
    pub fn new(run_dir: impl Into<PathBuf>) -> Self {
        Self {
            run_dir: run_dir.into(),
            resume: false,
            deterministic: true,
            stop_at: None,
            progress_every: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub checkpoint: PathBuf,
    /// Losses of the updates run by this call.
    pub losses: Vec<f64>,
}

fn check_dataset(dataset: &[PairedSequence], cfg: &TrainConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    for p in dataset {
        if p.len() < cfg.seq_len {
            return Err(Error::Config(format!(
                "scene {} has {} frames, fewer than seq_len {}",
                p.scene_id(),
                p.len(),
                cfg.seq_len
            )));
        }
        if let Some(patch) = cfg.patch {
            if patch > p.height().min(p.width()) {
                return Err(Error::Config(format!(
                    "patch {patch} exceeds scene {} frame size {}x{}",
                    p.scene_id(),
                    p.height(),
                    p.width()
                )));
            }
        } else {
            crate::model::check_frame_size(p.height(), p.width())?;
        }
    }
    Ok(())
}

fn save_checkpoint(model: &Model, cfg: &TrainConfig, state: &TrainState, run_dir: &Path) -> Result<PathBuf> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(Checkpoint::file_name(state.step));
    Checkpoint {
        model_config: model.config().clone(),
        train_config: cfg.clone(),
        state: state.clone(),
    }
    .save(&path)?;
    Ok(path)
}

/// Sampling, updates, logging and checkpointing until `cfg.total_steps`.
pub fn train_loop(model: &Model, dataset: &[PairedSequence], cfg: &TrainConfig, opts: &LoopOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(dataset, cfg)?;
    std::fs::create_dir_all(&opts.run_dir).map_err(|e| Error::io(&opts.run_dir, e))?;

    let resumed = if opts.resume { latest_checkpoint(&opts.run_dir)? } else { None };
    let mut state = match &resumed {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if &ck.model_config != model.config() {
                return Err(Error::Config(format!(
                    "checkpoint {} was written for a different model configuration",
                    path.display()
                )));
            }
            if ck.train_config != *cfg {
                return Err(Error::Config(format!(
                    "checkpoint {} was written with a different training configuration",
                    path.display()
                )));
            }
            ck.state.params.check_layout(model.layout())?;
            ck.state
        }
        None => TrainState::new(model.init_params(cfg.seed)),
    };

    let log_path = opts.run_dir.join(LOG_FILE);
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(resumed.is_some())
        .write(true)
        .truncate(resumed.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let end = opts.stop_at.map_or(cfg.total_steps, |s| s.min(cfg.total_steps));
    let mut last_checkpoint = None;
    if state.step == 0 && resumed.is_none() {
        last_checkpoint = Some(save_checkpoint(model, cfg, &state, &opts.run_dir)?);
    }
    let start_wall = state.wall_time;
    let clock = Instant::now();
    let mut losses = Vec::new();

    let mut run_step = |state: &mut TrainState, batch: Vec<Sample>| -> Result<()> {
        let report = train_step(model, state, &batch, cfg)?;
        state.wall_time = start_wall + clock.elapsed().as_secs_f64();
        losses.push(report.loss);
        let rec = LogRecord {
            step: report.step,
            lr: report.lr,
            loss: report.loss,
            wall_time: state.wall_time,
        };
        writeln!(log, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&log_path, e))?;
        if opts.progress_every > 0 && (report.step + 1) % opts.progress_every == 0 {
            eprintln!(
                "step {:>8}/{}  loss {:.6}  lr {:.3e}  {:.1}s",
                report.step + 1,
                cfg.total_steps,
                report.loss,
                report.lr,
                state.wall_time
            );
        }
        if cfg.checkpoint_every > 0 && state.step.is_multiple_of(cfg.checkpoint_every) && state.step < end {
            save_checkpoint(model, cfg, state, &opts.run_dir)?;
        }
        Ok(())
    };

    if opts.deterministic {
        while state.step < end {
            let batch = sample_batch(dataset, cfg, state.step)?;
            run_step(&mut state, batch)?;
        }
    } else {
        let first = state.step;
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = std::sync::mpsc::sync_channel::<Result<Vec<Sample>>>(2);
            scope.spawn(move || {
                for s in first..end {
                    if tx.send(sample_batch(dataset, cfg, s)).is_err() {
                        break;
                    }
                }
            });
            while state.step < end {
                let batch = rx
                    .recv()
                    .map_err(|_| Error::Dataset("batch producer stopped".into()))??;
                run_step(&mut state, batch)?;
            }
            Ok(())
        })?;
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let checkpoint = match last_checkpoint {
        Some(p) if state.step == 0 => p,
        _ => save_checkpoint(model, cfg, &state, &opts.run_dir)?,
    };
    Ok(TrainOutcome {
        state,
        checkpoint,
        losses,
    })
}
