use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::quality::{psnr, ssim};
use crate::data::{write_frame, PairedSequence};
use crate::error::{Error, Result};
use crate::infer::{infer_sequence, InferOptions, TILE_OVERLAP};
use crate::model::{Model, ModelConfig, ParameterStore};

pub const PSNR_RULE: &str = "per-frame mean, inputs clamped to [0,1], peak 1, capped at 100 dB";
pub const SSIM_RULE: &str = "RGB mean, gaussian 11x11 sigma 1.5, K1 0.01, K2 0.03, valid windows only";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_id: String,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub frame_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr: f64,
    pub ssim: f64,
}

/// What produced a report, so numbers from different runs are comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub label: String,
    pub model: ModelConfig,
    pub checkpoint: Option<String>,
    pub psnr_rule: String,
    pub ssim_rule: String,
    /// Set when at least one sequence went through the tiling fallback.
    pub tiled: Option<TileInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileInfo {
    pub tile: usize,
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_scene: Vec<SceneMetrics>,
    pub aggregate: Aggregate,
    pub params: usize,
    pub seconds_per_frame: f64,
    pub fingerprint: Fingerprint,
}

impl MetricsReport {
    /// Frame-count weighted means of the per-scene values.
    pub fn aggregate_of(per_scene: &[SceneMetrics]) -> Aggregate {
        let frames: usize = per_scene.iter().map(|s| s.frame_count).sum();
        let wsum = |f: fn(&SceneMetrics) -> f64| {
            per_scene.iter().map(|s| f(s) * s.frame_count as f64).sum::<f64>() / frames as f64
        };
        Aggregate {
            psnr: wsum(|s| s.psnr_mean),
            ssim: wsum(|s| s.ssim_mean),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.per_scene.iter().map(|s| s.frame_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub label: String,
    pub checkpoint: Option<String>,
    pub infer: InferOptions,
    /// Write deblurred frames to `<dir>/<scene>/%08d.png`.
    pub dump_dir: Option<PathBuf>,
}

impl EvalOptions {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            checkpoint: None,
            infer: InferOptions::default(),
            dump_dir: None,
        }
    }
}

/// Deblurs every test sequence and scores every output frame against its
/// sharp counterpart. Timing skips the first sequence as warm-up unless it is
/// the only one.
pub fn evaluate(model: &Model, params: &ParameterStore<f32>, dataset: &[PairedSequence], opts: &EvalOptions) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Dataset("test split has no scenes to evaluate".into()));
    }
    params.check_layout(model.layout())?;
    let mut per_scene = Vec::with_capacity(dataset.len());
    let mut tiled = false;
    let (mut timed_secs, mut timed_frames) = (0.0f64, 0usize);
    for (i, pair) in dataset.iter().enumerate() {
        let clock = Instant::now();
        let out = infer_sequence(model, params, pair.blurry(), &opts.infer)?;
        let secs = clock.elapsed().as_secs_f64();
        if i > 0 || dataset.len() == 1 {
            timed_secs += secs;
            timed_frames += pair.len();
        }
        tiled |= out.tiled;

        let (mut p_sum, mut s_sum) = (0.0, 0.0);
        for (k, (pred, gt)) in out.frames.iter().zip(pair.sharp().iter()).enumerate() {
            let p = psnr(pred, gt, 1.0)?;
            let s = ssim(pred, gt)?;
            if !p.is_finite() || !s.is_finite() {
                return Err(Error::Input(format!(
                    "scene {} frame {k}: non-finite metric (psnr {p}, ssim {s})",
                    pair.scene_id()
                )));
            }
            p_sum += p;
            s_sum += s;
        }
        if let Some(dir) = &opts.dump_dir {
            let scene_dir = dir.join(pair.scene_id());
            std::fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
            for (k, f) in out.frames.iter().enumerate() {
                write_frame(f, &scene_dir.join(format!("{k:08}.png")))?;
            }
        }
        per_scene.push(SceneMetrics {
            scene_id: pair.scene_id().to_string(),
            psnr_mean: p_sum / pair.len() as f64,
            ssim_mean: s_sum / pair.len() as f64,
            frame_count: pair.len(),
        });
    }
    Ok(MetricsReport {
        aggregate: MetricsReport::aggregate_of(&per_scene),
        per_scene,
        params: model.count_parameters(),
        seconds_per_frame: timed_secs / timed_frames as f64,
        fingerprint: Fingerprint {
            label: opts.label.clone(),
            model: model.config().clone(),
            checkpoint: opts.checkpoint.clone(),
            psnr_rule: PSNR_RULE.into(),
            ssim_rule: SSIM_RULE.into(),
            tiled: tiled.then_some(TileInfo {
                tile: opts.infer.tile,
                overlap: TILE_OVERLAP,
            }),
        },
    })
}
