use super::TrainConfig;
use crate::error::{Error, Result};
use crate::frame::FrameSequence;

/// Mean of `sqrt((pred - gt)^2 + eps^2)` over every element of every frame.
///
/// Accumulates `sqrt(d^2 + eps^2) - eps` in the cancellation-free form
/// `d^2 / (sqrt(d^2 + eps^2) + eps)`, so identical inputs give `eps` exactly.
pub fn charbonnier_loss(pred: &FrameSequence, gt: &FrameSequence, eps: f64) -> Result<f64> {
    if pred.len() != gt.len() || (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Contract(format!(
            "charbonnier_loss: {} frames of {}x{} vs {} frames of {}x{}",
            pred.len(),
            pred.height(),
            pred.width(),
            gt.len(),
            gt.height(),
            gt.width()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("charbonnier eps must be positive, got {eps}")));
    }
    let e2 = eps * eps;
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt.iter()) {
        for (&a, &b) in p.data().iter().zip(g.data()) {
            let d = a as f64 - b as f64;
            sum += d * d / ((d * d + e2).sqrt() + eps);
        }
        n += p.data().len();
    }
    Ok(eps + sum / n as f64)
}

/// Single-cycle cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: u64, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::Contract(format!(
            "step {step} outside schedule of {} steps",
            cfg.total_steps
        )));
    }
    if cfg.total_steps == 0 {
        return Ok(cfg.lr_max);
    }
    let phase = std::f64::consts::PI * step as f64 / cfg.total_steps as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + phase.cos()))
}
