use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};

use super::dataset::PairedSequence;

/// Sharp footage at a (simulated) high frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpClip {
    pub frames: FrameSequence,
    pub fps: f64,
    /// Rigid image-plane velocity in pixels per frame, `(dx, dy)`, when known.
    pub velocity: Option<(f64, f64)>,
}

/// Frame-averaging parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSpec {
    /// Frames averaged per blurry frame; odd so a centre frame exists.
    pub window: usize,
    /// Advance between consecutive windows.
    pub stride: usize,
    /// Display gamma; averaging happens on `v^gamma`. 1 averages raw values.
    pub gamma: f64,
}

impl Default for BlurSpec {
    fn default() -> Self {
        Self {
            window: 7,
            stride: 7,
            gamma: 2.2,
        }
    }
}

impl BlurSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "blur window must be odd so it has a centre frame, got {}",
                self.window
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("blur stride must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Number of blurry frames a clip of `len` frames yields.
    pub fn output_len(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.stride + 1
        }
    }
}

/// Averages `window` consecutive sharp frames into each blurry frame, pairing
/// it with the window's centre frame.
pub fn synthesize_blur(clip: &SharpClip, spec: &BlurSpec, scene_id: &str) -> Result<PairedSequence> {
    spec.validate()?;
    let frames = clip.frames.frames();
    if spec.window > frames.len() {
        return Err(Error::Config(format!(
            "blur window {} exceeds clip length {}",
            spec.window,
            frames.len()
        )));
    }
    let mut blurry = Vec::new();
    let mut sharp = Vec::new();
    for i in 0..spec.output_len(frames.len()) {
        let start = i * spec.stride;
        let window = &frames[start..start + spec.window];
        blurry.push(average(window, spec.gamma));
        sharp.push(window[spec.window / 2].clone());
    }
    PairedSequence::new(scene_id, FrameSequence::new(blurry)?, FrameSequence::new(sharp)?)
}

fn average(window: &[Frame], gamma: f64) -> Frame {
    let m = window.len() as f64;
    let mut out = window[0].clone();
    let dst = out.data_mut();
    for (i, v) in dst.iter_mut().enumerate() {
        let first = window[0].data()[i];
        if window.iter().all(|f| f.data()[i] == first) {
            // mean of equal values, kept exact
            continue;
        }
        *v = if gamma == 1.0 {
            (window.iter().map(|f| f.data()[i] as f64).sum::<f64>() / m) as f32
        } else {
            let lin = window.iter().map(|f| (f.data()[i].max(0.0) as f64).powf(gamma)).sum::<f64>() / m;
            lin.powf(1.0 / gamma) as f32
        };
    }
    out
}
