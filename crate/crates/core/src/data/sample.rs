use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::PairedSequence;
use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};

/// Geometric augmentation applied identically to both halves of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    pub flip: bool,
    /// Multiples of 90 degrees; only used for square crops.
    pub rotate: bool,
}

impl Augment {
    pub const NONE: Augment = Augment {
        flip: false,
        rotate: false,
    };
    pub const ALL: Augment = Augment { flip: true, rotate: true };
}

/// Where a training window was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCoords {
    pub start: usize,
    pub len: usize,
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
    pub flip: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: u8,
}

impl std::fmt::Display for WindowCoords {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "frames {}..{} crop {}x{}@({},{}) flip={} rot={}",
            self.start,
            self.start + self.len,
            self.height,
            self.width,
            self.y0,
            self.x0,
            self.flip,
            u32::from(self.quarter_turns) * 90
        )
    }
}

/// Draws a window position: start frame, crop origin and augmentation.
pub fn sample_coords<R: Rng + ?Sized>(
    pair: &PairedSequence,
    seq_len: usize,
    patch: Option<usize>,
    augment: Augment,
    rng: &mut R,
) -> Result<WindowCoords> {
    let (h, w) = (pair.height(), pair.width());
    if seq_len == 0 || seq_len > pair.len() {
        return Err(Error::Contract(format!(
            "scene {}: cannot take {seq_len} frames from a {}-frame sequence",
            pair.scene_id(),
            pair.len()
        )));
    }
    let (ph, pw) = match patch {
        Some(p) if p > h.min(w) => {
            return Err(Error::Contract(format!(
                "scene {}: patch {p} exceeds frame size {h}x{w}",
                pair.scene_id()
            )))
        }
        Some(0) => return Err(Error::Contract("patch must be at least 1".into())),
        Some(p) => (p, p),
        None => (h, w),
    };
    let start = rng.gen_range(0..=pair.len() - seq_len);
    let y0 = rng.gen_range(0..=h - ph);
    let x0 = rng.gen_range(0..=w - pw);
    let flip = augment.flip && rng.gen::<bool>();
    let quarter_turns = if augment.rotate {
        if ph == pw {
            rng.gen_range(0..4u8)
        } else {
            2 * rng.gen_range(0..2u8)
        }
    } else {
        0
    };
    Ok(WindowCoords {
        start,
        len: seq_len,
        y0,
        x0,
        height: ph,
        width: pw,
        flip,
        quarter_turns,
    })
}

/// Applies `coords` to both sequences of `pair`.
pub fn cut_window(pair: &PairedSequence, coords: &WindowCoords) -> Result<PairedSequence> {
    let cut = |seq: &FrameSequence| -> Result<FrameSequence> {
        let frames = seq.frames()[coords.start..coords.start + coords.len]
            .iter()
            .map(|f| transform(f, coords))
            .collect();
        FrameSequence::new(frames)
    };
    PairedSequence::new(pair.scene_id(), cut(pair.blurry())?, cut(pair.sharp())?)
}

fn transform(f: &Frame, c: &WindowCoords) -> Frame {
    let mut out = if (c.y0, c.x0, c.height, c.width) == (0, 0, f.height(), f.width()) {
        f.clone()
    } else {
        f.crop(c.y0, c.x0, c.height, c.width)
    };
    if c.flip {
        out = out.flip_horizontal();
    }
    for _ in 0..c.quarter_turns {
        out = out.rotate90();
    }
    out
}

/// `seq_len` consecutive frames at one random crop, shared by blurry and sharp.
pub fn sample_training_window<R: Rng + ?Sized>(
    pair: &PairedSequence,
    seq_len: usize,
    patch: Option<usize>,
    augment: Augment,
    rng: &mut R,
) -> Result<PairedSequence> {
    let coords = sample_coords(pair, seq_len, patch, augment, rng)?;
    cut_window(pair, &coords)
}
