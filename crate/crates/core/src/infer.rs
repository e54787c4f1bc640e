//! Whole-sequence inference with reflect padding and an optional spatial
//! tiling fallback for frames too large to process in one piece.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};
use crate::model::{Model, ParameterStore};

/// Overlap between neighbouring tiles, blended with linear ramps.
pub const TILE_OVERLAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferOptions {
    /// Frames with more pixels than this are processed in tiles.
    pub max_pixels: usize,
    /// Edge length of a tile; a multiple of 4 larger than twice the overlap.
    pub tile: usize,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            max_pixels: 256 * 256,
            tile: 256,
        }
    }
}

impl InferOptions {
    pub fn validate(&self) -> Result<()> {
        if !self.tile.is_multiple_of(4) || self.tile <= 2 * TILE_OVERLAP {
            return Err(Error::Config(format!(
                "tile must be a multiple of 4 larger than {}, got {}",
                2 * TILE_OVERLAP,
                self.tile
            )));
        }
        if self.max_pixels == 0 {
            return Err(Error::Config("max_pixels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub frames: FrameSequence,
    /// Whether the tiling fallback was used.
    pub tiled: bool,
}

/// Runs `model` on `seq` of any frame size: pads bottom/right by reflection
/// to a multiple of 4, tiles when large, and crops back to the input size.
pub fn infer_sequence(model: &Model, params: &ParameterStore<f32>, seq: &FrameSequence, opts: &InferOptions) -> Result<Inference> {
    opts.validate()?;
    let (h, w) = (seq.height(), seq.width());
    let (ph, pw) = (h.max(4).div_ceil(4) * 4, w.max(4).div_ceil(4) * 4);
    let padded = if (ph, pw) == (h, w) {
        seq.clone()
    } else {
        FrameSequence::new(seq.iter().map(|f| f.pad_reflect(ph, pw)).collect::<Result<_>>()?)?
    };
    let tiled = ph * pw > opts.max_pixels && (ph > opts.tile || pw > opts.tile);
    let out = if tiled {
        run_tiled(model, params, &padded, opts.tile)?
    } else {
        model.run(params, &padded)?
    };
    let frames = if (ph, pw) == (h, w) {
        out
    } else {
        out.map(|f| f.crop(0, 0, h, w))
    };
    Ok(Inference { frames, tiled })
}

/// Start offsets of tiles of length `tile` covering `n`.
fn tile_starts(n: usize, tile: usize) -> Vec<usize> {
    if n <= tile {
        return vec![0];
    }
    let step = tile - TILE_OVERLAP;
    let mut s: Vec<usize> = (0..).map(|i| i * step).take_while(|&x| x + tile < n).collect();
    s.push(n - tile);
    s
}

/// Blend weight of position `i` inside a tile of length `len` starting at `start` in `0..n`.
fn ramp(i: usize, start: usize, len: usize, n: usize) -> f64 {
    let ov = TILE_OVERLAP as f64;
    let mut w = 1.0f64;
    if start > 0 {
        w = w.min((i as f64 + 0.5) / ov);
    }
    if start + len < n {
        w = w.min((len as f64 - i as f64 - 0.5) / ov);
    }
    w
}

fn run_tiled(model: &Model, params: &ParameterStore<f32>, seq: &FrameSequence, tile: usize) -> Result<FrameSequence> {
    let (h, w) = (seq.height(), seq.width());
    let n = seq.len();
    let mut acc = vec![vec![0.0f64; 3 * h * w]; n];
    let mut weight = vec![0.0f64; h * w];
    for &y0 in &tile_starts(h, tile) {
        let th = tile.min(h);
        for &x0 in &tile_starts(w, tile) {
            let tw = tile.min(w);
            let crop = FrameSequence::new(seq.iter().map(|f| f.crop(y0, x0, th, tw)).collect())?;
            let out = model.run(params, &crop)?;
            for y in 0..th {
                let wy = ramp(y, y0, th, h);
                for x in 0..tw {
                    let wt = wy * ramp(x, x0, tw, w);
                    let p = (y0 + y) * w + x0 + x;
                    weight[p] += wt;
                    for (a, f) in acc.iter_mut().zip(out.iter()) {
                        for c in 0..3 {
                            a[c * h * w + p] += wt * f.get(c, y, x) as f64;
                        }
                    }
                }
            }
        }
    }
    let frames = acc
        .into_iter()
        .map(|a| Frame::from_fn(h, w, |i| (a[i] / weight[i % (h * w)]) as f32))
        .collect();
    FrameSequence::new(frames)
}
