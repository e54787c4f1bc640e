use mbp_tensor::Tensor;

use crate::error::{Error, Result};

/// One RGB frame stored as a `[3, H, W]` tensor.
///
/// Loaded and synthesized frames lie in `[0, 1]`; model outputs may leave
/// that range and are only clamped on export or when scored.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame(Tensor<f32>);

impl Frame {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        let shape = data.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Input(format!("a frame must be [3, H, W], got {shape:?}")));
        }
        if shape[1] == 0 || shape[2] == 0 {
            return Err(Error::Input("empty frame".into()));
        }
        if !data.all_finite() {
            return Err(Error::Input("frame contains non-finite values".into()));
        }
        Ok(Self(data))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Tensor::zeros(&[3, height, width]))
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut(usize) -> f32) -> Self {
        Self(Tensor::from_fn(&[3, height, width], f))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.0.data_mut()
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.0.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn clamped(&self) -> Frame {
        Frame(self.0.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Crop `[y0, y0 + h) x [x0, x0 + w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Frame {
        let (fh, fw) = (self.height(), self.width());
        assert!(y0 + h <= fh && x0 + w <= fw, "crop outside frame");
        let src = self.0.data();
        Frame(Tensor::from_fn(&[3, h, w], |i| {
            let c = i / (h * w);
            let y = (i / w) % h;
            let x = i % w;
            src[(c * fh + y0 + y) * fw + x0 + x]
        }))
    }

    pub fn flip_horizontal(&self) -> Frame {
        let (h, w) = (self.height(), self.width());
        let src = self.0.data();
        Frame(Tensor::from_fn(&[3, h, w], |i| {
            let row = i / w;
            src[row * w + (w - 1 - i % w)]
        }))
    }

    /// Rotate by 90 degrees counter-clockwise.
    pub fn rotate90(&self) -> Frame {
        let (h, w) = (self.height(), self.width());
        let src = self.0.data();
        // output is w x h; out[y][x] = in[x][w - 1 - y]
        Frame(Tensor::from_fn(&[3, w, h], |i| {
            let c = i / (w * h);
            let y = (i / h) % w;
            let x = i % h;
            src[(c * h + x) * w + (w - 1 - y)]
        }))
    }

    /// Reflect-pad bottom and right edges to `h x w` (no edge repeat).
    pub fn pad_reflect(&self, h: usize, w: usize) -> Result<Frame> {
        let (fh, fw) = (self.height(), self.width());
        if h < fh || w < fw {
            return Err(Error::Contract("pad target smaller than frame".into()));
        }
        if (h > fh && h - fh >= fh) || (w > fw && w - fw >= fw) {
            return Err(Error::Input(format!(
                "cannot reflect-pad a {fh}x{fw} frame to {h}x{w}"
            )));
        }
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * n - 2 - i };
        let src = self.0.data();
        Ok(Frame(Tensor::from_fn(&[3, h, w], |i| {
            let c = i / (h * w);
            let y = reflect((i / w) % h, fh);
            let x = reflect(i % w, fw);
            src[(c * fh + y) * fw + x]
        })))
    }
}

/// Non-empty run of equally sized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Input("a frame sequence needs at least one frame".into()))?;
        let (h, w) = (first.height(), first.width());
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.height() != h || f.width() != w)
        {
            return Err(Error::Input(format!(
                "frame {i} is {}x{}, expected {h}x{w}",
                f.height(),
                f.width()
            )));
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    pub fn map(&self, f: impl FnMut(&Frame) -> Frame) -> FrameSequence {
        FrameSequence {
            frames: self.frames.iter().map(f).collect(),
        }
    }
}

impl std::ops::Index<usize> for FrameSequence {
    type Output = Frame;

    fn index(&self, i: usize) -> &Frame {
        &self.frames[i]
    }
}
