use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blur::{synthesize_blur, BlurSpec};
use super::dataset::{quantize, write_pair, PairedSequence, SceneMeta, Split};
use super::toy::ToyScene;
use crate::error::{Error, Result};
use crate::frame::FrameSequence;

/// A complete procedural train/test benchmark of blurred toy scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyBenchmark {
    pub seed: u64,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Blurry frames per scene.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Per-scene speed is drawn uniformly from `[motion_min, motion_max]` px per sharp frame.
    pub motion_min: f64,
    pub motion_max: f64,
    pub window: usize,
    pub stride: usize,
    pub gamma: f64,
}

impl Default for ToyBenchmark {
    fn default() -> Self {
        Self {
            seed: 0,
            train_scenes: 16,
            test_scenes: 4,
            frames: 8,
            height: 64,
            width: 64,
            motion_min: 0.5,
            motion_max: 2.0,
            window: 7,
            stride: 7,
            gamma: 2.2,
        }
    }
}

impl ToyBenchmark {
    pub fn blur(&self) -> BlurSpec {
        BlurSpec {
            window: self.window,
            stride: self.stride,
            gamma: self.gamma,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.train_scenes + self.test_scenes == 0 {
            p.push("train_scenes + test_scenes must be at least 1".to_string());
        }
        if self.frames == 0 {
            p.push("frames must be at least 1".into());
        }
        if self.height < 4 || self.width < 4 || !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) {
            p.push(format!("height and width must be multiples of 4, got {}x{}", self.height, self.width));
        }
        if !(0.0 <= self.motion_min && self.motion_min <= self.motion_max && self.motion_max.is_finite()) {
            p.push(format!(
                "need 0 <= motion_min <= motion_max, got {} and {}",
                self.motion_min, self.motion_max
            ));
        }
        if let Err(e) = self.blur().validate() {
            p.push(e.to_string());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    /// Sharp frames needed for `frames` blurry ones.
    pub fn sharp_frames(&self) -> usize {
        (self.frames - 1) * self.stride + self.window
    }

    fn scene_seed(&self, split: Split, index: usize) -> u64 {
        let lane = match split {
            Split::Train => 0u64,
            Split::Test => 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(lane << 32 | index as u64);
        rng.gen()
    }

    pub fn scene_id(split: Split, index: usize) -> String {
        format!("{}{index:03}", split.as_str())
    }

    /// One scene, quantized to 8 bits exactly as it is stored on disk.
    pub fn scene(&self, split: Split, index: usize) -> Result<(PairedSequence, SceneMeta)> {
        self.validate()?;
        let seed = self.scene_seed(split, index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let motion = rng.gen_range(self.motion_min..=self.motion_max);
        let toy = ToyScene::new(self.sharp_frames(), self.height, self.width, motion);
        let clip = toy.render(seed)?;
        let pair = synthesize_blur(&clip, &self.blur(), &Self::scene_id(split, index))?;
        let (id, blurry, sharp) = pair.into_parts();
        let q = |s: FrameSequence| FrameSequence::new(s.into_frames().iter().map(quantize).collect());
        let pair = PairedSequence::new(id, q(blurry)?, q(sharp)?)?;
        let meta = SceneMeta {
            fps: Some(toy.fps / self.stride as f64),
            exposure: Some(self.window as f64 / toy.fps),
            source: Some(format!("toy seed={seed} motion={motion}")),
            extra: Default::default(),
        };
        Ok((pair, meta))
    }

    pub fn split(&self, split: Split) -> Result<Vec<PairedSequence>> {
        let n = match split {
            Split::Train => self.train_scenes,
            Split::Test => self.test_scenes,
        };
        (0..n).map(|i| Ok(self.scene(split, i)?.0)).collect()
    }

    /// Writes both splits in the standard layout under `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        for (split, n) in [(Split::Train, self.train_scenes), (Split::Test, self.test_scenes)] {
            for i in 0..n {
                let (pair, meta) = self.scene(split, i)?;
                write_pair(root, split, &pair, &meta)?;
            }
        }
        Ok(())
    }
}
