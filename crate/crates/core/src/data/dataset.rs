use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::png::{png_files, read_frame, write_frame};
use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};

/// Index-aligned blurry and sharp frames of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSequence {
    scene_id: String,
    blurry: FrameSequence,
    sharp: FrameSequence,
}

impl PairedSequence {
    pub fn new(scene_id: impl Into<String>, blurry: FrameSequence, sharp: FrameSequence) -> Result<Self> {
        let scene_id = scene_id.into();
        if blurry.len() != sharp.len() {
            return Err(Error::Dataset(format!(
                "scene {scene_id}: {} blurry frames but {} sharp frames",
                blurry.len(),
                sharp.len()
            )));
        }
        if (blurry.height(), blurry.width()) != (sharp.height(), sharp.width()) {
            return Err(Error::Dataset(format!(
                "scene {scene_id}: blurry frames are {}x{}, sharp frames are {}x{}",
                blurry.height(),
                blurry.width(),
                sharp.height(),
                sharp.width()
            )));
        }
        Ok(Self { scene_id, blurry, sharp })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn blurry(&self) -> &FrameSequence {
        &self.blurry
    }

    pub fn sharp(&self) -> &FrameSequence {
        &self.sharp
    }

    pub fn len(&self) -> usize {
        self.blurry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blurry.is_empty()
    }

    pub fn height(&self) -> usize {
        self.blurry.height()
    }

    pub fn width(&self) -> usize {
        self.blurry.width()
    }

    pub fn into_parts(self) -> (String, FrameSequence, FrameSequence) {
        (self.scene_id, self.blurry, self.sharp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (expected train or test)"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a split lives and how training windows are cut from it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub split: Split,
    /// Square crop side; `None` keeps full frames.
    pub patch: Option<usize>,
    pub seq_len: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be at least 1".into()));
        }
        if self.patch == Some(0) {
            return Err(Error::Config("patch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Optional `meta.json` next to a scene's `blur/` and `gt/` directories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// `<scene_dir>/<kind>/%08d.png`.
pub fn frame_path(scene_dir: &Path, kind: &str, index: usize) -> PathBuf {
    scene_dir.join(kind).join(format!("{index:08}.png"))
}

fn frame_indices(scene: &str, dir: &Path) -> Result<BTreeMap<usize, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("scene {scene}: missing directory {}", dir.display())));
    }
    let mut out = BTreeMap::new();
    for p in png_files(dir)? {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let index = (stem.len() == 8)
            .then(|| stem.parse::<usize>().ok())
            .flatten()
            .ok_or_else(|| {
                Error::Dataset(format!(
                    "scene {scene}: {} is not named %08d.png",
                    p.display()
                ))
            })?;
        out.insert(index, p);
    }
    Ok(out)
}

fn load_scene(scene: &str, dir: &Path) -> Result<PairedSequence> {
    let blur = frame_indices(scene, &dir.join("blur"))?;
    let gt = frame_indices(scene, &dir.join("gt"))?;
    for (have, have_name, other, other_name) in [(&blur, "blur", &gt, "gt"), (&gt, "gt", &blur, "blur")] {
        if let Some(i) = have.keys().find(|i| !other.contains_key(i)) {
            return Err(Error::Dataset(format!(
                "scene {scene}: frame {i:08} exists in {have_name}/ but is missing from {other_name}/"
            )));
        }
    }
    if blur.is_empty() {
        return Err(Error::Dataset(format!("scene {scene}: no frames")));
    }
    if let Some((pos, i)) = blur.keys().enumerate().find(|(pos, i)| pos != *i) {
        return Err(Error::Dataset(format!(
            "scene {scene}: frame {pos:08} is missing (indices must be contiguous from 00000000, next is {i:08})"
        )));
    }

    let mut blurry = Vec::with_capacity(blur.len());
    let mut sharp = Vec::with_capacity(blur.len());
    let mut size = None;
    for (i, bp) in &blur {
        let b = read_frame(bp)?;
        let g = read_frame(&gt[i])?;
        let (bs, gs) = ((b.height(), b.width()), (g.height(), g.width()));
        if bs != gs {
            return Err(Error::Dataset(format!(
                "scene {scene}: frame {i:08} is {}x{} in blur/ but {}x{} in gt/",
                bs.0, bs.1, gs.0, gs.1
            )));
        }
        match size {
            None => size = Some(bs),
            Some(s) if s != bs => {
                return Err(Error::Dataset(format!(
                    "scene {scene}: frame {i:08} is {}x{}, earlier frames are {}x{}",
                    bs.0, bs.1, s.0, s.1
                )))
            }
            _ => {}
        }
        blurry.push(b);
        sharp.push(g);
    }
    PairedSequence::new(scene, FrameSequence::new(blurry)?, FrameSequence::new(sharp)?)
}

/// Reads every scene of `spec.split`, in scene-name order.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<PairedSequence>> {
    spec.validate()?;
    let split_dir = spec.root.join(spec.split.as_str());
    if !split_dir.is_dir() {
        return Err(Error::Dataset(format!("split directory {} does not exist", split_dir.display())));
    }
    let mut scenes = Vec::new();
    for entry in std::fs::read_dir(&split_dir).map_err(|e| Error::io(&split_dir, e))? {
        let p = entry.map_err(|e| Error::io(&split_dir, e))?.path();
        if p.is_dir() {
            scenes.push(p);
        }
    }
    scenes.sort();
    if scenes.is_empty() {
        return Err(Error::Dataset(format!("split {} under {} is empty", spec.split, spec.root.display())));
    }
    scenes
        .iter()
        .map(|dir| {
            let name = dir.file_name().and_then(|s| s.to_str()).unwrap_or("?").to_string();
            load_scene(&name, dir)
        })
        .collect()
}

pub fn read_meta(scene_dir: &Path) -> Result<Option<SceneMeta>> {
    let p = scene_dir.join("meta.json");
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

/// Writes one scene as `<root>/<split>/<scene_id>/{blur,gt}/%08d.png` plus `meta.json`.
pub fn write_pair(root: &Path, split: Split, pair: &PairedSequence, meta: &SceneMeta) -> Result<PathBuf> {
    let dir = root.join(split.as_str()).join(pair.scene_id());
    for (kind, seq) in [("blur", pair.blurry()), ("gt", pair.sharp())] {
        let sub = dir.join(kind);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (i, f) in seq.iter().enumerate() {
            write_frame(f, &frame_path(&dir, kind, i))?;
        }
    }
    let p = dir.join("meta.json");
    std::fs::write(&p, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&p, e))?;
    Ok(dir)
}

/// Frames quantized the way [`write_pair`] stores them.
pub fn quantize(frame: &Frame) -> Frame {
    let mut q = frame.clamped();
    for v in q.data_mut() {
        *v = (*v * 255.0).round() / 255.0;
    }
    q
}
