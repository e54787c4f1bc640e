use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig, TrainState};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParameterStore, OPTIMIZER_PREFIX};

/// Sub-directory of a run holding `step_%08d.mbp` files.
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct Extra {
    kind: String,
    step: u64,
    train_config: TrainConfig,
    adam: AdamScalars,
    loss_ema: Option<f64>,
    wall_time: f64,
    /// Batches are drawn from ChaCha8 seeded with `seed`, stream `step + 1`.
    sampler: Sampler,
}

#[derive(Serialize, Deserialize)]
struct AdamScalars {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct Sampler {
    seed: u64,
    next_stream: u64,
}

impl Checkpoint {
    pub fn file_name(step: u64) -> String {
        format!("step_{step:08}.mbp")
    }

    pub fn to_container(&self) -> Result<Container> {
        let s = &self.state;
        let mut tensors: Vec<_> = s.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        for (kind, moments) in [("m", &s.adam.m), ("v", &s.adam.v)] {
            for (name, t) in s.params.names().iter().zip(moments) {
                tensors.push((format!("{OPTIMIZER_PREFIX}{kind}/{name}"), t.clone()));
            }
        }
        let extra = Extra {
            kind: "checkpoint".into(),
            step: s.step,
            train_config: self.train_config.clone(),
            adam: AdamScalars {
                beta1: s.adam.beta1,
                beta2: s.adam.beta2,
                eps: s.adam.eps,
                t: s.adam.t,
            },
            loss_ema: s.loss_ema,
            wall_time: s.wall_time,
            sampler: Sampler {
                seed: self.train_config.seed,
                next_stream: s.step + 1,
            },
        };
        Ok(Container {
            model_config: self.model_config.clone(),
            tensors,
            extra: serde_json::to_value(extra)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let bad = |reason: String| Error::Container {
            path: path.to_path_buf(),
            reason,
        };
        let extra: Extra = serde_json::from_value(c.extra.clone())
            .map_err(|e| bad(format!("not a training checkpoint: {e}")))?;
        if extra.kind != "checkpoint" {
            return Err(bad(format!("unexpected kind {:?}", extra.kind)));
        }
        let mut params = Vec::new();
        let mut m = std::collections::HashMap::new();
        let mut v = std::collections::HashMap::new();
        for (name, t) in c.tensors {
            if let Some(rest) = name.strip_prefix(OPTIMIZER_PREFIX) {
                match rest.split_once('/') {
                    Some(("m", p)) => m.insert(p.to_string(), t),
                    Some(("v", p)) => v.insert(p.to_string(), t),
                    _ => return Err(bad(format!("unknown optimizer tensor {name}"))),
                };
            } else {
                params.push((name, t));
            }
        }
        let params = ParameterStore::from_named(params)?;
        let take = |map: &mut std::collections::HashMap<String, _>, kind: &str| -> Result<Vec<_>> {
            params
                .names()
                .iter()
                .map(|n| map.remove(n).ok_or_else(|| bad(format!("missing optimizer moment {kind} for {n}"))))
                .collect()
        };
        let adam = Adam {
            beta1: extra.adam.beta1,
            beta2: extra.adam.beta2,
            eps: extra.adam.eps,
            m: take(&mut m, "m")?,
            v: take(&mut v, "v")?,
            t: extra.adam.t,
        };
        Ok(Self {
            model_config: c.model_config,
            train_config: extra.train_config,
            state: TrainState {
                step: extra.step,
                params,
                adam,
                loss_ema: extra.loss_ema,
                wall_time: extra.wall_time,
            },
        })
    }
}

/// Highest-step checkpoint in `<run_dir>/checkpoints`, if any.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let p = entry.map_err(|e| Error::io(&dir, e))?.path();
        let step = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step_"))
            .and_then(|n| n.strip_suffix(".mbp"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(s) = step {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, p));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}
