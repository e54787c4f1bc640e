use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Augment;
use crate::error::{Error, Result};

/// Optimisation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Square crop side, or `"full"` for whole frames.
    #[serde(serialize_with = "ser_patch", deserialize_with = "de_patch")]
    pub patch: Option<usize>,
    pub charbonnier_eps: f64,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Global gradient-norm limit; off when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// Random flips and quarter turns of training windows.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 2e-4,
            lr_min: 1e-7,
            total_steps: 500_000,
            batch_size: 4,
            seq_len: 8,
            patch: Some(256),
            charbonnier_eps: 1e-3,
            seed: 0,
            checkpoint_every: 5_000,
            grad_clip: None,
            augment: true,
        }
    }
}

fn ser_patch<S: Serializer>(p: &Option<usize>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match p {
        Some(n) => s.serialize_u64(*n as u64),
        None => s.serialize_str("full"),
    }
}

fn de_patch<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Size(usize),
        Word(String),
    }
    match Raw::deserialize(d)? {
        Raw::Size(n) => Ok(Some(n)),
        Raw::Word(w) if w == "full" => Ok(None),
        Raw::Word(w) => Err(serde::de::Error::custom(format!(
            "patch must be a positive integer or \"full\", got {w:?}"
        ))),
    }
}

impl TrainConfig {
    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            out.push(format!(
                "learning rates must satisfy 0 <= lr_min <= lr_max, got lr_min={} lr_max={}",
                self.lr_min, self.lr_max
            ));
        }
        if self.batch_size == 0 {
            out.push("batch_size must be at least 1".into());
        }
        if self.seq_len == 0 {
            out.push("seq_len must be at least 1".into());
        }
        if self.patch == Some(0) {
            out.push("patch must be at least 1".into());
        }
        if let Some(p) = self.patch {
            if p % 4 != 0 {
                out.push(format!("patch {p} must be divisible by 4"));
            }
        }
        if !(self.charbonnier_eps > 0.0 && self.charbonnier_eps.is_finite()) {
            out.push(format!("charbonnier_eps must be positive, got {}", self.charbonnier_eps));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                out.push(format!("grad_clip must be positive, got {c}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    pub fn augment(&self) -> Augment {
        if self.augment {
            Augment::ALL
        } else {
            Augment::NONE
        }
    }
}
