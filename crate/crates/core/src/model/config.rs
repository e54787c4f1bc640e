use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which architecture to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Single-scale bidirectional RNN with a plain conv reconstruction head.
    Baseline,
    /// Multi-scale U-Net cells, plain conv reconstruction head.
    BaselineMbp,
    /// Multi-scale U-Net cells and the progressive target-frame reconstructor.
    RnnMbp,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::BaselineMbp, Variant::RnnMbp];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::BaselineMbp => "baseline_mbp",
            Variant::RnnMbp => "rnn_mbp",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected baseline, baseline_mbp or rnn_mbp)"
                ))
            })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a U-Net level halves its resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    /// 3x3 convolution with stride 2.
    StridedConv,
    /// 2x2 average (bilinear at half scale) followed by a 3x3 convolution.
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub cab_reduction: usize,
    pub variant: Variant,
    pub downsample: ResampleMode,
    /// Pair `f^e2` with `b^d2` in the second reconstructor level instead
    /// of with `b^e2`.
    pub pair_e2_with_d2: bool,
}

impl ModelConfig {
    /// CABs per encoder/decoder block inside a U-Net cell.
    pub const PHI_CABS: usize = 2;
    /// CABs per reconstructor level.
    pub const PSI_CABS: usize = 8;

    pub fn tiny(base_channels: usize, cab_reduction: usize, variant: Variant) -> Self {
        Self {
            base_channels,
            cab_reduction,
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.base_channels == 0 {
            errs.push("base_channels must be positive".to_string());
        }
        if self.cab_reduction == 0 {
            errs.push("cab_reduction must be positive".to_string());
        } else if !self.base_channels.is_multiple_of(self.cab_reduction) {
            errs.push(format!(
                "base_channels ({}) must be divisible by cab_reduction ({})",
                self.base_channels, self.cab_reduction
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            cab_reduction: 16,
            variant: Variant::RnnMbp,
            downsample: ResampleMode::StridedConv,
            pair_e2_with_d2: false,
        }
    }
}
