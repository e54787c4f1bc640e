//! Video deblurring by multi-scale bidirectional recurrent propagation.
//!
//! * [`model`]: feature extractor, U-Net RNN cells, reconstructor and ablation variants
//! * [`data`]: synthetic frame-averaging blur, toy scenes, paired dataset I/O
//! * [`train`]: Charbonnier loss, cosine schedule, Adam, checkpointed training loop
//! * [`infer`]: padded and tiled whole-sequence inference
//! * [`metrics`]: PSNR, SSIM, evaluation runs and report tables

pub mod container;
pub mod data;
pub mod error;
pub mod frame;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use frame::{Frame, FrameSequence};
pub use model::{count_parameters, Model, ModelConfig, ParameterStore, Variant};
