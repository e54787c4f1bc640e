//! Paired blurry/sharp video data: synthesis by frame averaging, procedural
//! toy scenes, the on-disk dataset layout and training-window sampling.

mod benchmark;
mod blur;
mod dataset;
mod png;
mod sample;
mod toy;

pub use benchmark::ToyBenchmark;
pub use blur::{synthesize_blur, BlurSpec, SharpClip};
pub use dataset::{frame_path, load_dataset, quantize, read_meta, write_pair, DatasetSpec, PairedSequence, SceneMeta, Split};
pub use png::{read_frame, read_frame_dir, write_frame};
pub use sample::{cut_window, sample_coords, sample_training_window, Augment, WindowCoords};
pub use toy::{generate_toy_scene, ToyScene};
