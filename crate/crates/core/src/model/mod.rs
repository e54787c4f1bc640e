//! The deblurring network and its ablation variants.
//!
//! Every component is written against [`mbp_tensor::Backend`], so the same
//! code runs eagerly for inference and on a tape for training.
//!
//! Data flow for a sequence `I_0..I_{N-1}`:
//!
//! ```text
//! Phi_t = CAB(conv3x3(I_t))
//! F_t   = forward_cell(Phi_t, F_{t-1}),  F_{-1} = 0
//! B_t   = backward_cell(Phi_t, B_{t+1}), B_N   = 0
//! O_t   = decoder(Phi_t, F_t, B_t) + I_t
//! ```

mod cell;
mod config;
mod layers;
mod layout;
mod reconstruct;
mod store;

pub use cell::{GatherLevel, HiddenState, HiddenStateSet, SingleScaleCell, UnetCell};
pub use config::{ModelConfig, ResampleMode, Variant};
pub use layers::{Cab, CabStack, Conv, Down, Up};
pub use layout::{Init, ParamLayout, ParamSpec};
pub use reconstruct::{FusionLevel, PlainHead, Reconstructor};
pub use store::{ParameterStore, OPTIMIZER_PREFIX};

use mbp_tensor::{Backend, Eager, Float, Tensor};

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};
use layout::Scope;

/// Conv3x3 (3 -> C) followed by one CAB.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub conv: Conv,
    pub cab: Cab,
}

#[derive(Debug, Clone)]
pub enum Propagator {
    MultiScale { forward: UnetCell, backward: UnetCell },
    SingleScale { forward: SingleScaleCell, backward: SingleScaleCell },
}

#[derive(Debug, Clone)]
pub enum Decoder {
    Reconstructor(Reconstructor),
    Plain(PlainHead),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Intermediate values of one sequence evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace<V> {
    pub features: Vec<V>,
    pub forward_states: Vec<HiddenState<V>>,
    pub backward_states: Vec<HiddenState<V>>,
    pub outputs: Vec<V>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: ParamLayout,
    pub extractor: Extractor,
    pub propagator: Propagator,
    pub decoder: Decoder,
}

/// Rejects frame sizes the three-level U-Net cannot halve twice exactly.
pub fn check_frame_size(h: usize, w: usize) -> Result<()> {
    if h < 4 || w < 4 || !h.is_multiple_of(4) || !w.is_multiple_of(4) {
        let up = |n: usize| n.max(4).div_ceil(4) * 4;
        return Err(Error::Input(format!(
            "frame size {h}x{w} must be at least 4x4 and divisible by 4; pad to {}x{}",
            up(h),
            up(w)
        )));
    }
    Ok(())
}

impl Model {
    /// Builds the architecture selected by `config.variant`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::default();
        let mut root = Scope::root(&mut layout);
        let c = config.base_channels;

        let extractor = {
            let mut s = root.child("extractor");
            Extractor {
                conv: Conv::register(&mut s.child("conv"), 3, c, 3, 1),
                cab: Cab::register(&mut s.child("cab"), c, config.cab_reduction),
            }
        };
        let propagator = match config.variant {
            Variant::Baseline => Propagator::SingleScale {
                forward: SingleScaleCell::register(&mut root.child("forward_cell"), &config),
                backward: SingleScaleCell::register(&mut root.child("backward_cell"), &config),
            },
            Variant::BaselineMbp | Variant::RnnMbp => Propagator::MultiScale {
                forward: UnetCell::register(&mut root.child("forward_cell"), &config),
                backward: UnetCell::register(&mut root.child("backward_cell"), &config),
            },
        };
        let decoder = match config.variant {
            Variant::RnnMbp => Decoder::Reconstructor(Reconstructor::register(&mut root.child("reconstructor"), &config)),
            Variant::Baseline | Variant::BaselineMbp => Decoder::Plain(PlainHead::register(&mut root.child("head"), &config)),
        };
        Ok(Self {
            config,
            layout,
            extractor,
            propagator,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn count_parameters(&self) -> usize {
        self.layout.total_params()
    }

    pub fn init_params(&self, seed: u64) -> ParameterStore<f32> {
        ParameterStore::init(&self.layout, seed)
    }

    /// Hidden tensors carried per direction: 6 for the U-Net cells, 1 for the baseline.
    pub fn states_per_direction(&self) -> usize {
        match self.propagator {
            Propagator::MultiScale { .. } => 6,
            Propagator::SingleScale { .. } => 1,
        }
    }

    pub fn extract_features<T: Float, B: Backend<T>>(&self, b: &B, frame: &B::Var) -> B::Var {
        let x = self.extractor.conv.forward(b, frame);
        self.extractor.cab.forward(b, &x)
    }

    pub fn zero_state<T: Float, B: Backend<T>>(&self, b: &B, h: usize, w: usize) -> HiddenState<B::Var> {
        let c = self.config.base_channels;
        match self.propagator {
            Propagator::MultiScale { .. } => {
                let z = HiddenStateSet::<Tensor<T>>::zeros(c, h, w);
                HiddenState::MultiScale(HiddenStateSet {
                    e1: b.constant(z.e1),
                    e2: b.constant(z.e2),
                    e3: b.constant(z.e3),
                    d3: b.constant(z.d3),
                    d2: b.constant(z.d2),
                    d1: b.constant(z.d1),
                })
            }
            Propagator::SingleScale { .. } => HiddenState::Single(b.constant(Tensor::zeros(&[c, h, w]))),
        }
    }

    fn check_state<T: Float, B: Backend<T>>(&self, b: &B, phi: &B::Var, prev: &HiddenState<B::Var>) -> Result<()> {
        let shape = b.shape(phi);
        let c = self.config.base_channels;
        if shape.len() != 3 || shape[0] != c {
            return Err(Error::Contract(format!("features must be [{c}, H, W], got {shape:?}")));
        }
        let (h, w) = (shape[1], shape[2]);
        let expected: Vec<[usize; 3]> = match prev {
            HiddenState::MultiScale(_) => vec![
                [c, h, w],
                [c, h / 2, w / 2],
                [c, h / 4, w / 4],
                [c, h / 4, w / 4],
                [c, h / 2, w / 2],
                [c, h, w],
            ],
            HiddenState::Single(_) => vec![[c, h, w]],
        };
        if prev.count() != self.states_per_direction() {
            return Err(Error::Contract(format!(
                "{} hidden states supplied, variant {} carries {}",
                prev.count(),
                self.config.variant,
                self.states_per_direction()
            )));
        }
        for (i, (m, e)) in prev.members().iter().zip(&expected).enumerate() {
            if b.shape(m) != e.as_slice() {
                return Err(Error::Contract(format!(
                    "hidden state {i} has shape {:?}, expected {e:?} for features {shape:?}",
                    b.shape(m)
                )));
            }
        }
        Ok(())
    }

    /// One recurrent update in `dir`, with shape checks.
    pub fn cell_step<T: Float, B: Backend<T>>(
        &self,
        b: &B,
        dir: Direction,
        phi: &B::Var,
        prev: &HiddenState<B::Var>,
    ) -> Result<HiddenState<B::Var>> {
        self.check_state(b, phi, prev)?;
        Ok(self.step_unchecked(b, dir, phi, prev))
    }

    fn step_unchecked<T: Float, B: Backend<T>>(
        &self,
        b: &B,
        dir: Direction,
        phi: &B::Var,
        prev: &HiddenState<B::Var>,
    ) -> HiddenState<B::Var> {
        match (&self.propagator, prev) {
            (Propagator::MultiScale { forward, backward }, HiddenState::MultiScale(p)) => {
                let cell = if dir == Direction::Forward { forward } else { backward };
                HiddenState::MultiScale(cell.step(b, phi, p))
            }
            (Propagator::SingleScale { forward, backward }, HiddenState::Single(p)) => {
                let cell = if dir == Direction::Forward { forward } else { backward };
                HiddenState::Single(cell.step(b, phi, p))
            }
            _ => unreachable!("state kind checked against propagator"),
        }
    }

    fn check_features<T: Float, B: Backend<T>>(&self, b: &B, features: &[B::Var]) -> Result<(usize, usize)> {
        let first = features
            .first()
            .ok_or_else(|| Error::Contract("cannot propagate an empty feature list".into()))?;
        let shape = b.shape(first);
        if features.iter().any(|f| b.shape(f) != shape) {
            return Err(Error::Contract("feature maps in a sequence must share one shape".into()));
        }
        let c = self.config.base_channels;
        if shape.len() != 3 || shape[0] != c {
            return Err(Error::Contract(format!("features must be [{c}, H, W], got {shape:?}")));
        }
        check_frame_size(shape[1], shape[2]).map_err(|e| Error::Contract(e.to_string()))?;
        Ok((shape[1], shape[2]))
    }

    /// `F_t = cell(Phi_t, F_{t-1})` for t = 0..N-1, starting from zeros.
    pub fn propagate_forward<T: Float, B: Backend<T>>(
        &self,
        b: &B,
        features: &[B::Var],
    ) -> Result<Vec<HiddenState<B::Var>>> {
        let (h, w) = self.check_features(b, features)?;
        let mut state = self.zero_state(b, h, w);
        let mut out = Vec::with_capacity(features.len());
        for phi in features {
            state = self.step_unchecked(b, Direction::Forward, phi, &state);
            out.push(state.clone());
        }
        Ok(out)
    }

    /// `B_t = cell(Phi_t, B_{t+1})` for t = N-1..0, starting from zeros; returned in time order.
    pub fn propagate_backward<T: Float, B: Backend<T>>(
        &self,
        b: &B,
        features: &[B::Var],
    ) -> Result<Vec<HiddenState<B::Var>>> {
        let (h, w) = self.check_features(b, features)?;
        let mut state = self.zero_state(b, h, w);
        let mut out = Vec::with_capacity(features.len());
        for phi in features.iter().rev() {
            state = self.step_unchecked(b, Direction::Backward, phi, &state);
            out.push(state.clone());
        }
        out.reverse();
        Ok(out)
    }

    /// Output frame from target features, both directions' states and the input frame.
    pub fn reconstruct<T: Float, B: Backend<T>>(
        &self,
        b: &B,
        phi: &B::Var,
        fwd: &HiddenState<B::Var>,
        bwd: &HiddenState<B::Var>,
        input: &B::Var,
    ) -> B::Var {
        match &self.decoder {
            Decoder::Reconstructor(r) => {
                let (Some(f), Some(bk)) = (fwd.as_multi_scale(), bwd.as_multi_scale()) else {
                    unreachable!("reconstructor is only built with multi-scale cells")
                };
                r.forward(b, phi, f, bk, input)
            }
            Decoder::Plain(head) => head.forward(b, phi, fwd.full_res(), bwd.full_res(), input),
        }
    }

    /// Full sequence evaluation keeping every intermediate.
    pub fn forward_trace<T: Float, B: Backend<T>>(&self, b: &B, frames: &[B::Var]) -> Result<ForwardTrace<B::Var>> {
        if frames.is_empty() {
            return Err(Error::Input("empty frame sequence".into()));
        }
        let shape = b.shape(&frames[0]);
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Input(format!("frames must be [3, H, W], got {shape:?}")));
        }
        if frames.iter().any(|f| b.shape(f) != shape) {
            return Err(Error::Input("frames in a sequence must share one shape".into()));
        }
        check_frame_size(shape[1], shape[2])?;

        let features: Vec<B::Var> = frames.iter().map(|f| self.extract_features(b, f)).collect();
        let forward_states = self.propagate_forward(b, &features)?;
        let backward_states = self.propagate_backward(b, &features)?;
        let outputs = frames
            .iter()
            .enumerate()
            .map(|(t, frame)| self.reconstruct(b, &features[t], &forward_states[t], &backward_states[t], frame))
            .collect();
        Ok(ForwardTrace {
            features,
            forward_states,
            backward_states,
            outputs,
        })
    }

    /// Deblurred frames for a sequence of input frames.
    pub fn forward<T: Float, B: Backend<T>>(&self, b: &B, frames: &[B::Var]) -> Result<Vec<B::Var>> {
        Ok(self.forward_trace(b, frames)?.outputs)
    }

    /// Eager inference on a [`FrameSequence`].
    pub fn run(&self, params: &ParameterStore<f32>, seq: &FrameSequence) -> Result<FrameSequence> {
        params.check_layout(&self.layout)?;
        let b = Eager::new(params.tensors());
        let inputs: Vec<_> = seq.iter().map(|f| b.constant(f.tensor().clone())).collect();
        let outs = self.forward(&b, &inputs)?;
        FrameSequence::new(
            outs.into_iter()
                .map(|t| Frame::new(std::sync::Arc::unwrap_or_clone(t)))
                .collect::<Result<_>>()?,
        )
    }
}

/// Number of scalar learnables implied by `config`, from shapes alone.
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    Ok(Model::new(config.clone())?.count_parameters())
}
