use mbp_tensor::{Backend, Float, ParamId};

use super::config::ResampleMode;
use super::layout::{Init, Scope};

/// Square-kernel convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub(crate) fn register(scope: &mut Scope<'_>, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Self::register_with(scope, c_in, c_out, k, stride, Init::FanInUniform { fan_in: c_in * k * k })
    }

    pub(crate) fn register_with(
        scope: &mut Scope<'_>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        weight_init: Init,
    ) -> Self {
        Self::register_full(scope, c_in, c_out, k, stride, weight_init, Init::Zeros)
    }

    pub(crate) fn register_full(
        scope: &mut Scope<'_>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        weight_init: Init,
        bias_init: Init,
    ) -> Self {
        Self {
            weight: scope.param("weight", vec![c_out, c_in, k, k], weight_init),
            bias: scope.param("bias", vec![c_out], bias_init),
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<T: Float, B: Backend<T>>(&self, b: &B, x: &B::Var) -> B::Var {
        b.conv2d(x, &b.param(self.weight), &b.param(self.bias), self.stride, self.pad)
    }
}

/// Initial bias of the squeeze layer. With few bottleneck units a zero bias
/// leaves whole blocks with every unit below the ReLU threshold at step 0.
pub const SQUEEZE_BIAS: f32 = 1.0;

/// Channel attention block: `x + sigmoid(W2 relu(W1 mean(r))) * r`
/// with `r = conv(relu(conv(x)))`.
#[derive(Debug, Clone)]
pub struct Cab {
    pub conv1: Conv,
    pub conv2: Conv,
    pub squeeze: Conv,
    pub excite: Conv,
}

impl Cab {
    pub(crate) fn register(scope: &mut Scope<'_>, c: usize, reduction: usize) -> Self {
        let mid = c / reduction;
        Self {
            conv1: Conv::register(&mut scope.child("conv1"), c, c, 3, 1),
            conv2: Conv::register(&mut scope.child("conv2"), c, c, 3, 1),
            squeeze: Conv::register_full(
                &mut scope.child("squeeze"),
                c,
                mid,
                1,
                1,
                Init::FanInUniform { fan_in: c },
                Init::Constant(SQUEEZE_BIAS),
            ),
            excite: Conv::register(&mut scope.child("excite"), mid, c, 1, 1),
        }
    }

    pub fn forward<T: Float, B: Backend<T>>(&self, b: &B, x: &B::Var) -> B::Var {
        let r = self.conv1.forward(b, x);
        let r = b.relu(&r);
        let r = self.conv2.forward(b, &r);
        let pooled = b.mean_spatial(&r);
        let s = b.relu(&self.squeeze.forward(b, &pooled));
        let gate = b.sigmoid(&self.excite.forward(b, &s));
        b.add(x, &b.scale_channels(&r, &gate))
    }
}

/// A chain of CABs (two for the cell blocks, eight in the reconstructor).
#[derive(Debug, Clone)]
pub struct CabStack(pub Vec<Cab>);

impl CabStack {
    pub(crate) fn register(scope: &mut Scope<'_>, n: usize, c: usize, reduction: usize) -> Self {
        Self(
            (0..n)
                .map(|i| Cab::register(&mut scope.child(&format!("cab{i}")), c, reduction))
                .collect(),
        )
    }

    pub fn forward<T: Float, B: Backend<T>>(&self, b: &B, x: &B::Var) -> B::Var {
        self.0.iter().fold(x.clone(), |h, cab| cab.forward(b, &h))
    }
}

/// Halves resolution.
#[derive(Debug, Clone)]
pub struct Down {
    pub conv: Conv,
    pub mode: ResampleMode,
}

impl Down {
    pub(crate) fn register(scope: &mut Scope<'_>, c: usize, mode: ResampleMode) -> Self {
        let stride = match mode {
            ResampleMode::StridedConv => 2,
            ResampleMode::Bilinear => 1,
        };
        Self {
            conv: Conv::register(&mut scope.child("conv"), c, c, 3, stride),
            mode,
        }
    }

    pub fn forward<T: Float, B: Backend<T>>(&self, b: &B, x: &B::Var) -> B::Var {
        match self.mode {
            ResampleMode::StridedConv => self.conv.forward(b, x),
            ResampleMode::Bilinear => self.conv.forward(b, &b.avg_pool2(x)),
        }
    }
}

/// Doubles resolution `stages.len()` times; each stage is bilinear x2 then a 3x3 conv.
#[derive(Debug, Clone)]
pub struct Up {
    pub stages: Vec<Conv>,
}

impl Up {
    pub(crate) fn register(scope: &mut Scope<'_>, c: usize, stages: usize) -> Self {
        Self {
            stages: (0..stages)
                .map(|i| Conv::register(&mut scope.child(&format!("stage{i}")), c, c, 3, 1))
                .collect(),
        }
    }

    pub fn forward<T: Float, B: Backend<T>>(&self, b: &B, x: &B::Var) -> B::Var {
        self.stages
            .iter()
            .fold(x.clone(), |h, conv| conv.forward(b, &b.upsample2(&h)))
    }
}
