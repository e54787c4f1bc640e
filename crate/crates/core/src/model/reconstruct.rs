use mbp_tensor::{Backend, Float};

use super::cell::HiddenStateSet;
use super::config::ModelConfig;
use super::layers::{CabStack, Conv, Up};
use super::layout::{Init, Scope};

/// One fusion level: `psi(x) + up(fuse_e(F.e + B.e)) + up(fuse_d(F.d + B.d))`.
#[derive(Debug, Clone)]
pub struct FusionLevel {
    pub psi: CabStack,
    pub fuse_e: Conv,
    pub fuse_d: Conv,
    pub up_e: Up,
    pub up_d: Up,
}

impl FusionLevel {
    fn register(scope: &mut Scope<'_>, cfg: &ModelConfig, up_stages: usize) -> Self {
        let c = cfg.base_channels;
        Self {
            psi: CabStack::register(&mut scope.child("psi"), ModelConfig::PSI_CABS, c, cfg.cab_reduction),
            fuse_e: Conv::register(&mut scope.child("fuse_e"), c, c, 3, 1),
            fuse_d: Conv::register(&mut scope.child("fuse_d"), c, c, 3, 1),
            up_e: Up::register(&mut scope.child("up_e"), c, up_stages),
            up_d: Up::register(&mut scope.child("up_d"), c, up_stages),
        }
    }

    fn forward<T: Float, B: Backend<T>>(&self, b: &B, x: &B::Var, enc: &B::Var, dec: &B::Var) -> B::Var {
        let e = self.up_e.forward(b, &self.fuse_e.forward(b, enc));
        let d = self.up_d.forward(b, &self.fuse_d.forward(b, dec));
        b.add(&b.add(&self.psi.forward(b, x), &e), &d)
    }
}

/// Progressive target-frame reconstructor: three fusion levels and a 5x5
/// residual output convolution.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    pub level1: FusionLevel,
    pub level2: FusionLevel,
    pub level3: FusionLevel,
    pub out: Conv,
    pub pair_e2_with_d2: bool,
}

impl Reconstructor {
    pub(crate) fn register(scope: &mut Scope<'_>, cfg: &ModelConfig) -> Self {
        Self {
            level1: FusionLevel::register(&mut scope.child("level1"), cfg, 0),
            level2: FusionLevel::register(&mut scope.child("level2"), cfg, 1),
            level3: FusionLevel::register(&mut scope.child("level3"), cfg, 2),
            out: Conv::register_with(&mut scope.child("out"), cfg.base_channels, 3, 5, 1, Init::Zeros),
            pair_e2_with_d2: cfg.pair_e2_with_d2,
        }
    }

    pub fn forward<T: Float, B: Backend<T>>(
        &self,
        b: &B,
        phi: &B::Var,
        fwd: &HiddenStateSet<B::Var>,
        bwd: &HiddenStateSet<B::Var>,
        input: &B::Var,
    ) -> B::Var {
        let f1 = self
            .level1
            .forward(b, phi, &b.add(&fwd.e1, &bwd.e1), &b.add(&fwd.d1, &bwd.d1));
        let enc2_partner = if self.pair_e2_with_d2 { &bwd.d2 } else { &bwd.e2 };
        let f2 = self
            .level2
            .forward(b, &f1, &b.add(&fwd.e2, enc2_partner), &b.add(&fwd.d2, &bwd.d2));
        let f3 = self
            .level3
            .forward(b, &f2, &b.add(&fwd.e3, &bwd.e3), &b.add(&fwd.d3, &bwd.d3));
        b.add(&self.out.forward(b, &f3), input)
    }
}

/// Conv stack on `[Phi, F, B]` used by the ablation variants:
/// conv3x3 (3C -> C), ReLU, conv3x3, ReLU, conv5x5 (C -> 3), plus the input.
#[derive(Debug, Clone)]
pub struct PlainHead {
    pub fuse: Conv,
    pub conv: Conv,
    pub out: Conv,
}

impl PlainHead {
    pub(crate) fn register(scope: &mut Scope<'_>, cfg: &ModelConfig) -> Self {
        let c = cfg.base_channels;
        Self {
            fuse: Conv::register(&mut scope.child("fuse"), 3 * c, c, 3, 1),
            conv: Conv::register(&mut scope.child("conv"), c, c, 3, 1),
            out: Conv::register_with(&mut scope.child("out"), c, 3, 5, 1, Init::Zeros),
        }
    }

    pub fn forward<T: Float, B: Backend<T>>(
        &self,
        b: &B,
        phi: &B::Var,
        fwd: &B::Var,
        bwd: &B::Var,
        input: &B::Var,
    ) -> B::Var {
        let x = b.concat(&[phi, fwd, bwd]);
        let x = b.relu(&self.fuse.forward(b, &x));
        let x = b.relu(&self.conv.forward(b, &x));
        b.add(&self.out.forward(b, &x), input)
    }
}
