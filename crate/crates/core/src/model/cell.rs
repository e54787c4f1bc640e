use mbp_tensor::{Backend, Float, Tensor};

use super::config::ModelConfig;
use super::layers::{CabStack, Conv, Down, Up};
use super::layout::Scope;

/// The six multi-scale states one direction carries between time steps.
///
/// `e1`/`d1` are full resolution, `e2`/`d2` half, `e3`/`d3` quarter.
#[derive(Debug, Clone)]
pub struct HiddenStateSet<V> {
    pub e1: V,
    pub e2: V,
    pub e3: V,
    pub d3: V,
    pub d2: V,
    pub d1: V,
}

impl<V> HiddenStateSet<V> {
    /// Members in encoder-then-decoder order: e1, e2, e3, d3, d2, d1.
    pub fn members(&self) -> [&V; 6] {
        [&self.e1, &self.e2, &self.e3, &self.d3, &self.d2, &self.d1]
    }
}

impl<T: Float> HiddenStateSet<Tensor<T>> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        let full = || Tensor::zeros(&[c, h, w]);
        let half = || Tensor::zeros(&[c, h / 2, w / 2]);
        let quarter = || Tensor::zeros(&[c, h / 4, w / 4]);
        Self {
            e1: full(),
            e2: half(),
            e3: quarter(),
            d3: quarter(),
            d2: half(),
            d1: full(),
        }
    }

    /// True when every member has the exact scale relation to `c x h x w`.
    pub fn has_scale_structure(&self, c: usize, h: usize, w: usize) -> bool {
        let expect = [
            [c, h, w],
            [c, h / 2, w / 2],
            [c, h / 4, w / 4],
            [c, h / 4, w / 4],
            [c, h / 2, w / 2],
            [c, h, w],
        ];
        self.members()
            .iter()
            .zip(expect.iter())
            .all(|(m, e)| m.shape() == e.as_slice())
    }
}

/// State carried by one propagation direction.
#[derive(Debug, Clone)]
pub enum HiddenState<V> {
    MultiScale(HiddenStateSet<V>),
    Single(V),
}

impl<V> HiddenState<V> {
    pub fn count(&self) -> usize {
        match self {
            HiddenState::MultiScale(_) => 6,
            HiddenState::Single(_) => 1,
        }
    }

    pub fn members(&self) -> Vec<&V> {
        match self {
            HiddenState::MultiScale(s) => s.members().to_vec(),
            HiddenState::Single(v) => vec![v],
        }
    }

    pub fn as_multi_scale(&self) -> Option<&HiddenStateSet<V>> {
        match self {
            HiddenState::MultiScale(s) => Some(s),
            HiddenState::Single(_) => None,
        }
    }

    /// Full-resolution state fed to the plain reconstruction head.
    pub fn full_res(&self) -> &V {
        match self {
            HiddenState::MultiScale(s) => &s.d1,
            HiddenState::Single(v) => v,
        }
    }
}

/// One encoder or decoder level that gathers two previous-step states.
#[derive(Debug, Clone)]
pub struct GatherLevel {
    pub phi: CabStack,
    pub from_enc: Conv,
    pub from_dec: Conv,
}

impl GatherLevel {
    fn register(scope: &mut Scope<'_>, cfg: &ModelConfig) -> Self {
        let c = cfg.base_channels;
        Self {
            phi: CabStack::register(&mut scope.child("phi"), ModelConfig::PHI_CABS, c, cfg.cab_reduction),
            from_enc: Conv::register(&mut scope.child("gather_e"), c, c, 3, 1),
            from_dec: Conv::register(&mut scope.child("gather_d"), c, c, 3, 1),
        }
    }

    fn forward<T: Float, B: Backend<T>>(&self, b: &B, x: &B::Var, prev_e: &B::Var, prev_d: &B::Var) -> B::Var {
        let s = b.add(&self.phi.forward(b, x), &self.from_enc.forward(b, prev_e));
        b.add(&s, &self.from_dec.forward(b, prev_d))
    }
}

/// U-Net RNN cell: three gathering encoder levels and a decoder with
/// encoder skip connections.
#[derive(Debug, Clone)]
pub struct UnetCell {
    pub enc1: GatherLevel,
    pub down1: Down,
    pub enc2: GatherLevel,
    pub down2: Down,
    pub enc3: GatherLevel,
    pub dec3: CabStack,
    pub up2: Up,
    pub dec2_up: CabStack,
    pub dec2_skip: CabStack,
    pub up1: Up,
    pub dec1_up: CabStack,
    pub dec1_skip: CabStack,
}

impl UnetCell {
    pub(crate) fn register(scope: &mut Scope<'_>, cfg: &ModelConfig) -> Self {
        let (c, r, n) = (cfg.base_channels, cfg.cab_reduction, ModelConfig::PHI_CABS);
        Self {
            enc1: GatherLevel::register(&mut scope.child("enc1"), cfg),
            down1: Down::register(&mut scope.child("down1"), c, cfg.downsample),
            enc2: GatherLevel::register(&mut scope.child("enc2"), cfg),
            down2: Down::register(&mut scope.child("down2"), c, cfg.downsample),
            enc3: GatherLevel::register(&mut scope.child("enc3"), cfg),
            dec3: CabStack::register(&mut scope.child("dec3.phi"), n, c, r),
            up2: Up::register(&mut scope.child("up2"), c, 1),
            dec2_up: CabStack::register(&mut scope.child("dec2.phi_up"), n, c, r),
            dec2_skip: CabStack::register(&mut scope.child("dec2.phi_skip"), n, c, r),
            up1: Up::register(&mut scope.child("up1"), c, 1),
            dec1_up: CabStack::register(&mut scope.child("dec1.phi_up"), n, c, r),
            dec1_skip: CabStack::register(&mut scope.child("dec1.phi_skip"), n, c, r),
        }
    }

    pub fn step<T: Float, B: Backend<T>>(
        &self,
        b: &B,
        phi: &B::Var,
        prev: &HiddenStateSet<B::Var>,
    ) -> HiddenStateSet<B::Var> {
        let e1 = self.enc1.forward(b, phi, &prev.e1, &prev.d1);
        let e2 = self.enc2.forward(b, &self.down1.forward(b, &e1), &prev.e2, &prev.d2);
        let e3 = self.enc3.forward(b, &self.down2.forward(b, &e2), &prev.e3, &prev.d3);
        let d3 = self.dec3.forward(b, &e3);
        let d2 = b.add(
            &self.dec2_up.forward(b, &self.up2.forward(b, &d3)),
            &self.dec2_skip.forward(b, &e2),
        );
        let d1 = b.add(
            &self.dec1_up.forward(b, &self.up1.forward(b, &d2)),
            &self.dec1_skip.forward(b, &e1),
        );
        HiddenStateSet { e1, e2, e3, d3, d2, d1 }
    }
}

/// Single-scale recurrent cell of the baseline: `h_t = phi(Phi_t + Conv(h_{t-1}))`.
#[derive(Debug, Clone)]
pub struct SingleScaleCell {
    pub merge: Conv,
    pub phi: CabStack,
}

impl SingleScaleCell {
    pub(crate) fn register(scope: &mut Scope<'_>, cfg: &ModelConfig) -> Self {
        let c = cfg.base_channels;
        Self {
            merge: Conv::register(&mut scope.child("merge"), c, c, 3, 1),
            phi: CabStack::register(&mut scope.child("phi"), ModelConfig::PHI_CABS, c, cfg.cab_reduction),
        }
    }

    pub fn step<T: Float, B: Backend<T>>(&self, b: &B, phi: &B::Var, prev: &B::Var) -> B::Var {
        let merged = b.add(phi, &self.merge.forward(b, prev));
        self.phi.forward(b, &merged)
    }
}
