use rand::Rng;
use serde::{Deserialize, Serialize};

use mbp_tensor::{ParamId, Tensor};

/// How a parameter tensor starts out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanInUniform { fan_in: usize },
    Zeros,
    Constant(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered list of every learnable tensor a model needs.
///
/// Built purely from the configuration; no tensor memory is allocated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.specs.push(ParamSpec { name, shape, init });
        ParamId(self.specs.len() - 1)
    }

    pub(crate) fn instantiate<R: Rng>(&self, rng: &mut R) -> Vec<Tensor<f32>> {
        self.specs
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Constant(v) => Tensor::full(&s.shape, v),
                Init::FanInUniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    Tensor::from_fn(&s.shape, |_| rng.gen_range(-bound..bound))
                }
            })
            .collect()
    }
}

/// Scoped name prefix used while registering parameters.
pub(crate) struct Scope<'a> {
    layout: &'a mut ParamLayout,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn root(layout: &'a mut ParamLayout) -> Self {
        Self {
            layout,
            prefix: String::new(),
        }
    }

    pub fn child(&mut self, name: &str) -> Scope<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Scope {
            layout: self.layout,
            prefix,
        }
    }

    pub fn param(&mut self, name: &str, shape: Vec<usize>, init: Init) -> ParamId {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.layout.push(full, shape, init)
    }
}
