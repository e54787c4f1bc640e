use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mbp_tensor::{Float, ParamId, Tensor};

use super::{ModelConfig, ParamLayout};
use crate::container::Container;
use crate::error::{Error, Result};

/// Container name prefix of optimizer state stored next to parameters.
pub const OPTIMIZER_PREFIX: &str = "optimizer/";

/// Named learnable tensors in layout order.
///
/// Names follow the module path of the layer, e.g.
/// `forward_cell.enc1.phi.cab0.conv1.weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T = f32> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
}

impl ParameterStore<f32> {
    /// Fresh parameters for `layout`, reproducible from `seed`.
    pub fn init(layout: &ParamLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout.instantiate(&mut rng);
        Self {
            names: layout.specs().iter().map(|s| s.name.clone()).collect(),
            tensors: tensors.into_iter().map(Arc::new).collect(),
        }
    }

    pub fn to_container(&self, config: &ModelConfig) -> Container {
        Container {
            model_config: config.clone(),
            tensors: self.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            extra: serde_json::Value::Null,
        }
    }

    pub fn save(&self, path: &Path, config: &ModelConfig) -> Result<()> {
        self.to_container(config).save(path)
    }

    /// Loads a store and the configuration it was saved with.
    ///
    /// Works on training checkpoints too; their optimizer tensors are skipped.
    pub fn load(path: &Path) -> Result<(ModelConfig, Self)> {
        let c = Container::load(path)?;
        let named = c
            .tensors
            .into_iter()
            .filter(|(n, _)| !n.starts_with(OPTIMIZER_PREFIX))
            .collect();
        Ok((c.model_config, Self::from_named(named)?))
    }
}

impl<T: Float> ParameterStore<T> {
    pub fn from_named(named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, (n, _)) in named.iter().enumerate() {
            if seen.insert(n.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate parameter name {n}")));
            }
        }
        let (names, tensors) = named.into_iter().map(|(n, t)| (n, Arc::new(t))).unzip();
        Ok(Self { names, tensors })
    }

    pub fn tensors(&self) -> &[Arc<Tensor<T>>] {
        &self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| self.tensors[i.0].as_ref())
    }

    pub fn by_id(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn by_id_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let id = self.id(name)?;
        Some(self.by_id_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(|t| t.as_ref()))
    }

    pub fn cast<U: Float>(&self) -> ParameterStore<U> {
        ParameterStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
        }
    }

    /// Checks names, order and shapes against the layout a model expects.
    pub fn check_layout(&self, layout: &ParamLayout) -> Result<()> {
        if self.len() != layout.len() {
            return Err(Error::Config(format!(
                "parameter store has {} tensors, model expects {}",
                self.len(),
                layout.len()
            )));
        }
        for (spec, (name, t)) in layout.specs().iter().zip(self.iter()) {
            if spec.name != name {
                return Err(Error::Config(format!(
                    "parameter order mismatch: expected {}, found {name}",
                    spec.name
                )));
            }
            if spec.shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    spec.shape,
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}
