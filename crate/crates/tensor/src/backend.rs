use std::sync::Arc;

use crate::{kernels, Float, Tensor};

/// Index of a learnable tensor inside a parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// The operation set a model is written against.
///
/// [`Eager`] evaluates immediately and keeps nothing alive beyond the
/// returned values; [`crate::Tape`] records every node for reverse-mode
/// differentiation. Both call the same kernels, so values agree bit for bit.
pub trait Backend<T: Float> {
    type Var: Clone;

    fn param(&self, id: ParamId) -> Self::Var;
    fn constant(&self, value: Tensor<T>) -> Self::Var;
    fn value(&self, v: &Self::Var) -> Arc<Tensor<T>>;

    fn conv2d(&self, x: &Self::Var, w: &Self::Var, b: &Self::Var, stride: usize, pad: usize) -> Self::Var;
    fn add(&self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn relu(&self, x: &Self::Var) -> Self::Var;
    fn sigmoid(&self, x: &Self::Var) -> Self::Var;
    fn mean_spatial(&self, x: &Self::Var) -> Self::Var;
    fn scale_channels(&self, x: &Self::Var, gate: &Self::Var) -> Self::Var;
    fn upsample2(&self, x: &Self::Var) -> Self::Var;
    fn avg_pool2(&self, x: &Self::Var) -> Self::Var;
    fn concat(&self, parts: &[&Self::Var]) -> Self::Var;
    /// Sum of `sqrt((pred - target)^2 + eps^2)`; the target is not differentiated.
    fn charbonnier_sum(&self, pred: &Self::Var, target: &Self::Var, eps: T) -> Self::Var;
    fn scale(&self, x: &Self::Var, s: T) -> Self::Var;

    fn shape(&self, v: &Self::Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    /// Sums a non-empty list left to right.
    fn sum_all(&self, vars: &[Self::Var]) -> Self::Var {
        let mut it = vars.iter();
        let first = it.next().expect("sum_all of an empty list").clone();
        it.fold(first, |acc, v| self.add(&acc, v))
    }
}

/// Immediate evaluation without gradient bookkeeping.
pub struct Eager<'p, T> {
    params: &'p [Arc<Tensor<T>>],
}

impl<'p, T: Float> Eager<'p, T> {
    pub fn new(params: &'p [Arc<Tensor<T>>]) -> Self {
        Self { params }
    }
}

impl<T: Float> Backend<T> for Eager<'_, T> {
    type Var = Arc<Tensor<T>>;

    fn param(&self, id: ParamId) -> Self::Var {
        self.params[id.0].clone()
    }

    fn constant(&self, value: Tensor<T>) -> Self::Var {
        Arc::new(value)
    }

    fn value(&self, v: &Self::Var) -> Arc<Tensor<T>> {
        v.clone()
    }

    fn conv2d(&self, x: &Self::Var, w: &Self::Var, b: &Self::Var, stride: usize, pad: usize) -> Self::Var {
        Arc::new(kernels::conv2d(x, w, b, stride, pad))
    }

    fn add(&self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        Arc::new(kernels::add(a, b))
    }

    fn relu(&self, x: &Self::Var) -> Self::Var {
        Arc::new(kernels::relu(x))
    }

    fn sigmoid(&self, x: &Self::Var) -> Self::Var {
        Arc::new(kernels::sigmoid(x))
    }

    fn mean_spatial(&self, x: &Self::Var) -> Self::Var {
        Arc::new(kernels::mean_spatial(x))
    }

    fn scale_channels(&self, x: &Self::Var, gate: &Self::Var) -> Self::Var {
        Arc::new(kernels::scale_channels(x, gate))
    }

    fn upsample2(&self, x: &Self::Var) -> Self::Var {
        Arc::new(kernels::upsample2(x))
    }

    fn avg_pool2(&self, x: &Self::Var) -> Self::Var {
        Arc::new(kernels::avg_pool2(x))
    }

    fn concat(&self, parts: &[&Self::Var]) -> Self::Var {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| p.as_ref()).collect();
        Arc::new(kernels::concat(&refs))
    }

    fn charbonnier_sum(&self, pred: &Self::Var, target: &Self::Var, eps: T) -> Self::Var {
        Arc::new(kernels::charbonnier_sum(pred, target, eps))
    }

    fn scale(&self, x: &Self::Var, s: T) -> Self::Var {
        Arc::new(x.map(|v| v * s))
    }
}
