use std::cell::RefCell;
use std::sync::Arc;

use crate::backend::{Backend, ParamId};
use crate::{kernels, Float, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    Conv { x: usize, w: usize, b: usize, stride: usize, pad: usize },
    Add(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    MeanSpatial(usize),
    ScaleChannels { x: usize, gate: usize },
    Upsample2(usize),
    AvgPool2(usize),
    Concat(Vec<usize>),
    Charbonnier { pred: usize, target: usize, eps: T },
    Scale(usize, T),
}

struct Node<T> {
    value: Option<Arc<Tensor<T>>>,
    op: Op<T>,
}

/// Reverse-mode recorder.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Tape::backward`] simply walks it in reverse.
pub struct Tape<'p, T> {
    params: &'p [Arc<Tensor<T>>],
    nodes: RefCell<Vec<Node<T>>>,
    param_nodes: RefCell<Vec<Option<usize>>>,
}

/// Per-parameter gradients, `None` where a parameter was never touched.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    pub grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Grads<T> {
    pub fn zeros_like(params: &[Arc<Tensor<T>>]) -> Self {
        Self {
            grads: params.iter().map(|p| Some(Tensor::zeros(p.shape()))).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    /// Adds `other` into `self` parameter by parameter.
    pub fn accumulate(&mut self, other: Grads<T>) {
        for (mine, theirs) in self.grads.iter_mut().zip(other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(&t),
                (None, Some(t)) => *mine = Some(t),
                _ => {}
            }
        }
    }

    pub fn squared_norm(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|&v| v * v)
            .sum()
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
}

impl<'p, T: Float> Tape<'p, T> {
    pub fn new(params: &'p [Arc<Tensor<T>>]) -> Self {
        Self {
            params,
            nodes: RefCell::new(Vec::new()),
            param_nodes: RefCell::new(vec![None; params.len()]),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Some(Arc::new(value)),
            op,
        });
        NodeId(nodes.len() - 1)
    }

    fn val(&self, id: usize) -> Arc<Tensor<T>> {
        self.nodes.borrow()[id]
            .value
            .clone()
            .expect("tape value already released by backward")
    }

    /// Backpropagates from a single-element node with seed gradient 1.
    ///
    /// Consumes the recorded values; the tape cannot be differentiated twice.
    pub fn backward(&self, root: NodeId) -> Grads<T> {
        let mut nodes = self.nodes.borrow_mut();
        assert!(root.0 < nodes.len(), "root not on this tape");
        let root_len = nodes[root.0].value.as_ref().map(|v| v.len()).unwrap_or(0);
        assert_eq!(root_len, 1, "backward root must be a scalar");

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut out = Grads {
            grads: (0..self.params.len()).map(|_| None).collect(),
        };
        grads[root.0] = Some(Tensor::full(&[1, 1, 1], T::one()));

        fn acc<T: Float>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(s) => s.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                nodes[i].value = None;
                continue;
            };
            let v = |j: usize| nodes[j].value.clone().expect("released input");
            match &nodes[i].op {
                Op::Constant => {}
                Op::Param(pid) => acc(&mut out.grads[pid.0], g),
                Op::Conv { x, w, b, stride, pad } => {
                    let (dx, dw, db) = kernels::conv2d_backward(&v(*x), &v(*w), &v(*b), *stride, *pad, &g);
                    acc(&mut grads[*x], dx);
                    acc(&mut grads[*w], dw);
                    acc(&mut grads[*b], db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[*b], g.clone());
                    acc(&mut grads[*a], g);
                }
                Op::Relu(x) => {
                    let y = v(i);
                    let dx = Tensor::from_fn(g.shape(), |k| {
                        if y.data()[k] > T::zero() {
                            g.data()[k]
                        } else {
                            T::zero()
                        }
                    });
                    acc(&mut grads[*x], dx);
                }
                Op::Sigmoid(x) => {
                    let y = v(i);
                    let dx = Tensor::from_fn(g.shape(), |k| {
                        let s = y.data()[k];
                        g.data()[k] * s * (T::one() - s)
                    });
                    acc(&mut grads[*x], dx);
                }
                Op::MeanSpatial(x) => {
                    let (_, h, w) = v(*x).dims3();
                    acc(&mut grads[*x], kernels::mean_spatial_backward(&g, h, w));
                }
                Op::ScaleChannels { x, gate } => {
                    let (dx, dg) = kernels::scale_channels_backward(&v(*x), &v(*gate), &g);
                    acc(&mut grads[*x], dx);
                    acc(&mut grads[*gate], dg);
                }
                Op::Upsample2(x) => acc(&mut grads[*x], kernels::upsample2_backward(&g)),
                Op::AvgPool2(x) => {
                    let (_, h, w) = v(*x).dims3();
                    acc(&mut grads[*x], kernels::avg_pool2_backward(&g, h, w));
                }
                Op::Concat(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let pc = v(p).shape()[0];
                        acc(&mut grads[p], g.channels(c0, c0 + pc));
                        c0 += pc;
                    }
                }
                Op::Charbonnier { pred, target, eps } => {
                    let d = kernels::charbonnier_sum_backward(&v(*pred), &v(*target), *eps, g.data()[0]);
                    acc(&mut grads[*pred], d);
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    acc(&mut grads[*x], g.map(|e| e * s));
                }
            }
            nodes[i].value = None;
        }
        out
    }
}

impl<T: Float> Backend<T> for Tape<'_, T> {
    type Var = NodeId;

    fn param(&self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes.borrow()[id.0] {
            return NodeId(n);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Some(self.params[id.0].clone()),
            op: Op::Param(id),
        });
        let n = nodes.len() - 1;
        self.param_nodes.borrow_mut()[id.0] = Some(n);
        NodeId(n)
    }

    fn constant(&self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Constant)
    }

    fn value(&self, v: &NodeId) -> Arc<Tensor<T>> {
        self.val(v.0)
    }

    fn conv2d(&self, x: &NodeId, w: &NodeId, b: &NodeId, stride: usize, pad: usize) -> NodeId {
        let out = kernels::conv2d(&self.val(x.0), &self.val(w.0), &self.val(b.0), stride, pad);
        self.push(
            out,
            Op::Conv {
                x: x.0,
                w: w.0,
                b: b.0,
                stride,
                pad,
            },
        )
    }

    fn add(&self, a: &NodeId, b: &NodeId) -> NodeId {
        let out = kernels::add(&self.val(a.0), &self.val(b.0));
        self.push(out, Op::Add(a.0, b.0))
    }

    fn relu(&self, x: &NodeId) -> NodeId {
        let out = kernels::relu(&self.val(x.0));
        self.push(out, Op::Relu(x.0))
    }

    fn sigmoid(&self, x: &NodeId) -> NodeId {
        let out = kernels::sigmoid(&self.val(x.0));
        self.push(out, Op::Sigmoid(x.0))
    }

    fn mean_spatial(&self, x: &NodeId) -> NodeId {
        let out = kernels::mean_spatial(&self.val(x.0));
        self.push(out, Op::MeanSpatial(x.0))
    }

    fn scale_channels(&self, x: &NodeId, gate: &NodeId) -> NodeId {
        let out = kernels::scale_channels(&self.val(x.0), &self.val(gate.0));
        self.push(out, Op::ScaleChannels { x: x.0, gate: gate.0 })
    }

    fn upsample2(&self, x: &NodeId) -> NodeId {
        let out = kernels::upsample2(&self.val(x.0));
        self.push(out, Op::Upsample2(x.0))
    }

    fn avg_pool2(&self, x: &NodeId) -> NodeId {
        let out = kernels::avg_pool2(&self.val(x.0));
        self.push(out, Op::AvgPool2(x.0))
    }

    fn concat(&self, parts: &[&NodeId]) -> NodeId {
        let vals: Vec<Arc<Tensor<T>>> = parts.iter().map(|p| self.val(p.0)).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| v.as_ref()).collect();
        let out = kernels::concat(&refs);
        self.push(out, Op::Concat(parts.iter().map(|p| p.0).collect()))
    }

    fn charbonnier_sum(&self, pred: &NodeId, target: &NodeId, eps: T) -> NodeId {
        let out = kernels::charbonnier_sum(&self.val(pred.0), &self.val(target.0), eps);
        self.push(
            out,
            Op::Charbonnier {
                pred: pred.0,
                target: target.0,
                eps,
            },
        )
    }

    fn scale(&self, x: &NodeId, s: T) -> NodeId {
        let out = self.val(x.0).map(|v| v * s);
        self.push(out, Op::Scale(x.0, s))
    }
}
