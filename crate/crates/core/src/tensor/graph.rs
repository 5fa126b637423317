use std::collections::BTreeMap;

use super::{Float, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T> {
    Input,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBroadcast(Var, Var),
    MatMul(Var, Var),
    TransposeLast2(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: (usize, usize),
    },
    AvgPool {
        x: Var,
        len: usize,
        stride: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Elu(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        // [batch, heads, n, n]
        probs: Vec<T>,
    },
    WeightedSqError {
        pred: Var,
        target: Var,
        weights: Vec<T>,
    },
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    ConcatRows(Var, Var),
    GatherRows {
        x: Var,
        index: Vec<Option<usize>>,
    },
    Sum(Var),
    Mean(Var),
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Operation tape. Nodes are appended in evaluation order, so reverse index
/// order is a valid topological order for the backward sweep.
pub struct Graph<T: Float> {
    pub(crate) nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Leaf that receives a gradient (used for checking input gradients).
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Pulls a named parameter onto the tape. Repeated calls return the same
    /// node. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let v = self.push(p.value.clone(), Op::Param, p.trainable);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Same value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Shape {
                shape: root.value.shape().to_vec(),
                reason: "backward needs a scalar output".into(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let nodes = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(self.nodes[i].value.shape(), g).expect("grad shape")))
            .collect();
        Ok(Gradients {
            nodes,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: &[T]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(buf) => {
                for (b, &c) in buf.iter_mut().zip(contrib) {
                    *b += c;
                }
            }
            slot @ None => *slot = Some(contrib.to_vec()),
        }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        use super::ops::kernels as k;

        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                if self.needs(*b) {
                    let neg: Vec<T> = g.iter().map(|&x| -x).collect();
                    self.accumulate(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d: Vec<T> = g.iter().zip(val(*b).data()).map(|(&g, &y)| g * y).collect();
                    self.accumulate(grads, *a, &d);
                }
                if self.needs(*b) {
                    let d: Vec<T> = g.iter().zip(val(*a).data()).map(|(&g, &x)| g * x).collect();
                    self.accumulate(grads, *b, &d);
                }
            }
            Op::Scale(a, s) => {
                let d: Vec<T> = g.iter().map(|&x| x * *s).collect();
                self.accumulate(grads, *a, &d);
            }
            Op::AddBroadcast(x, y) => {
                self.accumulate(grads, *x, g);
                if self.needs(*y) {
                    let n = val(*y).numel();
                    let mut d = vec![T::zero(); n];
                    for chunk in g.chunks(n) {
                        for (o, &c) in d.iter_mut().zip(chunk) {
                            *o += c;
                        }
                    }
                    self.accumulate(grads, *y, &d);
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, kk, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.needs(*a) {
                    let d = k::matmul_nt(g, bv.data(), m, n, kk);
                    self.accumulate(grads, *a, &d);
                }
                if self.needs(*b) {
                    let d = k::matmul_tn(av.data(), g, m, kk, n);
                    self.accumulate(grads, *b, &d);
                }
            }
            Op::TransposeLast2(x) => {
                let s = node.value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let d = k::transpose_last2(g, r, c);
                self.accumulate(grads, *x, &d);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g),
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
            } => {
                let geom = k::ConvGeom::new(val(*x).shape(), val(*kernel).shape(), *stride)
                    .expect("validated in forward");
                if self.needs(*x) {
                    let d = geom.backward_input(g, val(*kernel).data());
                    self.accumulate(grads, *x, &d);
                }
                if self.needs(*kernel) {
                    let d = geom.backward_kernel(g, val(*x).data());
                    self.accumulate(grads, *kernel, &d);
                }
                if let Some(b) = bias {
                    if self.needs(*b) {
                        let d = geom.backward_bias(g);
                        self.accumulate(grads, *b, &d);
                    }
                }
            }
            Op::AvgPool { x, len, stride } => {
                let xs = val(*x).shape();
                let w = *xs.last().unwrap();
                let d = k::avg_pool_backward(g, val(*x).numel(), w, *len, *stride);
                self.accumulate(grads, *x, &d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gm = val(*gamma).data();
                let (dx, dg, db) = k::layer_norm_backward(g, xhat, inv_std, gm);
                self.accumulate(grads, *x, &dx);
                self.accumulate(grads, *gamma, &dg);
                self.accumulate(grads, *beta, &db);
            }
            Op::Gelu(x) => {
                let d: Vec<T> = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&g, &x)| g * k::gelu_grad(x))
                    .collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Elu(x) => {
                let d: Vec<T> = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&g, &x)| if x > T::zero() { g } else { g * x.exp() })
                    .collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Attention {
                q,
                k: kv,
                v,
                heads,
                probs,
            } => {
                let (dq, dk, dv) = k::attention_backward(
                    g,
                    val(*q).data(),
                    val(*kv).data(),
                    val(*v).data(),
                    val(*q).shape(),
                    *heads,
                    probs,
                );
                self.accumulate(grads, *q, &dq);
                self.accumulate(grads, *kv, &dk);
                self.accumulate(grads, *v, &dv);
            }
            Op::WeightedSqError {
                pred,
                target,
                weights,
            } => {
                let (p, t) = (val(*pred).data(), val(*target).data());
                let width = p.len() / weights.len();
                let two = T::of(2.0);
                let d: Vec<T> = p
                    .iter()
                    .zip(t)
                    .enumerate()
                    .map(|(idx, (&p, &t))| two * weights[idx / width] * (p - t) * g[0])
                    .collect();
                self.accumulate(grads, *pred, &d);
                if self.needs(*target) {
                    let neg: Vec<T> = d.iter().map(|&x| -x).collect();
                    self.accumulate(grads, *target, &neg);
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let scale = T::of(2.0) / T::of(av.len() as f64) * g[0];
                let d: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| scale * (x - y)).collect();
                self.accumulate(grads, *a, &d);
                if self.needs(*b) {
                    let neg: Vec<T> = d.iter().map(|&x| -x).collect();
                    self.accumulate(grads, *b, &neg);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = probs.len() / labels.len();
                let scale = g[0] / T::of(labels.len() as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * classes + l] -= scale;
                }
                self.accumulate(grads, *logits, &d);
            }
            Op::ConcatRows(a, b) => {
                let n = val(*a).numel();
                self.accumulate(grads, *a, &g[..n]);
                self.accumulate(grads, *b, &g[n..]);
            }
            Op::GatherRows { x, index } => {
                if self.needs(*x) {
                    let xv = val(*x);
                    let width = xv.shape()[1];
                    let mut d = vec![T::zero(); xv.numel()];
                    for (r, src) in index.iter().enumerate() {
                        if let Some(s) = src {
                            let dst = &mut d[s * width..(s + 1) * width];
                            for (o, &c) in dst.iter_mut().zip(&g[r * width..(r + 1) * width]) {
                                *o += c;
                            }
                        }
                    }
                    self.accumulate(grads, *x, &d);
                }
            }
            Op::Sum(x) => {
                let d = vec![g[0]; val(*x).numel()];
                self.accumulate(grads, *x, &d);
            }
            Op::Mean(x) => {
                let n = val(*x).numel();
                let d = vec![g[0] / T::of(n as f64); n];
                self.accumulate(grads, *x, &d);
            }
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Var>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of the loss w.r.t. any recorded node, if it required one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).and_then(|&v| self.wrt(v))
    }

    /// Parameter gradients in name order.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|(name, &v)| self.wrt(v).map(|g| (name.as_str(), g)))
    }
}
