//! Recorded computation graph for reverse-mode differentiation.
//!
//! Ops append nodes in execution order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::kernels;
use crate::dsp::{MelFilterbank, StftConfig};
use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use crate::Scalar;

pub type NodeId = usize;

/// ReLU backward behaviour.
///
/// `Guided` additionally zeroes negative upstream gradients at every ReLU,
/// on top of the usual input-sign gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReluMode {
    Standard,
    Guided,
}

enum Op<T: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Reshape(NodeId),
    MatMul(NodeId, NodeId),
    /// `[n, f] + [f]` row-broadcast bias.
    AddRowBias(NodeId, NodeId),
    Conv2d { x: NodeId, kernel: NodeId, bias: NodeId, stride: usize },
    Relu(NodeId),
    MaxPool2 { x: NodeId, argmax: Vec<u32> },
    GlobalMeanPool(NodeId),
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Tensor<T> },
    StftMag { x: NodeId, cfg: StftConfig, phase: Tensor<T> },
    LogMel { x: NodeId, fb: Arc<MelFilterbank<T>>, denom: Tensor<T> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only tape of primitive operations.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Registers an input tensor. Its gradient is retained by `backward`
    /// only when `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> NodeId {
        self.push(tensor, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).mul_elem(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let value = self.value(x).scale(factor);
        self.push(value, Op::Scale(x, factor))
    }

    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshape(dims)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if xv.rank() != 2 || bv.rank() != 1 || xv.cols() != bv.dims()[0] {
            return Err(CoreError::shape(format!(
                "row bias {:?} + {:?}",
                xv.dims(),
                bv.dims()
            )));
        }
        let cols = xv.cols();
        let mut value = xv.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % cols];
        }
        Ok(self.push(value, Op::AddRowBias(x, bias)))
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId, stride: usize) -> Result<NodeId> {
        let value = kernels::conv2d(self.value(x), self.value(kernel), self.value(bias), stride)?;
        Ok(self.push(value, Op::Conv2d { x, kernel, bias, stride }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x))
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (value, argmax) = kernels::maxpool2(self.value(x))?;
        Ok(self.push(value, Op::MaxPool2 { x, argmax }))
    }

    pub fn global_mean_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let value = kernels::global_mean_pool(self.value(x))?;
        Ok(self.push(value, Op::GlobalMeanPool(x)))
    }

    /// Scalar node holding the batch-mean cross-entropy loss.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> Result<NodeId> {
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits), &labels)?;
        let value = Tensor::from_vec(&[1], vec![loss])?;
        Ok(self.push(value, Op::SoftmaxCrossEntropy { logits, labels, probs }))
    }

    /// Magnitude spectrogram of a rank-1 signal; phase is kept for backward.
    pub fn stft_mag(&mut self, x: NodeId, cfg: &StftConfig) -> Result<NodeId> {
        let (mag, phase) = kernels::stft_mag(self.value(x), cfg)?;
        Ok(self.push(mag, Op::StftMag { x, cfg: *cfg, phase }))
    }

    pub fn log_mel(&mut self, x: NodeId, fb: Arc<MelFilterbank<T>>) -> Result<NodeId> {
        let (out, denom) = kernels::log_mel_aux(self.value(x), &fb)?;
        Ok(self.push(out, Op::LogMel { x, fb, denom }))
    }

    /// Reverse sweep from `output` with gradient `seed`.
    ///
    /// Returns one gradient slot per node (interior nodes keep theirs, so
    /// layer activations can be inspected); slots for leaves without
    /// `requires_grad` and for unreached nodes are `None`.
    pub fn backward(
        &self,
        output: NodeId,
        seed: Tensor<T>,
        mode: ReluMode,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        if output >= self.nodes.len() {
            return Err(CoreError::invalid("backward from unknown node"));
        }
        if seed.dims() != self.value(output).dims() {
            return Err(CoreError::shape(format!(
                "seed {:?} vs output {:?}",
                seed.dims(),
                self.value(output).dims()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[output] = Some(seed);

        // A node's gradient is complete once every consumer (all at higher
        // ids) has been processed, so one reverse sweep suffices.
        for id in (0..=output).rev() {
            let Some(g) = grads[id].clone() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    if !self.nodes[id].value.requires_grad {
                        grads[id] = None;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.mul_elem(self.value(*b))?;
                    let gb = g.mul_elem(self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(x, factor) => {
                    accumulate(&mut grads, *x, g.scale(*factor));
                }
                Op::Reshape(x) => {
                    accumulate(&mut grads, *x, g.reshape(self.value(*x).dims())?);
                }
                Op::MatMul(a, b) => {
                    let (ga, gb) = kernels::matmul_backward(&g, self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRowBias(x, bias) => {
                    let cols = self.value(*x).cols();
                    let mut gb = Tensor::zeros(&[cols]);
                    for (i, &v) in g.data().iter().enumerate() {
                        gb.data_mut()[i % cols] += v;
                    }
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Conv2d { x, kernel, bias, stride } => {
                    let (gx, gk, gb) =
                        kernels::conv2d_backward(&g, self.value(*x), self.value(*kernel), *stride);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *kernel, gk);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (gv, &inv) in gx.data_mut().iter_mut().zip(xv.data()) {
                        let gate_in = inv > T::zero();
                        let gate_up = mode == ReluMode::Standard || *gv > T::zero();
                        if !(gate_in && gate_up) {
                            *gv = T::zero();
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let gx = kernels::maxpool2_backward(&g, argmax, self.value(*x).dims());
                    accumulate(&mut grads, *x, gx);
                }
                Op::GlobalMeanPool(x) => {
                    let gx = kernels::global_mean_pool_backward(&g, self.value(*x).dims());
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let upstream = g.data()[0];
                    let gl = kernels::softmax_cross_entropy_backward(upstream, probs, labels);
                    accumulate(&mut grads, *logits, gl);
                }
                Op::StftMag { x, cfg, phase } => {
                    let len = self.value(*x).len();
                    let gx = kernels::stft_mag_vjp(&g, phase, cfg, len)?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::LogMel { x, fb, denom } => {
                    let gx = kernels::log_mel_vjp(&g, self.value(*x), denom, fb);
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => {
            *existing = existing.add(&g).expect("gradient shapes agree by construction");
        }
        slot @ None => *slot = Some(g),
    }
}
