//! Eager tape. Every builder method runs the forward kernel immediately,
//! stores the result, and records which nodes fed it; [`Graph::backward`]
//! walks the tape in reverse insertion order, which is a valid reverse
//! topological order because an op can only consume already-built nodes.

use super::grid::ValueGrid;
use super::ops::{self, ConvSpec};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use std::collections::HashMap;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param {
        param: ParamId,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
    },
    TConv1d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        kernel: usize,
    },
    CumLayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    PRelu {
        x: NodeId,
        slope: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    ConcatChannels {
        parts: Vec<NodeId>,
    },
    SliceChannels {
        x: NodeId,
        start: usize,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    SumAll {
        x: NodeId,
    },
    /// Losses treat the reference as a constant: no gradient flows into it.
    NegSnrLoss {
        est: NodeId,
        reference: NodeId,
    },
    NegSiSdrLoss {
        est: NodeId,
        reference: NodeId,
    },
    /// Identity forward whose backward multiplies the incoming gradient by
    /// a wrong factor. Exists so gradient-checker tests can prove they
    /// detect a broken adjoint; never part of a real model.
    TamperedIdentity {
        x: NodeId,
        grad_factor: f64,
    },
}

struct Node {
    op: Op,
    value: ValueGrid,
}

/// Gradients produced by one backward pass: per-parameter accumulations
/// plus gradients for inputs that were created with `requires_grad`.
pub struct Gradients {
    params: Vec<Option<ValueGrid>>,
    inputs: HashMap<NodeId, ValueGrid>,
}

impl Gradients {
    fn new(n_params: usize) -> Self {
        Gradients {
            params: (0..n_params).map(|_| None).collect(),
            inputs: HashMap::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&ValueGrid> {
        self.params.get(id).and_then(|g| g.as_ref())
    }

    pub fn input(&self, node: NodeId) -> Option<&ValueGrid> {
        self.inputs.get(&node)
    }

    pub fn param_iter(&self) -> impl Iterator<Item = (ParamId, &ValueGrid)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (i, g)))
    }

    /// L2 norm over every parameter gradient entry, for global clipping.
    pub fn global_norm(&self) -> f64 {
        self.param_iter()
            .flat_map(|(_, g)| g.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_params(&mut self, factor: f64) {
        for g in self.params.iter_mut().flatten() {
            for v in &mut g.data {
                *v *= factor;
            }
        }
    }

    /// Adds another pass's parameter gradients (batch accumulation).
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::shape("gradient accumulate: store size mismatch"));
        }
        for (slot, g) in self.params.iter_mut().zip(&other.params) {
            if let Some(g) = g {
                match slot {
                    Some(s) => s.add_assign(g)?,
                    None => *slot = Some(g.clone()),
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.param_iter().all(|(_, g)| g.is_finite())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    n_params_seen: usize,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &ValueGrid {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: ValueGrid) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    /// Registers a constant (or, with `requires_grad` set on the grid, a
    /// differentiable) input.
    pub fn input(&mut self, value: ValueGrid) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Registers a parameter leaf. Repeated calls with the same id return
    /// the same node, so weight sharing across passes needs no extra
    /// bookkeeping: gradients from every use accumulate into one slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        self.n_params_seen = self.n_params_seen.max(id + 1);
        let node = self.push(Op::Param { param: id }, store.get(id).clone());
        self.param_nodes.insert(id, node);
        node
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let value = ops::conv1d_forward(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            &spec,
        )?;
        Ok(self.push(Op::Conv1d { x, w, bias, spec }, value))
    }

    pub fn transposed_conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        kernel: usize,
    ) -> Result<NodeId> {
        let value = ops::tconv1d_forward(self.value(x), self.value(w), stride, kernel)?;
        Ok(self.push(
            Op::TConv1d {
                x,
                w,
                stride,
                kernel,
            },
            value,
        ))
    }

    pub fn cum_layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let value = ops::cln_forward(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(Op::CumLayerNorm { x, gain, bias, eps }, value))
    }

    pub fn prelu(&mut self, x: NodeId, slope: NodeId) -> Result<NodeId> {
        let value = ops::prelu_forward(self.value(x), self.value(slope))?;
        Ok(self.push(Op::PRelu { x, slope }, value))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = ops::sigmoid_forward(self.value(x));
        self.push(Op::Sigmoid { x }, value)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = ops::relu_forward(self.value(x));
        self.push(Op::Relu { x }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape("add: operand shapes differ"));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b))?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape("mul: operand shapes differ"));
        }
        let mut value = self.value(a).clone();
        for (v, &bv) in value.data.iter_mut().zip(&self.value(b).data) {
            *v *= bv;
        }
        Ok(self.push(Op::Mul { a, b }, value))
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat: no parts"));
        }
        let time = self.value(parts[0]).time;
        if parts.iter().any(|&p| self.value(p).time != time) {
            return Err(Error::shape("concat: frame counts differ"));
        }
        let channels = parts.iter().map(|&p| self.value(p).channels).sum();
        let mut value = ValueGrid::zeros(channels, time);
        let mut row = 0;
        for &p in parts {
            for c in 0..self.value(p).channels {
                value.row_mut(row).copy_from_slice(self.value(p).row(c));
                row += 1;
            }
        }
        Ok(self.push(
            Op::ConcatChannels {
                parts: parts.to_vec(),
            },
            value,
        ))
    }

    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let src = self.value(x);
        if start + len > src.channels || len == 0 {
            return Err(Error::shape(format!(
                "slice: rows {start}..{} out of {} channels",
                start + len,
                src.channels
            )));
        }
        let mut value = ValueGrid::zeros(len, src.time);
        for c in 0..len {
            value.row_mut(c).copy_from_slice(src.row(start + c));
        }
        Ok(self.push(Op::SliceChannels { x, start }, value))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let mut value = self.value(x).clone();
        for v in &mut value.data {
            *v *= factor;
        }
        self.push(Op::Scale { x, factor }, value)
    }

    /// Reduces a grid to a `[1, 1]` scalar by summing every entry.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data.iter().sum();
        self.push(Op::SumAll { x }, ValueGrid::scalar(s))
    }

    pub fn neg_snr_loss(&mut self, est: NodeId, reference: NodeId) -> Result<NodeId> {
        let v = ops::neg_snr_loss_forward(self.value(est), self.value(reference))?;
        Ok(self.push(Op::NegSnrLoss { est, reference }, ValueGrid::scalar(v)))
    }

    pub fn neg_si_sdr_loss(&mut self, est: NodeId, reference: NodeId) -> Result<NodeId> {
        let v = ops::neg_si_sdr_loss_forward(self.value(est), self.value(reference))?;
        Ok(self.push(Op::NegSiSdrLoss { est, reference }, ValueGrid::scalar(v)))
    }

    /// See [`Op::TamperedIdentity`]; only gradient-checker tests use this.
    pub fn tampered_identity(&mut self, x: NodeId, grad_factor: f64) -> NodeId {
        let value = self.value(x).clone();
        self.push(Op::TamperedIdentity { x, grad_factor }, value)
    }

    /// Reverse pass from a scalar loss node. Node gradients are dropped as
    /// soon as they have been propagated, so peak memory is one gradient
    /// grid per still-pending node rather than one per node.
    pub fn backward(&self, loss: NodeId, store: &ParamStore) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape("backward: loss node must be [1, 1]"));
        }
        let mut node_grads: Vec<Option<ValueGrid>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss] = Some(ValueGrid::scalar(1.0));
        let mut out = Gradients::new(store.len().max(self.n_params_seen));
        for i in (0..=loss).rev() {
            let Some(gy) = node_grads[i].take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Input => {
                    if self.nodes[i].value.requires_grad {
                        out.inputs.insert(i, gy);
                    }
                }
                Op::Param { param } => match &mut out.params[param] {
                    Some(g) => g.add_assign(&gy)?,
                    slot @ None => *slot = Some(gy),
                },
                Op::Conv1d { x, w, bias, spec } => {
                    let (gx, gw, gb) = ops::conv1d_backward(
                        self.value(x),
                        self.value(w),
                        &gy,
                        &spec,
                        bias.is_some(),
                    )?;
                    accum(&mut node_grads[x], gx)?;
                    accum(&mut node_grads[w], gw)?;
                    if let (Some(b), Some(gb)) = (bias, gb) {
                        accum(&mut node_grads[b], gb)?;
                    }
                }
                Op::TConv1d {
                    x,
                    w,
                    stride,
                    kernel,
                } => {
                    let (gx, gw) =
                        ops::tconv1d_backward(self.value(x), self.value(w), &gy, stride, kernel)?;
                    accum(&mut node_grads[x], gx)?;
                    accum(&mut node_grads[w], gw)?;
                }
                Op::CumLayerNorm { x, gain, bias, eps } => {
                    let (gx, gg, gb) =
                        ops::cln_backward(self.value(x), self.value(gain), &gy, eps)?;
                    accum(&mut node_grads[x], gx)?;
                    accum(&mut node_grads[gain], gg)?;
                    accum(&mut node_grads[bias], gb)?;
                }
                Op::PRelu { x, slope } => {
                    let (gx, gs) = ops::prelu_backward(self.value(x), self.value(slope), &gy)?;
                    accum(&mut node_grads[x], gx)?;
                    accum(&mut node_grads[slope], gs)?;
                }
                Op::Sigmoid { x } => {
                    let gx = ops::sigmoid_backward(&self.nodes[i].value, &gy);
                    accum(&mut node_grads[x], gx)?;
                }
                Op::Relu { x } => {
                    let gx = ops::relu_backward(self.value(x), &gy);
                    accum(&mut node_grads[x], gx)?;
                }
                Op::Add { a, b } => {
                    accum(&mut node_grads[a], gy.clone())?;
                    accum(&mut node_grads[b], gy)?;
                }
                Op::Mul { a, b } => {
                    let mut ga = gy.clone();
                    for (g, &bv) in ga.data.iter_mut().zip(&self.value(b).data) {
                        *g *= bv;
                    }
                    let mut gb = gy;
                    for (g, &av) in gb.data.iter_mut().zip(&self.value(a).data) {
                        *g *= av;
                    }
                    accum(&mut node_grads[a], ga)?;
                    accum(&mut node_grads[b], gb)?;
                }
                Op::ConcatChannels { parts } => {
                    let mut row = 0;
                    for &p in &parts {
                        let c = self.value(p).channels;
                        let mut gp = ValueGrid::zeros(c, gy.time);
                        for cc in 0..c {
                            gp.row_mut(cc).copy_from_slice(gy.row(row + cc));
                        }
                        row += c;
                        accum(&mut node_grads[p], gp)?;
                    }
                }
                Op::SliceChannels { x, start } => {
                    let src = self.value(x);
                    let mut gx = ValueGrid::zeros(src.channels, src.time);
                    for c in 0..gy.channels {
                        gx.row_mut(start + c).copy_from_slice(gy.row(c));
                    }
                    accum(&mut node_grads[x], gx)?;
                }
                Op::Scale { x, factor } => {
                    let mut gx = gy;
                    for v in &mut gx.data {
                        *v *= factor;
                    }
                    accum(&mut node_grads[x], gx)?;
                }
                Op::SumAll { x } => {
                    let g = gy.at(0, 0);
                    let src = self.value(x);
                    let mut gx = ValueGrid::zeros(src.channels, src.time);
                    gx.fill(g);
                    accum(&mut node_grads[x], gx)?;
                }
                Op::NegSnrLoss { est, reference } => {
                    let gx = ops::neg_snr_loss_backward(
                        self.value(est),
                        self.value(reference),
                        gy.at(0, 0),
                    )?;
                    accum(&mut node_grads[est], gx)?;
                }
                Op::NegSiSdrLoss { est, reference } => {
                    let gx = ops::neg_si_sdr_loss_backward(
                        self.value(est),
                        self.value(reference),
                        gy.at(0, 0),
                    )?;
                    accum(&mut node_grads[est], gx)?;
                }
                Op::TamperedIdentity { x, grad_factor } => {
                    let mut gx = gy;
                    for v in &mut gx.data {
                        *v *= grad_factor;
                    }
                    accum(&mut node_grads[x], gx)?;
                }
            }
        }
        Ok(out)
    }
}

fn accum(slot: &mut Option<ValueGrid>, g: ValueGrid) -> Result<()> {
    match slot {
        Some(s) => s.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
