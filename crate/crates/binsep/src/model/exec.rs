//! Dual-mode executor so the architecture is defined once.
//!
//! Training records every op on a [`Graph`]; inference evaluates the same
//! sequence directly, letting intermediate buffers drop as their `Rc`
//! handles go out of scope. A full tape over a 10 s utterance would hold
//! gigabytes of activations, which is why the direct mode exists.

use crate::autodiff::ops::{self, ConvSpec};
use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, ValueGrid};
use crate::error::Result;
use std::rc::Rc;

#[derive(Clone)]
pub(crate) enum Tensor {
    Node(NodeId),
    Val(Rc<ValueGrid>),
}

impl Tensor {
    pub(crate) fn node_id(&self) -> NodeId {
        match self {
            Tensor::Node(id) => *id,
            Tensor::Val(_) => panic!("tensor is not on the tape"),
        }
    }
}

fn node(t: &Tensor) -> NodeId {
    t.node_id()
}

fn val(t: &Tensor) -> &ValueGrid {
    match t {
        Tensor::Val(v) => v,
        Tensor::Node(_) => panic!("tensor is not a direct value"),
    }
}

pub(crate) struct Exec<'a> {
    tape: Option<&'a mut Graph>,
    store: &'a ParamStore,
}

impl<'a> Exec<'a> {
    pub(crate) fn tape(store: &'a ParamStore, graph: &'a mut Graph) -> Self {
        Exec {
            tape: Some(graph),
            store,
        }
    }

    pub(crate) fn direct(store: &'a ParamStore) -> Self {
        Exec { tape: None, store }
    }

    /// Reads a tensor's current value regardless of mode.
    pub(crate) fn grid<'t>(&'t self, t: &'t Tensor) -> &'t ValueGrid {
        match t {
            Tensor::Node(id) => self.tape.as_ref().expect("tape mode").value(*id),
            Tensor::Val(v) => v,
        }
    }

    pub(crate) fn input(&mut self, grid: ValueGrid) -> Tensor {
        match &mut self.tape {
            Some(g) => Tensor::Node(g.input(grid)),
            None => Tensor::Val(Rc::new(grid)),
        }
    }

    pub(crate) fn param(&mut self, id: ParamId) -> Tensor {
        match &mut self.tape {
            Some(g) => Tensor::Node(g.param(self.store, id)),
            None => Tensor::Val(Rc::new(self.store.get(id).clone())),
        }
    }

    pub(crate) fn conv1d(
        &mut self,
        x: &Tensor,
        w: &Tensor,
        bias: Option<&Tensor>,
        spec: ConvSpec,
    ) -> Result<Tensor> {
        match &mut self.tape {
            Some(g) => Ok(Tensor::Node(g.conv1d(
                node(x),
                node(w),
                bias.map(node),
                spec,
            )?)),
            None => Ok(Tensor::Val(Rc::new(ops::conv1d_forward(
                val(x),
                val(w),
                bias.map(val),
                &spec,
            )?))),
        }
    }

    pub(crate) fn transposed_conv1d(
        &mut self,
        x: &Tensor,
        w: &Tensor,
        stride: usize,
        kernel: usize,
    ) -> Result<Tensor> {
        match &mut self.tape {
            Some(g) => Ok(Tensor::Node(g.transposed_conv1d(
                node(x),
                node(w),
                stride,
                kernel,
            )?)),
            None => Ok(Tensor::Val(Rc::new(ops::tconv1d_forward(
                val(x),
                val(w),
                stride,
                kernel,
            )?))),
        }
    }

    pub(crate) fn cum_layer_norm(
        &mut self,
        x: &Tensor,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor> {
        match &mut self.tape {
            Some(g) => Ok(Tensor::Node(g.cum_layer_norm(
                node(x),
                node(gain),
                node(bias),
                eps,
            )?)),
            None => Ok(Tensor::Val(Rc::new(ops::cln_forward(
                val(x),
                val(gain),
                val(bias),
                eps,
            )?))),
        }
    }

    pub(crate) fn prelu(&mut self, x: &Tensor, slope: &Tensor) -> Result<Tensor> {
        match &mut self.tape {
            Some(g) => Ok(Tensor::Node(g.prelu(node(x), node(slope))?)),
            None => Ok(Tensor::Val(Rc::new(ops::prelu_forward(
                val(x),
                val(slope),
            )?))),
        }
    }

    pub(crate) fn sigmoid(&mut self, x: &Tensor) -> Tensor {
        match &mut self.tape {
            Some(g) => Tensor::Node(g.sigmoid(node(x))),
            None => Tensor::Val(Rc::new(ops::sigmoid_forward(val(x)))),
        }
    }

    pub(crate) fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        match &mut self.tape {
            Some(g) => Ok(Tensor::Node(g.add(node(a), node(b))?)),
            None => {
                let mut out = val(a).clone();
                out.add_assign(val(b))?;
                Ok(Tensor::Val(Rc::new(out)))
            }
        }
    }

    pub(crate) fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        match &mut self.tape {
            Some(g) => Ok(Tensor::Node(g.mul(node(a), node(b))?)),
            None => {
                let (av, bv) = (val(a), val(b));
                if av.shape() != bv.shape() {
                    return Err(crate::error::Error::shape("mul: operand shapes differ"));
                }
                let mut out = av.clone();
                for (v, &bvx) in out.data.iter_mut().zip(&bv.data) {
                    *v *= bvx;
                }
                Ok(Tensor::Val(Rc::new(out)))
            }
        }
    }

    pub(crate) fn concat_channels(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        match &mut self.tape {
            Some(g) => {
                let ids: Vec<NodeId> = parts.iter().map(|t| node(t)).collect();
                Ok(Tensor::Node(g.concat_channels(&ids)?))
            }
            None => {
                let grids: Vec<&ValueGrid> = parts.iter().map(|t| val(t)).collect();
                let time = grids[0].time;
                if grids.iter().any(|g| g.time != time) {
                    return Err(crate::error::Error::shape("concat: frame counts differ"));
                }
                let channels = grids.iter().map(|g| g.channels).sum();
                let mut out = ValueGrid::zeros(channels, time);
                let mut row = 0;
                for g in grids {
                    for c in 0..g.channels {
                        out.row_mut(row).copy_from_slice(g.row(c));
                        row += 1;
                    }
                }
                Ok(Tensor::Val(Rc::new(out)))
            }
        }
    }

    pub(crate) fn slice_channels(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        match &mut self.tape {
            Some(g) => Ok(Tensor::Node(g.slice_channels(node(x), start, len)?)),
            None => {
                let src = val(x);
                if start + len > src.channels {
                    return Err(crate::error::Error::shape("slice: out of range"));
                }
                let mut out = ValueGrid::zeros(len, src.time);
                for c in 0..len {
                    out.row_mut(c).copy_from_slice(src.row(start + c));
                }
                Ok(Tensor::Val(Rc::new(out)))
            }
        }
    }
}
