//! Reverse-mode automatic differentiation over `[channels, time]` grids.
//!
//! The layer provides exactly the primitives the separator needs: grouped
//! causal 1-D convolution, transposed convolution, cumulative layer norm,
//! pointwise activations, concatenation/slicing, and the two training
//! losses. Forward kernels are plain functions on [`ValueGrid`]s so that
//! inference paths can call them without recording a tape; [`Graph`]
//! records them for [`Graph::backward`].

mod gradcheck;
mod graph;
mod grid;
pub mod ops;
mod params;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, GradCheckTarget};
pub use graph::{Gradients, Graph, NodeId};
pub use grid::ValueGrid;
pub use ops::ConvSpec;
pub use params::{
    constant_grid, init_conv_weight, init_tconv_weight, init_uniform, load_checkpoint,
    save_checkpoint, ParamEntry, ParamId, ParamStore,
};
