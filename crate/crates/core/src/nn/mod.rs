//! Minimal tensor autodiff engine: tape, convolution kernels, layers and Adam.

pub mod conv;
pub mod graph;
pub mod layers;
pub mod ops;
pub mod optim;

pub use conv::ConvGeom;
pub use graph::{Gradients, Graph, Var};
pub use layers::{BatchNorm2d, Bound, Conv2d, ConvTranspose2d, Ctx, Dropout, Param, ParamId, ParamKind, ParamStore};
pub use ops::FlipAxis;
pub use optim::{Adam, AdamConfig};
