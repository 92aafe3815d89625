//! Single depth-map super-resolution.
//!
//! A small convolutional network predicts a high-resolution depth estimate
//! and a depth-discontinuity map from a bilinearly upsampled input. Both
//! parametrize an anisotropic TGV2-L2 variational model that is minimized by
//! a fixed number of primal-dual iterations. The iteration is unrolled into
//! a differentiable graph so the network and all solver hyper-parameters can
//! be trained end-to-end on synthetically ray-cast depth data.

pub mod error;
pub mod field;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod net;
pub mod parallel;
pub mod pipeline;
pub mod render;
pub mod solver;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use field::Field2D;
