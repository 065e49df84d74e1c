//! Modular neural-field rendering, fitting and evaluation.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod decoder;
pub mod embedder;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod renderer;
pub mod rng;
pub mod scene;
pub mod upsampler;

pub use autodiff::{Tape, Tensor};
pub use error::{Error, Result};
pub use params::Parameterized;
