//! SimCGNN: session-based next-item recommendation with a gated graph
//! neural network, normalized scoring and a same-last-item contrastive
//! objective.
//!
//! All model math runs on the small reverse-mode engine in [`autodiff`].

// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
