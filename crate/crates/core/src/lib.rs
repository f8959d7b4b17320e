//! Conditional generative sequence models with Gaussian latent variables,
//! trained under single- and multi-sample objectives (Monte-Carlo, CVAE,
//! many-sample log-average and best-of-many).

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity,
    clippy::too_many_arguments
)]

pub mod data;
pub mod error;
pub mod gradsuite;
pub mod latent;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Padding, RngStream, Tape, Tensor, Var};
