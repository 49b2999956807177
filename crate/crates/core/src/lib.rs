//! Desk-scale simulator for data-free, black-box federated learning in which
//! the server trains a conditional generator from zeroth-order gradient
//! estimates of client ensemble outputs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod comms;
pub mod datasets;
pub mod error;
pub mod federation;
pub mod gradcheck;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod tensor;
pub mod zo;

pub use error::{Error, Result};
pub use tensor::Tensor;
