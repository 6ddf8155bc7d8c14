//! Dilated convolutional attention network (DCAN) for multi-label
//! classification of long token sequences.
//!
//! The crate is organised bottom-up: [`numcore`] provides tensors and
//! reverse-mode differentiation, [`model`] composes them into the network,
//! [`training`] fits it, and [`textpipe`], [`data`] and [`metrics`] cover the
//! surrounding pipeline.

pub mod error;
pub mod numcore;

pub use error::{Error, Result};
pub mod data;
pub mod metrics;
pub mod model;
pub mod textpipe;
pub mod training;
