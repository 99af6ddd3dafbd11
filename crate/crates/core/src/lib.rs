//! Two-stage motion tracking for a planar biped: a residual-PD tracker trained
//! with asymmetric PPO over clustered reference motions, distilled into a
//! generalist, then fine-tuned for dynamics adaptation through a history
//! encoder, a dynamics-aware world model and a zero-initialized adapter.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adapt;
pub mod config;
pub mod distill;
pub mod error;
pub mod eval;
pub mod motions;
pub mod netcore;
pub mod physics;
pub mod pipeline;
pub mod tracker;

pub use error::{Error, Result};
