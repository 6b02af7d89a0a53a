//! Allocation-only core of the CasTemp information-cascade toolkit.
//!
//! Everything in this crate is a pure function of in-memory data: event
//! stores, leak-free splits, competition graphs, temporal-walk sequences, the
//! encoder/predictor stack with its reverse-mode gradients, training and
//! metrics. File formats, timing and the command line live in the `castemp`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod audit;
pub mod compgraph;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod math;
pub mod metrics;
pub mod model;
pub mod params;
pub mod precompute;
pub mod predictor;
pub mod sequences;
pub mod splitter;
pub mod store;
pub mod synth;
pub mod tape;
pub mod toygen;
pub mod trainer;

pub use error::{Error, Result};
pub use store::{CascadeId, CascadeStore, PromoterId, StoreBuilder, UserId};
