//! File formats, the end-to-end pipeline and the command-line front end for
//! `castemp-core`.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod graphfile;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod seqfile;

pub use error::{Error, Result};
