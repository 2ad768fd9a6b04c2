//! Knowledge-augmented language model: a small attention network that fuses
//! retrieved knowledge fragments into token representations and explains its
//! predictions through attention chains.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod explain;
pub mod knowledge;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod reasoner;
pub mod sweep;
pub mod synth;
pub mod text;
pub mod train;

pub use error::{Error, Result};
