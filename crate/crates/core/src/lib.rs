//! Randomized in-place bit-flipping (RIP-BF) decoding for QC-LDPC/QC-MDPC
//! codes, the ensemble worst-case DFR model, the code-specific conservative
//! DFR bound, and a Monte-Carlo harness that checks both.

pub mod bound;
pub mod code;
pub mod decoder;
pub mod error;
pub mod model;
pub mod numerics;
pub mod sim;

pub use error::{Error, Result};
