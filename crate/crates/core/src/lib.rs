//! Speculative decoding over table-based next-token models.
//!
//! Drafters propose confidence-ranked token trees, a target verifies them
//! losslessly, and several ways of combining two specialist drafters
//! (logit averaging, pre-verification routing, shared-root merged trees)
//! can be compared on acceptance length.

pub mod analysis;
pub mod decode;
pub mod error;
pub mod experiment;
pub mod merge;
pub mod models;
pub mod oracle;
pub mod router;
pub mod tree;
pub mod verify;

pub use error::{Error, Result};
