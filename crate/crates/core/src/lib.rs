//! Rank certification for partially observed low-rank matrices and tensors.
//!
//! The crate turns a sampling pattern into the binary constraint structures
//! of the finite-completability conditions, decides those conditions, and
//! reports which ranks a completion can certify as upper bounds on the
//! unknown true rank.

pub mod completion;
pub mod cli;
pub mod constraints;
pub mod deterministic;
pub mod error;
pub mod patterns;
pub mod probabilistic;
pub mod rank;
pub mod rng;

pub use error::{Error, Result};
pub use patterns::{ObservedData, SamplingPattern};
pub use rank::{Model, RankSpec};
