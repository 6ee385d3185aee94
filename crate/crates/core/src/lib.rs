//! One-shot network-width search with a bilaterally coupled supernet.
//!
//! The crate trains a dense-layer supernet whose shared weights evaluate any
//! sub-width through two coupled paths (leftmost-c and rightmost-c channels),
//! keeps every channel's training degree equal via complementary width pairs,
//! learns per-layer sampling distributions from the lowest-loss widths seen
//! during training, and searches the width space under a hard FLOPs budget
//! with a constrained multi-objective evolutionary loop. Brute-force oracles
//! for every nontrivial piece live in [`oracle`] and back both the test suite
//! and the `analyze` command of the companion CLI.

pub mod dataset;
pub mod error;
pub mod evo;
pub mod flops;
pub mod oracle;
pub mod pips;
pub mod rng;
pub mod space;
pub mod supernet;

pub use error::{Error, Result};
