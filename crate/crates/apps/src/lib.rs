//! Benchmark applications for the psac engine.
//!
//! Each app owns its input cells and a seeded random source, can run its
//! self-adjusting program over the current input, apply a batch of input
//! changes, and compute the expected output with a plain sequential
//! algorithm.

mod contraction;
pub mod filter_bst;
mod harness;
pub mod list_contraction;
pub mod reader_stress;
mod reduce;
pub mod spellcheck;
pub mod string_hash;
pub mod sum;
pub mod tree_contraction;

pub use filter_bst::FilterBst;
pub use harness::{checked_update, App, AppError, BenchmarkSpec, Instance, UpdateCheck};
pub use list_contraction::ListContraction;
pub use reader_stress::ReaderStress;
pub use spellcheck::Spellcheck;
pub use string_hash::StringHash;
pub use sum::Sum;
pub use tree_contraction::TreeContraction;
