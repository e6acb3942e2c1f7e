//! Learned sparse retrieval core.
//!
//! Everything in this crate is pure computation over in-memory data and builds
//! under `no_std` with `alloc`: sparse vector algebra, the term-importance
//! encoder and its gradients, ranking losses with the FLOPS regularizer,
//! hard-negative mining, the training loop, an exact inverted index, BM25,
//! evaluation metrics, and the synthetic benchmark generator.
//!
//! File formats, the CLI and thread-level parallelism live in the `lsr` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod datagen;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod lexical;
pub mod mining;
pub mod objectives;
pub mod sparse;
pub mod trainer;
pub mod types;

mod math;

pub use error::{Error, Result};
pub use sparse::SparseVec;
pub use types::{Collection, Document, Qrels, Query, RunList, Text, TripletRecord, Vocab};
