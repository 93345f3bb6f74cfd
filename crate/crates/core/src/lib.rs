//! Relation extraction models and tooling that only need an allocator.
//!
//! Everything here is deterministic given a seed: tensors are `f64`, maps are
//! ordered and randomness comes from explicitly passed ChaCha generators.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod hegcn;
pub mod joint;
pub mod mfa;
pub mod mhred;
pub mod wdec;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pndec;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{ParamId, ParameterStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
