//! Session sequencing with a set-encoder relevance model and a multi-objective beam-search decoder.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod datagen;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod featurizer;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/set-encoder.md")]
    mod set_encoder {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
