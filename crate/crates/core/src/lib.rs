//! Layout-aware document chunking, grounded study-question generation and
//! short-answer grading evaluation.
//!
//! The pipeline stages hand off through files: blocks and detector output
//! become typed blocks, typed blocks become chunks, chunks get topics,
//! topical chunks get questions and reference answers. Independently, the
//! grading benchmark normalizes datasets, runs graders and scores them.

pub mod chunking;
pub mod classification;
pub mod docmodel;
pub mod error;
pub mod grading;
pub mod http;
pub mod layout;
mod parallel;
pub mod qagen;
pub mod topics;

pub use error::{Error, ProviderError, Result};
