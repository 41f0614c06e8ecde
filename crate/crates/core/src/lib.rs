//! Behavioral malware signatures from sandbox logs.
//!
//! Logs become unigram presence vectors, a stack of denoising autoencoders
//! compresses them to 30-value signatures, and the signatures are scored
//! with k-NN, a linear SVM and a fine-tuned network. See the guide under
//! `book/` for a walkthrough.

pub mod classify;
pub mod cli;
pub mod corpus;
pub mod dbn;
pub mod embed;
pub mod error;
pub mod nncore;
pub mod rng;

pub use error::{Error, Result};

// the guide's code blocks run as doc-tests
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/autoencoders.md")]
    mod autoencoders {}
    #[doc = include_str!("../../../book/src/signatures.md")]
    mod signatures {}
    #[doc = include_str!("../../../book/src/classification.md")]
    mod classification {}
    #[doc = include_str!("../../../book/src/embedding.md")]
    mod embedding {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
