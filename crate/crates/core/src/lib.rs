//! Weight-tied multi-layer LSTM language models trained with past-decode
//! regularization (PDR) on top of the usual AWD-LSTM regularizers.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: tensors, the gradient tape and the finite-difference oracle.
//! * [`corpus`]: vocabularies, encoding, batching and BPTT windows.
//! * [`model`]: parameters, the PDR head, dropout and the training loss.
//! * [`optim`]: clipped SGD and NT-ASGD.
//! * [`eval`]: perplexity/BPC, continuous-cache scoring, histograms.
//! * [`harness`]: configuration, checkpoints, metrics and the train,
//!   eval, ablate and sweep commands.
//!
//! The guide in `book/` walks through each piece; its code listings are
//! compiled as doctests of this crate.

pub mod autodiff;
pub mod corpus;
mod error;
pub mod eval;
pub mod harness;
pub mod model;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
