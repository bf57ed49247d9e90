//! Event-driven limit order book simulation, with tools for identifying
//! trader types from their order flow.
//!
//! The guide under `book/` walks through each module; its snippets are
//! compiled as doc-tests of this crate.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod cluster;
pub mod diagnostics;
pub mod eventlog;
pub mod experiment;
pub mod features;
pub mod kernel;
pub mod matching;
pub mod scenario;
pub mod svm;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/order-book.md")]
    mod order_book {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/classification.md")]
    mod classification {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/reproduction.md")]
    mod reproduction {}
}
