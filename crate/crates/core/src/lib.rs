//! Model-based momentum optimizers with Polyak-type adaptive step sizes.
//!
//! The [`model`] module holds the momentum model and its closed-form
//! proximal steps, [`lowerbound`] the online estimate of the optimal loss,
//! and [`optimizers`] the steppers built on both. [`problems`] provides
//! deterministic test problems, [`oracle`] brute-force references, and
//! [`harness`] training loops, sweeps and CSV output.

// `!(x > 0.0)` is used throughout so that NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod lowerbound;
pub mod model;
pub mod optimizers;
pub mod oracle;
pub mod problems;
pub mod vecops;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/prox.md")]
    mod prox {}
    #[doc = include_str!("../../../book/src/lower-bounds.md")]
    mod lower_bounds {}
    #[doc = include_str!("../../../book/src/optimizers.md")]
    mod optimizers {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
