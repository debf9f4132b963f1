//! Mean-field variational inference over conditionally conjugate exponential
//! family models.
//!
//! The crate is `no_std` (with `alloc`) so the numeric core can be embedded
//! anywhere; file formats, timing and the command line live in the
//! `meanfield-cli` companion crate.
//!
//! Layout:
//! - [`expfam`]: special functions and exponential-family factors.
//! - [`engine`]: the coordinate-ascent driver, fit reports and the bivariate
//!   Gaussian mean-field diagnostic.
//! - [`condconj`]: the global/local model contract and stochastic
//!   natural-gradient optimization on top of it.
//! - [`gmm`], [`blr_ard`], [`lda`]: the built-in models.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod blr_ard;
pub mod condconj;
pub mod data;
pub mod engine;
mod error;
pub mod expfam;
pub mod gmm;
pub mod lda;
pub mod linalg;
mod mathf;

pub use error::{Error, Result};
