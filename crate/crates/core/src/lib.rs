//! Adam in its preconditioned and sign-like forms, with the numerical
//! machinery needed to check its convergence theory on synthetic problems.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and the
//! experiment orchestration live in `signadam-lab`.
//!
//! ```
//! use signadam_core::{optimizer::{AdamParams, AdamState, step_preconditioned}, Vector};
//!
//! let params = AdamParams::constant(0.001, 0.9, 0.999, 1e-8);
//! let mut state = AdamState::new(1);
//! let x = Vector::zeros(1);
//! let g = Vector::from_vec(vec![1.0]).unwrap();
//! let (x1, _) = step_preconditioned(&mut state, &params, &g, &x).unwrap();
//! assert!((x1[0] + 0.0031623).abs() < 1e-6);
//! ```

#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;
mod vector;

pub mod diagnostics;
pub mod optimizer;
pub mod problems;
pub mod rng;
pub mod schedules;
pub mod stats;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use stats::SampleStats;
pub use vector::{norm, Norm, Vector};
