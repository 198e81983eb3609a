//! Minimal numeric foundation for the editing pipeline: dense tensors, a
//! fixed catalog of differentiable ops with tape-based reverse-mode
//! gradients, and Adam.
//!
//! Design constraints the rest of the workspace relies on:
//! - tensors are immutable once produced; clones share storage
//! - every reduction accumulates in a fixed sequential order, so identical
//!   inputs and seeds give bit-identical results on repeat runs
//! - `f32` is the working precision; the same generic ops instantiate at
//!   `f64` for finite-difference gradient checking

pub mod adam;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod threads;

pub use adam::{adam_update, Adam, AdamConfig, AdamParamState};
pub use element::{el, Element};
pub use error::{Result, TensorError};
pub use rng::{derive_seed, kaiming_tensor, randn_tensor, seeded_rng, uniform_tensor};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
