//! Neural building blocks with explicit forward caches and hand-written
//! backward passes.
//!
//! Everything is generic over the element type so that training runs in f32
//! while gradient checks run in f64 against central finite differences.

pub mod adamw;
pub mod attention;
pub mod conv;
pub mod heads;
pub mod linear;
pub mod norm;
pub mod ops;
pub mod param;
pub mod regularize;
pub mod resnet;
pub mod vit;

pub use ops::{lit, Elem};
pub use param::{Grads, Param, ParamId, ParamStore};

/// Whether stochastic layers (dropout, drop path) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
