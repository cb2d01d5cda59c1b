//! Executable reference semantics for neural-network layer graphs.
//!
//! * [`tensor`]: dense `f64` tensors and shape algebra.
//! * [`ir`]: the layer graph shared by everything else.
//! * [`semantics`]: what each layer must compute.
//! * [`validator`]: layer preconditions, violation codes and badness values.
//! * [`fuzz`]: random layer trees repaired into valid models by badness feedback.
//! * [`compare`]: tolerance policies and verdicts for differential runs.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod compare;
pub mod fuzz;
pub mod ir;
pub mod rng;
pub mod semantics;
pub mod tensor;
pub mod validator;

pub use ir::{Bindings, EvalTrace, InputSpec, KindTag, LayerKind, LayerNode, ModelGraph};
pub use tensor::{Shape, Tensor};
pub use validator::{ErrorCode, PrecondViolation};
