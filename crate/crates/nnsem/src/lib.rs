//! Files, processes and the command line around `nnsem-core`.
//!
//! * [`json`]: the interchange format for models, inputs, outputs and reports.
//! * [`script`]: Keras scripts equivalent to a model.
//! * [`backend`]: the reference semantics behind the backend contract.
//! * [`harness`]: differential campaigns against a backend command.
//! * [`campaign`]: generated campaign directories.

pub mod backend;
pub mod campaign;
pub mod harness;
pub mod json;
pub mod script;
