//! Tensor core for the ZIAN landmark localizer: dense arrays, a recording tape
//! with exact reverse-mode gradients for every primitive the network uses,
//! the Adam optimizer, a finite-difference gradient checker and parameter
//! checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport};
pub use ops::norm::BatchNormState;
pub use ops::resample::{Padding, SampleGrid};
pub use params::{Binding, ParamId, ParamKind, ParamStore};
pub use real::{Precision, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
