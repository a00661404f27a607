//! Repetition-sparsity aware quantization and inference planning.
//!
//! The crate quantizes convolution weights to binary, ternary, or
//! signed-binary form, builds partial-sum-reuse execution plans that
//! exploit weight repetition and (optionally) skip zero weights, counts
//! their exact arithmetic, and trains small CNNs with straight-through or
//! error-decay surrogate gradients to study the resulting weight
//! distributions.

pub mod error;
pub mod pack;
pub mod quantize;
pub mod repkernel;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use quantize::{QuantScheme, QuantVariant, QuantizedLayer, RegionMap, RegionSpec};
pub use repkernel::{build_plan, execute_plan, RepetitionPlan};
pub use tensor::{ConvSpec, OpCounts, Tensor4};
