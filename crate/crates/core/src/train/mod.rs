//! Desk-scale quantization-aware training.
//!
//! Latent full-precision weights are quantized on every forward pass with
//! a freshly recomputed threshold; gradients flow through the quantizer
//! either as the straight-through estimator or, when enabled, the
//! tanh-based error-decay surrogate whose sharpness anneals over the run.
//! Latent weights are clamped to [-1, 1] after every optimizer step.

mod config;
mod data;
mod grad;
mod histogram;
mod layers;
mod model;
mod trainer;

pub use config::{DatasetKind, ModelKind, TrainConfig};
pub use data::{load_cifar10, load_mnist, synthetic_dataset, Dataset};
pub use grad::{backward_quant, ede_grad_factor, ede_schedule, ste_grad, EDESchedule};
pub use histogram::{weight_histogram, Histogram};
pub use layers::{conv_oracle_check, ConvLayer, Param, QuantConfig};
pub use model::{Layer, LayerSpec, Model, ModelSpec};
pub use trainer::{evaluate, quantized_latents, train, train_on, EpochMetrics, TrainState};
