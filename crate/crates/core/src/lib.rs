//! Channel-uploading quantum convolution on an exact statevector simulator.
//!
//! The crate is organised bottom-up:
//!
//! * [`statevector`]: amplitudes, gates, Pauli-Z readout.
//! * [`circuit`]: late-bound gate lists and parameter-shift gradients.
//! * [`encoding`]: im2col and the channel-uploading angle encoder.
//! * [`pqc`]: the trainable U3CU3 circuit.
//! * [`qconv`]: the quantum convolution layer and its per-channel baseline.
//! * [`classifier`]: a qconv image classifier for trainability runs.
//! * [`classical`]: small conv and dense layers used by teachers and
//!   classifiers.
//! * [`costmodel`]: gate counters, closed-form running-time model, timings.
//! * [`detection`]: anchors, quantum and classical proposal heads,
//!   distillation losses, synthetic data and training.
//! * [`io`]: tensor files, CIFAR-10 binary records, checkpoints.

pub mod circuit;
pub mod classical;
pub mod classifier;
pub mod costmodel;
pub mod detection;
pub mod encoding;
pub mod error;
pub mod io;
pub mod pqc;
pub mod qconv;
pub mod statevector;
pub mod tensor;

#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
pub use circuit::{Angle, Circuit, Op};
pub use costmodel::{analytic_runtime, count_forward, ComplexityParams, GateCounters};
pub use encoding::{col2im_adjoint, encode_row, encode_row_per_channel, im2col, PatchMatrix, UploadAxis, UploadPlan};
pub use pqc::{param_shift_grad, pqc_forward, ParamVector, PqcSpec};
pub use qconv::{pool, qconv_backward, qconv_forward, ConvMode, LayerGrad, QConvConfig, QConvLayer};
pub use statevector::{Gate, QuantumState};
pub use tensor::Tensor3;
