//! Audits gradient-based explanations of an audio classifier.
//!
//! The pipeline works in the time-frequency domain: a waveform is turned
//! into a magnitude/phase spectrogram, attribution maps are computed over
//! the magnitude bins through a phase-preserving resynthesis chain, and the
//! resulting masks are scored with faithfulness and conciseness metrics,
//! combined across methods, and fed to a retrain-on-explanations test.
//!
//! Modules mirror the pipeline stages:
//!
//! * [`dsp`] — STFT/ISTFT, the ISTFT vector-Jacobian product, log-mel features
//! * [`autonn`] — tape-based reverse-mode autodiff and the small CNN classifier
//! * [`attribution`] — the six saliency-map methods and map normalization
//! * [`metrics`] — AI/AD/AG, faithfulness, input fidelity, sparseness,
//!   complexity, selective metrics and classification scores
//! * [`overlap`] — map combination, IoU, and the overlap-vs-faithfulness study
//! * [`harness`] — synthetic dataset, stratified splits, retrain experiment
//! * [`io`] — tensor/WAV/checkpoint file formats
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); production
//! paths use `f32`, gradient-check tests use `f64`.

pub mod attribution;
pub mod autonn;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod overlap;
pub mod rng;
pub mod tensor;

pub use error::{CoreError, Result};
pub use tensor::Tensor;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type for all numeric pipelines: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + rustfft::FftNum + Send + Sync + std::fmt::Display + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lossy `f64` → `T` conversion of constants.
#[inline]
pub fn scalar<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant representable in scalar type")
}

/// Single-precision waveform, the production type.
pub type Waveform32 = dsp::Waveform<f32>;
/// Single-precision magnitude spectrogram.
pub type Magnitude32 = dsp::Magnitude<f32>;
/// Single-precision phase spectrogram.
pub type Phase32 = dsp::Phase<f32>;
/// Single-precision tensor.
pub type Tensor32 = tensor::Tensor<f32>;
/// Single-precision classifier.
pub type Model32 = autonn::Model<f32>;
/// Double-precision tensor, used by gradient-check tests.
pub type Tensor64 = tensor::Tensor<f64>;
/// Double-precision classifier, used by gradient-check tests.
pub type Model64 = autonn::Model<f64>;
