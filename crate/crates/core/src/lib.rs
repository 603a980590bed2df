//! Differentiable vocal effects chain: parametric EQ, compressor/expander, ping-pong delay
//! and feedback-delay-network reverb, with losses, a fitting loop and preset analysis.

pub mod analysis;
pub mod biquad;
pub mod chain;
pub mod delay;
pub mod dual;
pub mod dynamics;
pub mod error;
pub mod fdn;
pub mod fft;
pub mod grad;
pub mod losses;
pub mod params;
pub mod pipeline;

pub use error::{Error, Result};
