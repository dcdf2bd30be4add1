//! Behavioral simulator for a charge-domain in-pixel convolution engine.
//!
//! The pipeline runs a quantized first convolution layer on a Bayer sensor
//! array: weights become exposure times ([`wtc`]), CTIA pixels integrate
//! their photocurrent ([`device`]), charge bitlines accumulate and divide
//! ([`array`]), and a column single-slope ADC applies signed double
//! sampling, batch-norm offset, ReLU, requantization and pooling ([`adc`]).
//! [`golden`] is the integer reference the simulator is checked against.

pub mod adc;
pub mod array;
pub mod device;
pub mod error;
pub mod frame;
pub mod golden;
pub mod mapper;
pub mod metrics;
pub mod montecarlo;
pub mod sim;
pub mod sweep;
pub mod synth;
pub mod weights_io;
pub mod wtc;

pub use error::{Error, Result};
pub use sim::{simulate_layer, Hardware};
