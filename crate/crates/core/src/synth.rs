//! Seeded synthetic layers and frames for verification runs.
//!
//! Case `i` of seed `s` draws from stream `i` of a ChaCha generator keyed by
//! `s`, so any case can be regenerated on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::frame::BayerFrame;
use crate::mapper::{BnParams, ConvSpec, WeightTensor};

/// One random verification case.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub frame: BayerFrame,
    pub weights: WeightTensor,
    pub bn: BnParams,
}

pub fn case_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform raw samples over the full 16-bit range.
pub fn random_frame(rng: &mut impl Rng, rows: usize, cols: usize, i_max: f64) -> Result<BayerFrame> {
    let raw = (0..rows * cols).map(|_| rng.gen::<u16>()).collect();
    BayerFrame::from_raw(rows, cols, raw, i_max)
}

/// Weights uniform in `[-1, 1)`.
pub fn random_weights(rng: &mut impl Rng, spec: &ConvSpec) -> WeightTensor {
    let n = spec.c_o * spec.c_in * spec.k * spec.k;
    WeightTensor {
        c_o: spec.c_o,
        c_in: spec.c_in,
        k: spec.k,
        data: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

/// Batch norm with moderate scales and offsets of either sign.
pub fn random_bn(rng: &mut impl Rng, channels: usize) -> BnParams {
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..channels).map(|_| rng.gen_range(lo..hi)).collect() };
    BnParams {
        gamma: draw(0.25, 2.0),
        beta: draw(-0.5, 0.5),
        mu: draw(-0.5, 0.5),
        sigma_sq: draw(0.1, 2.0),
        epsilon: draw(1e-6, 1e-3),
    }
}

pub fn random_case(spec: &ConvSpec, rows: usize, cols: usize, i_max: f64, seed: u64, index: u64) -> Result<SyntheticCase> {
    let mut rng = case_rng(seed, index);
    let frame = random_frame(&mut rng, rows, cols, i_max)?;
    let weights = random_weights(&mut rng, spec);
    let bn = random_bn(&mut rng, spec.c_o);
    Ok(SyntheticCase { frame, weights, bn })
}
