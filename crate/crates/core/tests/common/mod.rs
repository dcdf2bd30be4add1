#![allow(dead_code)]

use ctia_ipc::frame::BayerFrame;
use ctia_ipc::mapper::{BnParams, ConvSpec, FusedLayer, WeightTensor};
use ctia_ipc::synth;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_frame(rng: &mut ChaCha8Rng, rows: usize, cols: usize, i_max: f64) -> BayerFrame {
    synth::random_frame(rng, rows, cols, i_max).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, spec: &ConvSpec) -> WeightTensor {
    synth::random_weights(rng, spec)
}

pub fn random_bn(rng: &mut ChaCha8Rng, channels: usize) -> BnParams {
    synth::random_bn(rng, channels)
}

pub fn random_layer(rng: &mut ChaCha8Rng, spec: &ConvSpec) -> FusedLayer {
    let w = random_weights(rng, spec);
    let bn = random_bn(rng, spec.c_o);
    FusedLayer::build(&w, &bn, spec).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
