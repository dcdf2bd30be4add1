//! Maps a first-layer convolution onto the pixel array.
//!
//! Batch norm is folded into the weights (scale) and into a per-channel
//! offset applied at the ADC; the scaled weights are quantized to
//! sign-magnitude words whose sign selects the positive or negative cycle;
//! and output nodes are grouped into cycles of column-disjoint windows.
//!
//! Geometry is expressed on the site grid: one site is one RGGB quad, so a
//! `k x k` kernel touches `k * k * 4` photodiodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::CHANNELS;
use crate::wtc::{WeightWord, WEIGHT_BITS};

/// First-layer convolution hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvSpec {
    /// Kernel size.
    pub k: usize,
    /// Stride.
    pub s: usize,
    /// Padding, in sites.
    pub p: usize,
    /// Output channels.
    pub c_o: usize,
    /// Input channels; always 4 (RGGB).
    pub c_in: usize,
    /// Output activation bits.
    pub n_b: u32,
    /// Pooling stride; 1 disables pooling.
    pub p_s: usize,
    /// Magnitude bits of a quantized weight (4, or 3 when the sign is
    /// counted inside the 4-bit word).
    pub weight_mag_bits: u32,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            k: 7,
            s: 2,
            p: 0,
            c_o: 16,
            c_in: CHANNELS,
            n_b: 4,
            p_s: 2,
            weight_mag_bits: WEIGHT_BITS,
        }
    }
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.k == 0 {
            errs.push("kernel size k must be >= 1".to_string());
        }
        if self.s == 0 {
            errs.push("stride s must be >= 1".to_string());
        }
        if self.c_o == 0 {
            errs.push("output channels c_o must be >= 1".to_string());
        }
        if self.c_in != CHANNELS {
            errs.push(format!("c_in must be {CHANNELS} (RGGB), got {}", self.c_in));
        }
        if self.n_b == 0 {
            errs.push("n_b must be >= 1".to_string());
        }
        if self.p_s == 0 {
            errs.push("pooling stride p_s must be >= 1".to_string());
        }
        if !(self.weight_mag_bits == 3 || self.weight_mag_bits == 4) {
            errs.push(format!(
                "weight_mag_bits must be 3 or 4, got {}",
                self.weight_mag_bits
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Largest quantized weight magnitude.
    pub fn max_magnitude(&self) -> u8 {
        ((1u32 << self.weight_mag_bits) - 1) as u8
    }

    /// Taps per output node (`k * k * c_in`).
    pub fn taps(&self) -> usize {
        self.k * self.k * self.c_in
    }
}

/// Image size on the site grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub rows: usize,
    pub cols: usize,
}

impl ImageDims {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub conv_rows: usize,
    pub conv_cols: usize,
    pub pool_rows: usize,
    pub pool_cols: usize,
}

impl LayerDims {
    pub fn conv_elements(&self) -> usize {
        self.conv_rows * self.conv_cols
    }

    pub fn pool_elements(&self) -> usize {
        self.pool_rows * self.pool_cols
    }
}

fn conv_extent(dim: usize, spec: &ConvSpec, axis: &str) -> Result<usize> {
    let span = dim + 2 * spec.p;
    if span < spec.k {
        return Err(Error::InvalidConfiguration(format!(
            "{axis} extent {dim} (+2*{} padding) is smaller than kernel {}",
            spec.p, spec.k
        )));
    }
    Ok((span - spec.k) / spec.s + 1)
}

/// Convolution output size per axis and the size after ceiling-division
/// pooling.
pub fn output_dims(spec: &ConvSpec, image: ImageDims) -> Result<LayerDims> {
    spec.validate()?;
    let conv_rows = conv_extent(image.rows, spec, "row")?;
    let conv_cols = conv_extent(image.cols, spec, "column")?;
    Ok(LayerDims {
        conv_rows,
        conv_cols,
        pool_rows: conv_rows.div_ceil(spec.p_s),
        pool_cols: conv_cols.div_ceil(spec.p_s),
    })
}

/// Real-valued kernel tensor, indexed `[out_channel][in_channel][row][col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTensor {
    pub c_o: usize,
    pub c_in: usize,
    pub k: usize,
    pub data: Vec<f64>,
}

impl WeightTensor {
    pub fn new(c_o: usize, c_in: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c_o * c_in * k * k {
            return Err(Error::Dimension(format!(
                "weight tensor {c_o}x{c_in}x{k}x{k} needs {} values, got {}",
                c_o * c_in * k * k,
                data.len()
            )));
        }
        Ok(Self { c_o, c_in, k, data })
    }

    pub fn zeros(c_o: usize, c_in: usize, k: usize) -> Self {
        Self {
            c_o,
            c_in,
            k,
            data: vec![0.0; c_o * c_in * k * k],
        }
    }

    #[inline]
    pub fn index(&self, o: usize, c: usize, r: usize, col: usize) -> usize {
        ((o * self.c_in + c) * self.k + r) * self.k + col
    }

    #[inline]
    pub fn get(&self, o: usize, c: usize, r: usize, col: usize) -> f64 {
        self.data[self.index(o, c, r, col)]
    }

    pub fn channel(&self, o: usize) -> &[f64] {
        let n = self.c_in * self.k * self.k;
        &self.data[o * n..(o + 1) * n]
    }
}

/// Per-output-channel batch-norm parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl BnParams {
    /// `gamma = 1, beta = 0, mu = 0, sigma_sq = 1` with a vanishing epsilon.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mu: vec![0.0; channels],
            sigma_sq: vec![1.0; channels],
            epsilon: vec![1e-12; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Returns every violation rather than the first.
    pub fn violations(&self) -> Vec<String> {
        let n = self.gamma.len();
        let mut errs = Vec::new();
        for (name, v) in [
            ("beta", &self.beta),
            ("mu", &self.mu),
            ("sigma_sq", &self.sigma_sq),
            ("epsilon", &self.epsilon),
        ] {
            if v.len() != n {
                errs.push(format!("bn.{name} has {} entries, gamma has {n}", v.len()));
            }
        }
        for (name, v) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("mu", &self.mu),
            ("sigma_sq", &self.sigma_sq),
            ("epsilon", &self.epsilon),
        ] {
            for (ch, x) in v.iter().enumerate() {
                if !x.is_finite() {
                    errs.push(format!("bn.{name}[{ch}] is not finite ({x})"));
                }
            }
        }
        for (ch, s) in self.sigma_sq.iter().enumerate() {
            if *s < 0.0 {
                errs.push(format!("bn.sigma_sq[{ch}] = {s} is negative"));
            }
        }
        for (ch, e) in self.epsilon.iter().enumerate() {
            if *e <= 0.0 {
                errs.push(format!("bn.epsilon[{ch}] = {e} must be positive"));
            }
        }
        errs
    }

    /// Fused scale `A = gamma / sqrt(sigma_sq + epsilon)` and offset
    /// `B = beta - gamma * mu / sqrt(sigma_sq + epsilon)` for one channel.
    pub fn scale_offset(&self, ch: usize) -> (f64, f64) {
        let inv_std = 1.0 / (self.sigma_sq[ch] + self.epsilon[ch]).sqrt();
        let a = self.gamma[ch] * inv_std;
        (a, self.beta[ch] - self.gamma[ch] * self.mu[ch] * inv_std)
    }
}

/// Folds batch norm into the weights. Returns the scaled tensor and the
/// per-channel offsets.
pub fn fuse_bn(weights: &WeightTensor, bn: &BnParams) -> Result<(WeightTensor, Vec<f64>)> {
    if bn.sigma_sq.iter().any(|s| *s < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "negative batch-norm variance in {:?}",
            bn.sigma_sq
        )));
    }
    let errs = bn.violations();
    if !errs.is_empty() {
        return Err(Error::InvalidParameter(errs.join("; ")));
    }
    if bn.channels() != weights.c_o {
        return Err(Error::Dimension(format!(
            "{} batch-norm channels for {} output channels",
            bn.channels(),
            weights.c_o
        )));
    }
    let mut scaled = weights.clone();
    let per_channel = weights.c_in * weights.k * weights.k;
    let mut offsets = Vec::with_capacity(weights.c_o);
    for (ch, chunk) in scaled.data.chunks_mut(per_channel).enumerate() {
        let (a, b) = bn.scale_offset(ch);
        chunk.iter_mut().for_each(|w| *w *= a);
        offsets.push(b);
    }
    Ok((scaled, offsets))
}

/// Sign-magnitude weights split into the two cycle planes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    pub c_o: usize,
    pub c_in: usize,
    pub k: usize,
    /// Magnitudes of positive weights (zero elsewhere).
    pub positive: Vec<WeightWord>,
    /// Magnitudes of negative weights (zero elsewhere).
    pub negative: Vec<WeightWord>,
    /// Real value of one magnitude step.
    pub weight_scale: f64,
}

impl QuantizedWeights {
    /// Builds planes from signed integer taps in tensor order.
    pub fn from_signed(c_o: usize, c_in: usize, k: usize, taps: &[i8], weight_scale: f64) -> Result<Self> {
        if taps.len() != c_o * c_in * k * k {
            return Err(Error::Dimension(format!(
                "{} signed taps for a {c_o}x{c_in}x{k}x{k} layer",
                taps.len()
            )));
        }
        let mut positive = Vec::with_capacity(taps.len());
        let mut negative = Vec::with_capacity(taps.len());
        for &t in taps {
            let mag = WeightWord::new(t.unsigned_abs())?;
            let (p, n) = if t > 0 { (mag, WeightWord::ZERO) } else { (WeightWord::ZERO, mag) };
            positive.push(p);
            negative.push(n);
        }
        Ok(Self {
            c_o,
            c_in,
            k,
            positive,
            negative,
            weight_scale,
        })
    }

    #[inline]
    pub fn index(&self, o: usize, c: usize, r: usize, col: usize) -> usize {
        ((o * self.c_in + c) * self.k + r) * self.k + col
    }

    /// Signed magnitude of one tap.
    #[inline]
    pub fn signed(&self, o: usize, c: usize, r: usize, col: usize) -> i32 {
        let i = self.index(o, c, r, col);
        i32::from(self.positive[i].magnitude()) - i32::from(self.negative[i].magnitude())
    }

    pub fn plane(&self, polarity: crate::array::Polarity) -> &[WeightWord] {
        match polarity {
            crate::array::Polarity::Positive => &self.positive,
            crate::array::Polarity::Negative => &self.negative,
        }
    }

    /// `sign * magnitude * weight_scale` for every tap.
    pub fn dequantize(&self) -> Vec<f64> {
        self.positive
            .iter()
            .zip(&self.negative)
            .map(|(p, n)| {
                (f64::from(p.magnitude()) - f64::from(n.magnitude())) * self.weight_scale
            })
            .collect()
    }
}

/// Symmetric per-tensor quantization to `mag_bits` magnitude bits.
pub fn quantize_weights(scaled: &WeightTensor, mag_bits: u32) -> Result<QuantizedWeights> {
    if !(1..=WEIGHT_BITS).contains(&mag_bits) {
        return Err(Error::InvalidParameter(format!(
            "magnitude bits must be in 1..={WEIGHT_BITS}, got {mag_bits}"
        )));
    }
    if let Some(i) = scaled.data.iter().position(|w| !w.is_finite()) {
        return Err(Error::InvalidParameter(format!("weight {i} is not finite")));
    }
    let max_mag = f64::from((1u32 << mag_bits) - 1);
    let peak = scaled.data.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let weight_scale = peak / max_mag;
    let taps: Vec<i8> = scaled
        .data
        .iter()
        .map(|&w| {
            if weight_scale == 0.0 {
                0
            } else {
                let mag = (w.abs() / weight_scale).round().min(max_mag) as i8;
                if w < 0.0 {
                    -mag
                } else {
                    mag
                }
            }
        })
        .collect();
    QuantizedWeights::from_signed(scaled.c_o, scaled.c_in, scaled.k, &taps, weight_scale)
}

/// Batch-norm-fused, quantized first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedLayer {
    pub scaled_weights: WeightTensor,
    pub offsets: Vec<f64>,
    pub quantized: QuantizedWeights,
}

impl FusedLayer {
    pub fn build(weights: &WeightTensor, bn: &BnParams, spec: &ConvSpec) -> Result<Self> {
        spec.validate()?;
        if weights.c_in != spec.c_in || weights.k != spec.k || weights.c_o != spec.c_o {
            return Err(Error::Dimension(format!(
                "weights {}x{}x{k}x{k} do not match conv spec {}x{}x{}x{}",
                weights.c_o,
                weights.c_in,
                spec.c_o,
                spec.c_in,
                spec.k,
                spec.k,
                k = weights.k
            )));
        }
        let (scaled_weights, offsets) = fuse_bn(weights, bn)?;
        let quantized = quantize_weights(&scaled_weights, spec.weight_mag_bits)?;
        Ok(Self {
            scaled_weights,
            offsets,
            quantized,
        })
    }

    pub fn weight_scale(&self) -> f64 {
        self.quantized.weight_scale
    }
}

/// One compute cycle: the output columns evaluated together in a row band.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cycle {
    pub out_cols: Vec<usize>,
    pub active_pixels: usize,
}

/// Cycle plan for a whole layer.
///
/// Every output row band reuses the same column grouping, and every output
/// channel is a separate weight load, so only one band's cycles are stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub k: usize,
    pub s: usize,
    pub out_rows: usize,
    pub out_cols: usize,
    pub channels: usize,
    /// Window pitch in site columns.
    pub pitch: usize,
    pub band: Vec<Cycle>,
}

impl Schedule {
    pub fn cycles_per_band(&self) -> usize {
        self.band.len()
    }

    /// Cycles per frame, counting each channel reload and each row band.
    /// Each cycle runs twice (positive and negative weights).
    pub fn total_cycles(&self) -> usize {
        self.band.len() * self.out_rows * self.channels
    }

    pub fn cycle0_active_pixels(&self) -> usize {
        self.band.first().map_or(0, |c| c.active_pixels)
    }

    /// Sum of active pixels over every cycle of the frame.
    pub fn total_active_pixels(&self) -> usize {
        self.band.iter().map(|c| c.active_pixels).sum::<usize>() * self.out_rows * self.channels
    }

    pub fn total_windows(&self) -> usize {
        self.band.iter().map(|c| c.out_cols.len()).sum::<usize>() * self.out_rows * self.channels
    }

    /// First site column (padded coordinates) of an output column's window.
    #[inline]
    pub fn window_col(&self, out_col: usize) -> usize {
        out_col * self.s
    }

    /// Iterates `(channel, out_row, cycle)` in execution order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &Cycle)> + '_ {
        (0..self.channels).flat_map(move |ch| {
            (0..self.out_rows).flat_map(move |row| self.band.iter().map(move |c| (ch, row, c)))
        })
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Groups output nodes into cycles of column-disjoint windows.
///
/// Windows in one cycle sit `lcm(k, s)` site columns apart, and a cycle holds
/// at most `floor((i - k + 2p) / (s * lcm(k, s)))` windows for an image `i`
/// sites wide (at least one).
pub fn build_schedule(spec: &ConvSpec, image: ImageDims) -> Result<Schedule> {
    spec.validate()?;
    let dims = output_dims(spec, image).map_err(|e| Error::Schedule(e.to_string()))?;
    let pitch = lcm(spec.k, spec.s);
    let step = pitch / spec.s;
    let per_cycle = ((image.cols + 2 * spec.p - spec.k) / (spec.s * pitch)).max(1);
    let pixels_per_window = spec.k * spec.k * CHANNELS;

    let mut band = Vec::new();
    for residue in 0..step.min(dims.conv_cols) {
        let members: Vec<usize> = (residue..dims.conv_cols).step_by(step).collect();
        for chunk in members.chunks(per_cycle) {
            band.push(Cycle {
                out_cols: chunk.to_vec(),
                active_pixels: chunk.len() * pixels_per_window,
            });
        }
    }
    Ok(Schedule {
        k: spec.k,
        s: spec.s,
        out_rows: dims.conv_rows,
        out_cols: dims.conv_cols,
        channels: spec.c_o,
        pitch,
        band,
    })
}
