//! Column single-slope ADC with digital CDS, ReLU, requantization and pooling.
//!
//! The up/down counter converts the positive-weight sample counting up and
//! the negative-weight sample counting down, starting from a preloaded
//! batch-norm offset. Negative results clip to zero (ReLU) and the 6-bit
//! count is truncated to the output precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcConfig {
    /// Converter resolution; the ramp spans `2^bits` codes.
    pub bits: u32,
    /// Ramp span in volts.
    pub v_fs: f64,
    /// Counter preload, in codes.
    pub bn_offset_codes: i64,
    /// Bits kept after requantization.
    pub out_bits: u32,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            bits: 6,
            v_fs: 0.64,
            bn_offset_codes: 0,
            out_bits: 4,
        }
    }
}

impl AdcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.bits) {
            return Err(Error::InvalidConfiguration(format!(
                "ADC bits must be in 1..=16, got {}",
                self.bits
            )));
        }
        if self.out_bits == 0 || self.out_bits > self.bits {
            return Err(Error::InvalidConfiguration(format!(
                "out_bits {} must be in 1..={}",
                self.out_bits, self.bits
            )));
        }
        if !(self.v_fs.is_finite() && self.v_fs > 0.0) {
            return Err(Error::InvalidConfiguration(format!(
                "ADC full scale must be positive, got {}",
                self.v_fs
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn lsb(&self) -> f64 {
        self.v_fs / f64::from(1u32 << self.bits)
    }

    #[inline]
    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    #[inline]
    pub fn max_output(&self) -> u16 {
        ((1u32 << self.out_bits) - 1) as u16
    }

    pub fn with_offset(&self, bn_offset_codes: i64) -> Self {
        Self {
            bn_offset_codes,
            ..*self
        }
    }
}

/// Ramp-crossing count for an input voltage, saturating at full scale.
pub fn quantize(cfg: &AdcConfig, v: f64) -> Result<u32> {
    if !(v >= 0.0) {
        return Err(Error::InvalidState(format!(
            "ADC input {v} V is negative or NaN"
        )));
    }
    let steps = (v / cfg.lsb()).floor();
    Ok(if steps >= f64::from(cfg.max_code()) {
        cfg.max_code()
    } else {
        steps as u32
    })
}

/// Up-count the positive sample, down-count the negative one, on top of the
/// preloaded offset.
pub fn cds_signed(cfg: &AdcConfig, v_pos: f64, v_neg: f64) -> Result<i64> {
    Ok(i64::from(quantize(cfg, v_pos)?) - i64::from(quantize(cfg, v_neg)?) + cfg.bn_offset_codes)
}

/// Output activation of one node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DigitalActivation(pub u16);

impl DigitalActivation {
    #[inline]
    pub fn value(self) -> u16 {
        self.0
    }
}

/// ReLU followed by truncation to `out_bits`.
pub fn relu_requantize(cfg: &AdcConfig, code: i64) -> DigitalActivation {
    let clipped = code.max(0) as u64;
    let shifted = clipped >> (cfg.bits - cfg.out_bits);
    DigitalActivation(shifted.min(u64::from(cfg.max_output())) as u16)
}

/// Row-major grid of activations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<DigitalActivation>,
}

impl ActivationMap {
    pub fn new(rows: usize, cols: usize, values: Vec<DigitalActivation>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} activation map needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_u16(rows: usize, cols: usize, values: &[u16]) -> Result<Self> {
        Self::new(rows, cols, values.iter().map(|&v| DigitalActivation(v)).collect())
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> DigitalActivation {
        self.values[r * self.cols + c]
    }

    pub fn raw(&self) -> Vec<u16> {
        self.values.iter().map(|v| v.0).collect()
    }

    pub fn max(&self) -> Option<DigitalActivation> {
        self.values.iter().copied().max()
    }
}

/// Non-overlapping `p_s x p_s` max pooling; ragged edges pool over the
/// partial window.
pub fn maxpool(map: &ActivationMap, p_s: usize) -> Result<ActivationMap> {
    if map.rows == 0 || map.cols == 0 {
        return Err(Error::InvalidInput("cannot pool an empty map".into()));
    }
    if p_s == 0 {
        return Err(Error::InvalidInput("pooling stride must be >= 1".into()));
    }
    let (rows, cols) = (map.rows.div_ceil(p_s), map.cols.div_ceil(p_s));
    let mut values = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let mut best = DigitalActivation(0);
            for r in pr * p_s..((pr + 1) * p_s).min(map.rows) {
                for c in pc * p_s..((pc + 1) * p_s).min(map.cols) {
                    best = best.max(map.get(r, c));
                }
            }
            values.push(best);
        }
    }
    ActivationMap::new(rows, cols, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> AdcConfig {
        AdcConfig::default()
    }

    #[test]
    fn lsb_is_ten_millivolts() {
        let c = cfg();
        assert!((c.lsb() - 0.01).abs() < 1e-17);
        assert_eq!(c.lsb() * 64.0, c.v_fs);
    }

    #[test]
    fn quantize_examples() {
        let c = cfg();
        assert_eq!(quantize(&c, 0.0).unwrap(), 0);
        assert_eq!(quantize(&c, 0.64).unwrap(), 63);
        assert_eq!(quantize(&c, 5.0).unwrap(), 63);
        assert_eq!(quantize(&c, 0.35).unwrap(), 35);
        assert!(matches!(quantize(&c, -0.001), Err(Error::InvalidState(_))));
        assert!(quantize(&c, f64::NAN).is_err());
    }

    #[test]
    fn cds_examples() {
        let c = cfg();
        assert_eq!(cds_signed(&c, 0.27, 0.27).unwrap(), 0);
        assert_eq!(cds_signed(&c, 0.35, 0.10).unwrap(), 25);
        let off = c.with_offset(-5);
        assert_eq!(cds_signed(&off, 0.03, 0.0).unwrap(), -2);
        assert_eq!(relu_requantize(&off, -2), DigitalActivation(0));
    }

    #[test]
    fn relu_requantize_examples() {
        let c = cfg();
        assert_eq!(relu_requantize(&c, -7).0, 0);
        assert_eq!(relu_requantize(&c, 63).0, 15);
        assert_eq!(relu_requantize(&c, 25).0, 6);
        assert_eq!(relu_requantize(&c, 1000).0, 15);
    }

    #[test]
    fn pooling_examples() {
        let m = ActivationMap::from_u16(2, 2, &[1, 2, 3, 4]).unwrap();
        assert_eq!(maxpool(&m, 1).unwrap(), m);
        assert_eq!(maxpool(&m, 2).unwrap().raw(), vec![4]);
        let big = ActivationMap::from_u16(509, 637, &vec![0; 509 * 637]).unwrap();
        let p = maxpool(&big, 2).unwrap();
        assert_eq!((p.rows, p.cols), (255, 319));
        let ragged = ActivationMap::from_u16(3, 3, &[0, 0, 0, 0, 0, 0, 0, 0, 9]).unwrap();
        assert_eq!(maxpool(&ragged, 2).unwrap().raw(), vec![0, 0, 0, 9]);
        let empty = ActivationMap::new(0, 0, vec![]).unwrap();
        assert!(maxpool(&empty, 2).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AdcConfig { out_bits: 7, ..cfg() }.validate().is_err());
        assert!(AdcConfig { v_fs: 0.0, ..cfg() }.validate().is_err());
        cfg().validate().unwrap();
    }
}
