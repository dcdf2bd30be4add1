//! Transfer-curve sweeps through the full analog chain and column ADC.
//!
//! Every point builds a uniform `k x k` window (all taps one magnitude, all
//! pixels one input level), runs one MAC cycle and converts the result.
//! Inputs are snapped to raw sensor codes, so `x_norm` is exactly what the
//! pixels saw.

use serde::{Deserialize, Serialize};

use crate::adc::quantize;
use crate::array::{run_mac_cycle, ArrayMode, Polarity, Window};
use crate::device::{fit_transfer, FitResult, TransferSample};
use crate::error::{Error, Result};
use crate::frame::{BayerFrame, RAW_FULL_SCALE};
use crate::sim::Hardware;
use crate::wtc::{WeightPlane, WeightWord, MAX_MAGNITUDE};

pub const CSV_HEADER: &str = "mode,k,w_norm,x_norm,v_cbl,v_adc_in,code";
pub const MULTIWINDOW_K: [usize; 3] = [3, 5, 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    VsWeight,
    VsCurrent,
    VsProduct,
    Multiwindow,
}

impl SweepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::VsWeight => "vs_weight",
            Self::VsCurrent => "vs_current",
            Self::VsProduct => "vs_product",
            Self::Multiwindow => "multiwindow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub mode: SweepMode,
    /// Window size outside multiwindow mode.
    pub k: usize,
    /// Input levels, evenly spaced over `[0, 1]`.
    pub points: usize,
    /// Held input in `vs_weight` mode.
    pub x_fixed: f64,
    /// Held magnitude in `vs_current` mode.
    pub w_fixed: u8,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mode: SweepMode::VsProduct,
            k: 1,
            points: 11,
            x_fixed: 1.0,
            w_fixed: MAX_MAGNITUDE,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.k == 0 {
            errs.push("k must be >= 1".into());
        }
        if self.points < 2 {
            errs.push(format!("points must be >= 2, got {}", self.points));
        }
        if !(0.0..=1.0).contains(&self.x_fixed) {
            errs.push(format!("x_fixed must lie in [0, 1], got {}", self.x_fixed));
        }
        if self.w_fixed > MAX_MAGNITUDE {
            errs.push(format!("w_fixed must be <= {MAX_MAGNITUDE}, got {}", self.w_fixed));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: SweepMode,
    pub k: usize,
    pub w_norm: f64,
    pub x_norm: f64,
    /// Mean CBL voltage over the window's columns.
    pub v_cbl: f64,
    pub v_adc_in: f64,
    pub code: u32,
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.mode.as_str(),
            self.k,
            self.w_norm,
            self.x_norm,
            self.v_cbl,
            self.v_adc_in,
            self.code
        )
    }

    pub fn sample(&self) -> TransferSample {
        TransferSample {
            w_norm: self.w_norm,
            x_norm: self.x_norm,
            volts: self.v_adc_in,
        }
    }
}

fn raw_level(x: f64) -> u16 {
    (x * f64::from(RAW_FULL_SCALE)).round() as u16
}

/// One uniform window through the chain.
pub fn sweep_point(hw: &Hardware, k: usize, magnitude: u8, raw: u16) -> Result<(f64, f64, u32)> {
    let side = 2 * k;
    let frame = BayerFrame::from_raw(side, side, vec![raw; side * side], hw.pixel.i_max)?;
    let mut plane = WeightPlane::new(side, side);
    let w = WeightWord::new(magnitude)?;
    for r in 0..side {
        for c in 0..side {
            plane.write_weight(r, c, w)?;
        }
    }
    let array = crate::array::ArrayConfig {
        mode: ArrayMode::Mac,
        ..hw.array
    };
    let win = Window {
        site_row: 0,
        site_col: 0,
        k,
    };
    let node = run_mac_cycle(&array, &hw.pixel, &frame, &plane, 0, &hw.wtc, &[win], Polarity::Positive)?
        .pop()
        .expect("one window");
    let v_cbl = node.cbl.volts.iter().sum::<f64>() / node.cbl.volts.len() as f64;
    let code = quantize(&hw.adc, node.v_adc_in)?;
    Ok((v_cbl, node.v_adc_in, code))
}

/// Sweeps the configured mode; rows are ordered by `k`, then weight, then
/// input level.
pub fn linearity_sweep(hw: &Hardware, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    hw.validate()?;
    cfg.validate()?;
    let grid: Vec<u16> = (0..cfg.points)
        .map(|i| raw_level(i as f64 / (cfg.points - 1) as f64))
        .collect();
    let all_weights: Vec<u8> = (0..=MAX_MAGNITUDE).collect();
    let (ks, weights, inputs): (Vec<usize>, Vec<u8>, Vec<u16>) = match cfg.mode {
        SweepMode::VsWeight => (vec![cfg.k], all_weights, vec![raw_level(cfg.x_fixed)]),
        SweepMode::VsCurrent => (vec![cfg.k], vec![cfg.w_fixed], grid),
        SweepMode::VsProduct => (vec![cfg.k], all_weights, grid),
        SweepMode::Multiwindow => (MULTIWINDOW_K.to_vec(), all_weights, grid),
    };
    let mut rows = Vec::with_capacity(ks.len() * weights.len() * inputs.len());
    for &k in &ks {
        for &m in &weights {
            for &raw in &inputs {
                let (v_cbl, v_adc_in, code) = sweep_point(hw, k, m, raw)?;
                rows.push(SweepRow {
                    mode: cfg.mode,
                    k,
                    w_norm: f64::from(m) / f64::from(MAX_MAGNITUDE),
                    x_norm: f64::from(raw) / f64::from(RAW_FULL_SCALE),
                    v_cbl,
                    v_adc_in,
                    code,
                });
            }
        }
    }
    Ok(rows)
}

/// Least-squares fit of ADC-input volts against `w_norm * x_norm` for the
/// rows of one window size.
pub fn fit_rows(rows: &[SweepRow], k: usize) -> Result<FitResult> {
    let samples: Vec<TransferSample> = rows.iter().filter(|r| r.k == k).map(SweepRow::sample).collect();
    fit_transfer(&samples)
}

/// The sweep as CSV text, header included.
pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}
