//! Pixel array: charge-bitline accumulation and the switching matrix.
//!
//! In MAC mode every active pixel integrates for its weight-encoded exposure
//! and dumps the resulting drop onto its column's charge bitline (CBL). The
//! switching matrix then charge-shares the `k` CBLs of a window onto the ADC
//! input through the capacitive divider
//!
//! ```text
//! V_ADC_IN = (V_1 + ... + V_N) / (4 + 2*C2/C1 + CF/C1)
//! ```
//!
//! One CBL serves one site column (both mosaic columns of the RGGB quad), so
//! `N` equals the kernel width. Signs never reach the CBL: each polarity is
//! a separate cycle with its own weight plane.
//!
//! Summation order is fixed (site column, then mosaic row, then mosaic
//! column) so results do not depend on how windows are spread over threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{integrate, PixelParams};
use crate::error::{Error, Result};
use crate::frame::{site_pixel, BayerFrame, CHANNELS};
use crate::wtc::{match_time, CounterConfig, WeightPlane, WeightWord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayMode {
    Readout,
    Mac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub const BOTH: [Polarity; 2] = [Polarity::Positive, Polarity::Negative];
}

/// Array geometry (in sites) and the accumulation network capacitors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub c1: f64,
    pub c2: f64,
    pub c_f_acc: f64,
    pub mode: ArrayMode,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            rows: 1024,
            cols: 1280,
            c1: 10e-15,
            c2: 10e-15,
            c_f_acc: 10e-15,
            mode: ArrayMode::Mac,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidConfiguration(format!(
                "array must have at least one row and column, got {}x{}",
                self.rows, self.cols
            )));
        }
        for (name, c) in [("c1", self.c1), ("c2", self.c2), ("c_f_acc", self.c_f_acc)] {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidConfiguration(format!(
                    "capacitor {name} must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }

    /// Charge-sharing divider `4 + 2*C2/C1 + CF/C1`.
    #[inline]
    pub fn divider(&self) -> f64 {
        4.0 + 2.0 * self.c2 / self.c1 + self.c_f_acc / self.c1
    }
}

/// Accumulated CBL voltages of one window, before the divider.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CblState {
    pub volts: Vec<f64>,
    pub contributors: Vec<usize>,
}

/// Both polarity samples of one output node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MacCycleResult {
    pub v_pos: f64,
    pub v_neg: f64,
}

/// Result of one window in one polarity cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct MacNode {
    pub cbl: CblState,
    pub v_adc_in: f64,
}

/// Top-left site (padded coordinates) of a `k x k` window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub site_row: usize,
    pub site_col: usize,
    pub k: usize,
}

impl Window {
    /// Mosaic pixels of site column `j`, in accumulation order.
    pub fn column_pixels(&self, j: usize) -> impl Iterator<Item = (usize, usize)> {
        let (r0, c0) = (2 * self.site_row, 2 * (self.site_col + j));
        (r0..r0 + 2 * self.k).flat_map(move |r| [(r, c0), (r, c0 + 1)])
    }

    /// Mosaic pixel of kernel tap `(ch, r, c)`.
    #[inline]
    pub fn tap_pixel(&self, ch: usize, r: usize, c: usize) -> (usize, usize) {
        site_pixel(self.site_row + r, self.site_col + c, ch)
    }
}

/// Sums one column's pixel contributions onto its CBL.
pub fn accumulate_column(contributions: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for (i, &v) in contributions.iter().enumerate() {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidState(format!(
                "CBL contribution {i} is {v}; bitlines only carry nonnegative drops"
            )));
        }
        sum += v;
    }
    Ok(sum)
}

/// Charge-shares `N` column voltages onto the ADC input.
pub fn combine_columns(cfg: &ArrayConfig, column_voltages: &[f64]) -> Result<f64> {
    if column_voltages.is_empty() {
        return Err(Error::InvalidConfiguration(
            "switching matrix needs at least one column".into(),
        ));
    }
    Ok(column_voltages.iter().sum::<f64>() / cfg.divider())
}

/// Writes one channel's kernel magnitudes for every window of a cycle.
///
/// `taps` is the channel's slice of a cycle plane in `[c_in][row][col]`
/// order; the plane's row 0 is mosaic row `origin_row`.
pub fn load_window_weights(
    plane: &mut WeightPlane,
    origin_row: usize,
    taps: &[WeightWord],
    windows: &[Window],
) -> Result<()> {
    for win in windows {
        let k = win.k;
        if taps.len() != CHANNELS * k * k {
            return Err(Error::Schedule(format!(
                "{} taps for a {k}x{k}x{CHANNELS} window",
                taps.len()
            )));
        }
        for ch in 0..CHANNELS {
            for r in 0..k {
                for c in 0..k {
                    let (pr, pc) = win.tap_pixel(ch, r, c);
                    let row = pr.checked_sub(origin_row).ok_or_else(|| {
                        Error::Schedule(format!("window row {pr} above plane origin {origin_row}"))
                    })?;
                    plane
                        .write_weight(row, pc, taps[(ch * k + r) * k + c])
                        .map_err(|e| Error::Schedule(e.to_string()))?;
                }
            }
        }
    }
    Ok(())
}

/// Clears the cells written by [`load_window_weights`].
pub fn clear_window_weights(plane: &mut WeightPlane, origin_row: usize, windows: &[Window]) -> Result<()> {
    for win in windows {
        for j in 0..win.k {
            for (pr, pc) in win.column_pixels(j) {
                plane
                    .write_weight(pr - origin_row, pc, WeightWord::ZERO)
                    .map_err(|e| Error::Schedule(e.to_string()))?;
            }
        }
    }
    Ok(())
}

fn check_window(frame: &BayerFrame, plane: &WeightPlane, origin_row: usize, win: &Window) -> Result<()> {
    let (r_end, c_end) = (2 * (win.site_row + win.k), 2 * (win.site_col + win.k));
    if win.k == 0 || r_end > frame.rows() || c_end > frame.cols() {
        return Err(Error::Schedule(format!(
            "window at site ({}, {}) size {} exceeds {}x{} frame",
            win.site_row,
            win.site_col,
            win.k,
            frame.rows(),
            frame.cols()
        )));
    }
    if 2 * win.site_row < origin_row || r_end - origin_row > plane.rows() || c_end > plane.cols() {
        return Err(Error::Schedule(format!(
            "window at site ({}, {}) is not covered by the {}x{} weight plane at row {origin_row}",
            win.site_row,
            win.site_col,
            plane.rows(),
            plane.cols()
        )));
    }
    Ok(())
}

/// One compute phase: every window integrates with the weights currently in
/// `plane`, its columns accumulate, and the switching matrix combines them.
///
/// The plane must only hold magnitudes of `polarity`'s sign; the polarity
/// itself does not change the analog behaviour.
#[allow(clippy::too_many_arguments)]
pub fn run_mac_cycle(
    cfg: &ArrayConfig,
    pixel: &PixelParams,
    frame: &BayerFrame,
    plane: &WeightPlane,
    origin_row: usize,
    wtc: &CounterConfig,
    windows: &[Window],
    _polarity: Polarity,
) -> Result<Vec<MacNode>> {
    if cfg.mode != ArrayMode::Mac {
        return Err(Error::InvalidState("array is in readout mode".into()));
    }
    for win in windows {
        check_window(frame, plane, origin_row, win)?;
    }
    // Exposure per weight code, shared by every pixel.
    let exposure: Vec<f64> = (0..=crate::wtc::MAX_MAGNITUDE)
        .map(|m| match_time(wtc, WeightWord::new(m).expect("in range")))
        .collect();

    windows
        .par_iter()
        .map(|win| {
            let mut buf = Vec::with_capacity(4 * win.k);
            let mut cbl = CblState {
                volts: Vec::with_capacity(win.k),
                contributors: Vec::with_capacity(win.k),
            };
            for j in 0..win.k {
                buf.clear();
                for (pr, pc) in win.column_pixels(j) {
                    let w = plane.get(pr - origin_row, pc);
                    buf.push(integrate(
                        pixel,
                        frame.photocurrent(pr, pc),
                        exposure[usize::from(w.magnitude())],
                    )?);
                }
                cbl.volts.push(accumulate_column(&buf)?);
                cbl.contributors.push(buf.len());
            }
            let v_adc_in = combine_columns(cfg, &cbl.volts)?;
            Ok(MacNode { cbl, v_adc_in })
        })
        .collect()
}

/// Conventional imaging: each pixel integrates for a fixed exposure and is
/// read out individually.
pub fn readout_frame(
    cfg: &ArrayConfig,
    pixel: &PixelParams,
    frame: &BayerFrame,
    exposure: f64,
) -> Result<Vec<f64>> {
    if cfg.mode != ArrayMode::Readout {
        return Err(Error::InvalidState("array is not in readout mode".into()));
    }
    (0..frame.rows())
        .flat_map(|r| (0..frame.cols()).map(move |c| (r, c)))
        .map(|(r, c)| integrate(pixel, frame.photocurrent(r, c), exposure))
        .collect()
}
