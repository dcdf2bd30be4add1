//! Weight-to-time converter.
//!
//! Each pixel stores a 4-bit weight magnitude. During compute, a 7-bit global
//! counter runs from zero and a 4-bit slice of it is compared against the
//! stored word; the match fires the weighted reset and ends the exposure.
//! Selecting a higher slice stretches every exposure by a power of two.
//!
//! Timing is kept in integer counter ticks; `t_step` converts to seconds only
//! at the boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the global counter in bits.
pub const COUNTER_BITS: u32 = 7;
/// Width of the stored weight and of the compared counter slice.
pub const WEIGHT_BITS: u32 = 4;
pub const MAX_MAGNITUDE: u8 = (1 << WEIGHT_BITS) - 1;
/// Highest selectable window (bits 6..3).
pub const MAX_WINDOW: u8 = (COUNTER_BITS - WEIGHT_BITS) as u8;

/// A stored 4-bit weight magnitude.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct WeightWord(u8);

impl WeightWord {
    pub const ZERO: Self = Self(0);
    pub const MAX: Self = Self(MAX_MAGNITUDE);

    pub fn new(magnitude: u8) -> Result<Self> {
        if magnitude > MAX_MAGNITUDE {
            return Err(Error::InvalidParameter(format!(
                "weight magnitude {magnitude} exceeds {MAX_MAGNITUDE}"
            )));
        }
        Ok(Self(magnitude))
    }

    #[inline]
    pub fn magnitude(self) -> u8 {
        self.0
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl TryFrom<u8> for WeightWord {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightWord> for u8 {
    fn from(w: WeightWord) -> u8 {
        w.0
    }
}

/// Global counter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterConfig {
    /// Seconds per counter tick.
    pub t_step: f64,
    /// Window `w` compares counter bits `(3 + w)..=w`.
    pub window: u8,
}

impl Default for CounterConfig {
    fn default() -> Self {
        Self {
            t_step: 1e-6,
            window: 0,
        }
    }
}

impl CounterConfig {
    pub fn new(t_step: f64, window: u8) -> Result<Self> {
        let cfg = Self { t_step, window };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window > MAX_WINDOW {
            return Err(Error::InvalidParameter(format!(
                "counter window {} outside 0..={MAX_WINDOW}",
                self.window
            )));
        }
        if !(self.t_step.is_finite() && self.t_step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "t_step must be positive and finite, got {}",
                self.t_step
            )));
        }
        Ok(())
    }

    /// Integration-time multiplier selected by the window: 1, 2, 4 or 8.
    #[inline]
    pub fn multiplier(&self) -> u32 {
        1 << self.window
    }

    /// The compared 4-bit slice of the counter at `tick`.
    #[inline]
    pub fn window_value(&self, tick: u32) -> u8 {
        ((tick >> self.window) & u32::from(MAX_MAGNITUDE)) as u8
    }

    /// Tick at which the match line for `w` first rises.
    #[inline]
    pub fn match_tick(&self, w: WeightWord) -> u32 {
        u32::from(w.magnitude()) * self.multiplier()
    }

    /// Longest exposure this configuration can produce, in ticks.
    #[inline]
    pub fn max_tick(&self) -> u32 {
        self.match_tick(WeightWord::MAX)
    }

    #[inline]
    pub fn ticks_to_seconds(&self, ticks: u32) -> f64 {
        f64::from(ticks) * self.t_step
    }

    pub fn max_exposure(&self) -> f64 {
        self.ticks_to_seconds(self.max_tick())
    }
}

/// Exposure duration encoded by `w`: the first counter time at which the
/// selected window equals the stored word.
pub fn match_time(cfg: &CounterConfig, w: WeightWord) -> f64 {
    cfg.ticks_to_seconds(cfg.match_tick(w))
}

/// Exposure pulse produced by the converter, in counter ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimedPulse {
    pub assert_tick: u32,
    pub deassert_tick: u32,
}

impl TimedPulse {
    #[inline]
    pub fn width_ticks(&self) -> u32 {
        self.deassert_tick - self.assert_tick
    }

    pub fn width(&self, cfg: &CounterConfig) -> f64 {
        cfg.ticks_to_seconds(self.width_ticks())
    }
}

/// Pulse asserted at counter start and released at the weight match.
/// A pending reset forces the pulse low for the whole cycle.
pub fn pulse(cfg: &CounterConfig, w: WeightWord, reset: bool) -> TimedPulse {
    let deassert_tick = if reset { 0 } else { cfg.match_tick(w) };
    TimedPulse {
        assert_tick: 0,
        deassert_tick,
    }
}

/// Per-pixel weight storage (the SRAM/CAM cells bonded under the array).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightPlane {
    rows: usize,
    cols: usize,
    cells: Vec<WeightWord>,
}

impl WeightPlane {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![WeightWord::ZERO; rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    fn index(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::Index {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(row * self.cols + col)
    }

    pub fn write_weight(&mut self, row: usize, col: usize, w: WeightWord) -> Result<()> {
        let i = self.index(row, col)?;
        self.cells[i] = w;
        Ok(())
    }

    pub fn read(&self, row: usize, col: usize) -> Result<WeightWord> {
        Ok(self.cells[self.index(row, col)?])
    }

    /// Unchecked read for hot loops; callers guarantee bounds.
    #[inline]
    pub(crate) fn get(&self, row: usize, col: usize) -> WeightWord {
        self.cells[row * self.cols + col]
    }

    pub fn clear(&mut self) {
        self.cells.fill(WeightWord::ZERO);
    }

    pub fn iter(&self) -> impl Iterator<Item = WeightWord> + '_ {
        self.cells.iter().copied()
    }
}

/// Free-function form of [`WeightPlane::write_weight`].
pub fn write_weight(store: &mut WeightPlane, row: usize, col: usize, w: WeightWord) -> Result<()> {
    store.write_weight(row, col, w)
}
