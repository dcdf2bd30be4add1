//! Mismatch Monte Carlo on a single window at fixed weight and input.
//!
//! Each trial perturbs the pixel feedback capacitors, photocurrent gains,
//! reset levels and the divider capacitors with Gaussian draws, then reruns
//! integration, CBL accumulation and charge sharing. Global draws are shared
//! by every instance in a trial; local draws are per pixel (and per divider
//! capacitor). Trial `t` uses stream `t` of a ChaCha generator seeded with
//! the run seed, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{accumulate_column, combine_columns, run_mac_cycle, ArrayConfig, Polarity, Window};
use crate::device::{integrate, PixelParams};
use crate::error::{Error, Result};
use crate::frame::{BayerFrame, RAW_FULL_SCALE};
use crate::sim::Hardware;
use crate::wtc::{match_time, WeightPlane, WeightWord, MAX_MAGNITUDE};

pub const DEFAULT_BINS: usize = 30;
/// Histogram half-width in sample standard deviations.
pub const HISTOGRAM_SPAN: f64 = 4.0;

/// One set of standard deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sigmas {
    /// Relative, applied to every capacitor.
    pub cap: f64,
    /// Volts, added to the sampled drop.
    pub vrst: f64,
    /// Relative, applied to the photocurrent.
    pub gain: f64,
}

impl Sigmas {
    fn check(&self, which: &str, errs: &mut Vec<String>) {
        for (name, v) in [("cap", self.cap), ("vrst", self.vrst), ("gain", self.gain)] {
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("{which}.{name} sigma must be finite and >= 0, got {v}"));
            }
        }
    }

    fn normals(&self) -> [Normal<f64>; 3] {
        [self.cap, self.vrst, self.gain].map(|s| Normal::new(0.0, s).expect("validated sigma"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MismatchSpec {
    pub local: Sigmas,
    pub global: Sigmas,
    pub trials: usize,
    pub seed: u64,
    pub bins: usize,
}

impl Default for MismatchSpec {
    fn default() -> Self {
        Self {
            local: Sigmas::default(),
            global: Sigmas::default(),
            trials: 1000,
            seed: 0,
            bins: DEFAULT_BINS,
        }
    }
}

impl MismatchSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.local.check("local", &mut errs);
        self.global.check("global", &mut errs);
        if self.trials == 0 {
            errs.push("trials must be >= 1".into());
        }
        if self.bins == 0 {
            errs.push("bins must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// The fixed operating point: one `k x k` window, every tap holding the
/// same magnitude, every pixel seeing the same normalized input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSetup {
    pub k: usize,
    pub magnitude: u8,
    pub x_norm: f64,
}

impl Default for McSetup {
    fn default() -> Self {
        Self {
            k: 3,
            magnitude: 8,
            x_norm: 0.5,
        }
    }
}

impl McSetup {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.k == 0 {
            errs.push("k must be >= 1".into());
        }
        if self.magnitude > MAX_MAGNITUDE {
            errs.push(format!("magnitude must be <= {MAX_MAGNITUDE}, got {}", self.magnitude));
        }
        if !(0.0..=1.0).contains(&self.x_norm) {
            errs.push(format!("x_norm must lie in [0, 1], got {}", self.x_norm));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    fn frame(&self, i_max: f64) -> Result<BayerFrame> {
        let raw = (self.x_norm * f64::from(RAW_FULL_SCALE)).round() as u16;
        let side = 2 * self.k;
        BayerFrame::from_raw(side, side, vec![raw; side * side], i_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub nominal: f64,
    pub mean: f64,
    pub std: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub samples: Vec<f64>,
    pub summary: McSummary,
}

/// Nominal ADC-input voltage of the setup through the regular array path.
pub fn nominal_output(hw: &Hardware, setup: &McSetup) -> Result<f64> {
    hw.validate()?;
    setup.validate()?;
    let frame = setup.frame(hw.pixel.i_max)?;
    let mut plane = WeightPlane::new(frame.rows(), frame.cols());
    let w = WeightWord::new(setup.magnitude)?;
    for r in 0..frame.rows() {
        for c in 0..frame.cols() {
            plane.write_weight(r, c, w)?;
        }
    }
    let win = Window {
        site_row: 0,
        site_col: 0,
        k: setup.k,
    };
    let array = ArrayConfig {
        mode: crate::array::ArrayMode::Mac,
        ..hw.array
    };
    let nodes = run_mac_cycle(&array, &hw.pixel, &frame, &plane, 0, &hw.wtc, &[win], Polarity::Positive)?;
    Ok(nodes[0].v_adc_in)
}

#[inline]
fn factor(dev: f64) -> f64 {
    (1.0 + dev).max(f64::MIN_POSITIVE)
}

fn run_trial(hw: &Hardware, setup: &McSetup, frame: &BayerFrame, mm: &MismatchSpec, trial: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mm.seed);
    rng.set_stream(trial);
    let [g_cap, g_vrst, g_gain] = mm.global.normals();
    let [l_cap, l_vrst, l_gain] = mm.local.normals();

    let gc = g_cap.sample(&mut rng);
    let gv = g_vrst.sample(&mut rng);
    let gg = g_gain.sample(&mut rng);

    let mut array = hw.array;
    array.c1 *= factor(gc) * factor(l_cap.sample(&mut rng));
    array.c2 *= factor(gc) * factor(l_cap.sample(&mut rng));
    array.c_f_acc *= factor(gc) * factor(l_cap.sample(&mut rng));

    let exposure = match_time(&hw.wtc, WeightWord::new(setup.magnitude)?);
    let win = Window {
        site_row: 0,
        site_col: 0,
        k: setup.k,
    };
    let mut columns = Vec::with_capacity(setup.k);
    let mut buf = Vec::with_capacity(4 * setup.k);
    for j in 0..setup.k {
        buf.clear();
        for (pr, pc) in win.column_pixels(j) {
            let pixel = PixelParams {
                c_f: hw.pixel.c_f * factor(gc) * factor(l_cap.sample(&mut rng)),
                ..hw.pixel
            };
            let gain = factor(gg) * factor(l_gain.sample(&mut rng));
            let offset = gv + l_vrst.sample(&mut rng);
            let drop = integrate(&pixel, frame.photocurrent(pr, pc) * gain, exposure)?;
            buf.push((drop + offset).clamp(0.0, pixel.headroom));
        }
        columns.push(accumulate_column(&buf)?);
    }
    combine_columns(&array, &columns)
}

fn sample_std(samples: &[f64], mean: f64) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let ss: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (samples.len() - 1) as f64).sqrt()
}

/// Counts over `mean +- 4 std`; out-of-range samples land in the edge bins.
/// A zero spread collapses to one bin.
pub fn histogram(samples: &[f64], mean: f64, std: f64, bins: usize) -> Histogram {
    if !(std > 0.0) || bins <= 1 {
        return Histogram {
            lo: mean,
            hi: mean,
            counts: vec![samples.len() as u64],
        };
    }
    let (lo, hi) = (mean - HISTOGRAM_SPAN * std, mean + HISTOGRAM_SPAN * std);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in samples {
        let b = ((v - lo) / width).floor();
        let idx = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        counts[idx] += 1;
    }
    Histogram { lo, hi, counts }
}

/// Runs every trial and summarizes the ADC-input voltage distribution.
pub fn monte_carlo(hw: &Hardware, setup: &McSetup, mm: &MismatchSpec) -> Result<McResult> {
    mm.validate()?;
    let nominal = nominal_output(hw, setup)?;
    let frame = setup.frame(hw.pixel.i_max)?;
    let samples = (0..mm.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(hw, setup, &frame, mm, t))
        .collect::<Result<Vec<_>>>()?;
    let first = samples[0];
    let mean = first + samples.iter().map(|v| v - first).sum::<f64>() / samples.len() as f64;
    let std = sample_std(&samples, mean);
    let histogram = histogram(&samples, mean, std, mm.bins);
    Ok(McResult {
        samples,
        summary: McSummary {
            nominal,
            mean,
            std,
            histogram,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(local_gain: f64, trials: usize) -> MismatchSpec {
        MismatchSpec {
            local: Sigmas {
                gain: local_gain,
                ..Sigmas::default()
            },
            trials,
            seed: 7,
            ..MismatchSpec::default()
        }
    }

    #[test]
    fn zero_sigma_is_nominal() {
        let r = monte_carlo(&Hardware::default(), &McSetup::default(), &spec(0.0, 50)).unwrap();
        assert!(r.summary.nominal > 0.0);
        assert!(r.samples.iter().all(|&v| v == r.summary.nominal));
        assert_eq!(r.summary.std, 0.0);
        assert_eq!(r.summary.histogram.counts, vec![50]);
    }

    #[test]
    fn nominal_matches_closed_form() {
        let setup = McSetup::default();
        let hw = Hardware::default();
        let raw = (0.5f64 * 65535.0).round();
        // 4k pixels per column, k columns, divider 7.
        let per_pixel = 50e-12 * raw / 65535.0 * 8e-6 / 10e-15;
        let expect = per_pixel * 12.0 * 3.0 / 7.0;
        let got = nominal_output(&hw, &setup).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn seeds_replay() {
        let a = monte_carlo(&Hardware::default(), &McSetup::default(), &spec(0.01, 200)).unwrap();
        let b = monte_carlo(&Hardware::default(), &McSetup::default(), &spec(0.01, 200)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(0.01, 200);
        other.seed = 8;
        let c = monte_carlo(&Hardware::default(), &McSetup::default(), &other).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn histogram_conserves_count() {
        let r = monte_carlo(&Hardware::default(), &McSetup::default(), &spec(0.02, 300)).unwrap();
        let h = &r.summary.histogram;
        assert_eq!(h.counts.len(), DEFAULT_BINS);
        assert_eq!(h.counts.iter().sum::<u64>(), 300);
    }

    #[test]
    fn bad_spec_lists_all() {
        let mm = MismatchSpec {
            local: Sigmas {
                cap: -1.0,
                vrst: f64::NAN,
                gain: 0.0,
            },
            trials: 0,
            ..MismatchSpec::default()
        };
        match mm.validate() {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 3),
            other => panic!("{other:?}"),
        }
    }
}
