//! Run configuration documents.
//!
//! Every section is optional and falls back to the nominal design point.
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use ctia_ipc::adc::AdcConfig;
use ctia_ipc::array::ArrayConfig;
use ctia_ipc::device::PixelParams;
use ctia_ipc::golden::CompareThresholds;
use ctia_ipc::mapper::ConvSpec;
use ctia_ipc::montecarlo::{McSetup, MismatchSpec};
use ctia_ipc::sweep::SweepConfig;
use ctia_ipc::wtc::CounterConfig;
use ctia_ipc::{Error, Hardware};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Verify,
    Sweep,
    Montecarlo,
    Metrics,
    ExportTransfer,
    Readout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Mosaic size of generated frames.
    pub rows: usize,
    pub cols: usize,
    /// Generated cases when no frame/weights are given.
    pub cases: usize,
    pub thresholds: CompareThresholds,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            cases: 1,
            thresholds: CompareThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Image size in sites.
    pub rows: usize,
    pub cols: usize,
    pub power_per_pixel_w: f64,
    pub cycle_time: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            rows: 1024,
            cols: 1280,
            power_per_pixel_w: 3.26e-6,
            cycle_time: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    /// External `w_norm,x_norm,volts` samples; the chain is swept when absent.
    pub samples: Option<PathBuf>,
    pub degree: usize,
    pub points: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            samples: None,
            degree: 1,
            points: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutConfig {
    /// Integration time in seconds; the longest weight exposure when absent.
    pub exposure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub seed: u64,
    pub pixel: PixelParams,
    pub array: ArrayConfig,
    pub wtc: CounterConfig,
    pub adc: AdcConfig,
    pub conv: ConvSpec,
    /// 16-bit PGM Bayer frame.
    pub frame: Option<PathBuf>,
    /// Weight and batch-norm document.
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub verify: VerifyConfig,
    pub sweep: SweepConfig,
    pub montecarlo: McSetup,
    pub mismatch: MismatchSpec,
    pub metrics: MetricsConfig,
    pub transfer: TransferConfig,
    pub readout: ReadoutConfig,
}


impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })
    }

    /// Reads a config file and anchors its relative paths.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, &e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.frame, &mut cfg.weights, &mut cfg.out, &mut cfg.transfer.samples] {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    pub fn hardware(&self) -> Hardware {
        Hardware {
            pixel: self.pixel,
            array: self.array,
            wtc: self.wtc,
            adc: self.adc,
        }
    }

    /// Checks every section and every input path the mode reads, collecting
    /// all problems.
    pub fn validate(&self, mode: Mode) -> Result<(), Error> {
        let mut errs = Vec::new();
        let mut check = |section: &str, r: Result<(), Error>| {
            if let Err(e) = r {
                match e {
                    Error::Validation(list) => errs.extend(list.into_iter().map(|m| format!("{section}: {m}"))),
                    other => errs.push(format!("{section}: {other}")),
                }
            }
        };
        check("pixel", self.pixel.validate());
        check("array", self.array.validate());
        check("wtc", self.wtc.validate());
        check("adc", self.adc.validate());
        check("conv", self.conv.validate());
        match mode {
            Mode::Sweep => check("sweep", self.sweep.validate()),
            Mode::Montecarlo => {
                check("montecarlo", self.montecarlo.validate());
                check("mismatch", self.mismatch.validate());
            }
            _ => {}
        }
        let needs = |p: &Option<PathBuf>, name: &str, required: bool, errs: &mut Vec<String>| match p {
            Some(p) if !p.is_file() => errs.push(format!("{name}: {} does not exist", p.display())),
            None if required => errs.push(format!("{name}: path is required for this mode")),
            _ => {}
        };
        match mode {
            Mode::Simulate => {
                needs(&self.frame, "frame", true, &mut errs);
                needs(&self.weights, "weights", true, &mut errs);
            }
            Mode::Readout => needs(&self.frame, "frame", true, &mut errs),
            Mode::Verify => {
                needs(&self.frame, "frame", false, &mut errs);
                needs(&self.weights, "weights", false, &mut errs);
                if self.frame.is_some() != self.weights.is_some() {
                    errs.push("verify: give both frame and weights, or neither".into());
                }
                if self.verify.cases == 0 {
                    errs.push("verify: cases must be >= 1".into());
                }
            }
            Mode::ExportTransfer => {
                needs(&self.transfer.samples, "transfer.samples", false, &mut errs);
                if self.transfer.degree == 0 {
                    errs.push("transfer: degree must be >= 1".into());
                }
                if self.transfer.points < 2 {
                    errs.push("transfer: points must be >= 2".into());
                }
            }
            Mode::Metrics => {
                if !(self.metrics.power_per_pixel_w.is_finite() && self.metrics.power_per_pixel_w > 0.0) {
                    errs.push("metrics: power_per_pixel_w must be positive".into());
                }
                if let Some(t) = self.metrics.cycle_time.filter(|t| !(t.is_finite() && *t > 0.0)) {
                    errs.push(format!("metrics: cycle_time must be positive, got {t}"));
                }
            }
            _ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.lines().take(line.saturating_sub(1)).map(|l| l.len() + 1).sum();
    start + column.saturating_sub(1)
}
