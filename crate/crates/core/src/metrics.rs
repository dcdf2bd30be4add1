//! Formula-level performance metrics: bandwidth reduction, operation
//! counts, and a frame energy/throughput estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::CHANNELS;
use crate::mapper::{build_schedule, output_dims, ConvSpec, ImageDims, Schedule};
use crate::wtc::CounterConfig;

/// Raw sensor bits per input sample.
pub const INPUT_BITS: f64 = 12.0;
/// ADC conversion time in counter ticks (one full 6-bit ramp).
pub const CONVERSION_TICKS: u32 = 64;

/// Published figures for the fabricated design. Carried for context only;
/// none of them is a simulation target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFigures {
    pub br: f64,
    pub ops_per_second: f64,
    pub ops_per_watt: f64,
    pub power_per_pixel_w: f64,
}

impl Default for ReferenceFigures {
    fn default() -> Self {
        Self {
            br: 12.08,
            ops_per_second: 1.98e9,
            ops_per_watt: 3.39e9,
            power_per_pixel_w: 3.26e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReduction {
    /// `I/O * 3/4 * 12/N_b * 1/p_s^2` with `O` the pre-pool element count.
    pub br_printed: f64,
    /// Input bits over post-pool output bits.
    pub br_bits: f64,
}

/// Both readings of the bandwidth-reduction figure.
///
/// `I = rows * cols * 4`. The printed form uses the convolution output
/// `O = conv_elements * c_o`; the bit-ratio form divides `I * 12` bits by
/// the pooled output `pool_elements * c_o * N_b` bits.
pub fn bandwidth_reduction(spec: &ConvSpec, image: ImageDims) -> Result<BandwidthReduction> {
    let dims = output_dims(spec, image)?;
    if dims.conv_elements() == 0 || dims.pool_elements() == 0 {
        return Err(Error::InvalidConfiguration("layer has no outputs".into()));
    }
    let input = (image.rows * image.cols * CHANNELS) as f64;
    let n_b = f64::from(spec.n_b);
    let c_o = spec.c_o as f64;
    let p_s = spec.p_s as f64;
    let conv_out = dims.conv_elements() as f64 * c_o;
    let br_printed = input / conv_out * 0.75 * (INPUT_BITS / n_b) / (p_s * p_s);
    let br_bits = input * INPUT_BITS / (dims.pool_elements() as f64 * c_o * n_b);
    Ok(BandwidthReduction { br_printed, br_bits })
}

/// Operations per frame, counting a multiply and an add per tap.
pub fn op_count(spec: &ConvSpec, image: ImageDims) -> Result<u64> {
    let dims = output_dims(spec, image)?;
    Ok(dims.conv_elements() as u64 * spec.c_o as u64 * 2 * (spec.k * spec.k * spec.c_in) as u64)
}

/// Default cycle length: the longest exposure plus one ADC conversion.
pub fn default_cycle_time(wtc: &CounterConfig) -> f64 {
    wtc.ticks_to_seconds(wtc.max_tick() + CONVERSION_TICKS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub frame_time: f64,
    pub energy: f64,
    pub gops: f64,
    pub gops_per_watt: f64,
}

/// Frame time and energy from the schedule, assuming every active pixel
/// draws `power_per_pixel` for the whole cycle, twice per cycle (one pass
/// per weight polarity).
pub fn energy_estimate(
    spec: &ConvSpec,
    image: ImageDims,
    power_per_pixel: f64,
    schedule: &Schedule,
    cycle_time: f64,
) -> Result<EnergyEstimate> {
    if !(power_per_pixel > 0.0 && power_per_pixel.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "power per pixel must be positive, got {power_per_pixel}"
        )));
    }
    if !(cycle_time > 0.0 && cycle_time.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "cycle time must be positive, got {cycle_time}"
        )));
    }
    let ops = op_count(spec, image)? as f64;
    let frame_time = schedule.total_cycles() as f64 * cycle_time * 2.0;
    let energy = schedule.total_active_pixels() as f64 * power_per_pixel * cycle_time * 2.0;
    let gops = ops / frame_time;
    Ok(EnergyEstimate {
        frame_time,
        energy,
        gops,
        gops_per_watt: gops / (energy / frame_time),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub image: ImageDims,
    pub conv_rows: usize,
    pub conv_cols: usize,
    pub pool_rows: usize,
    pub pool_cols: usize,
    pub br_printed: f64,
    pub br_bits: f64,
    pub activation_count_cycle0: usize,
    pub total_cycles: usize,
    pub total_ops: u64,
    pub cycle_time: f64,
    pub power_per_pixel_w: f64,
    pub frame_time: f64,
    pub energy: f64,
    pub gops: f64,
    pub gops_per_watt: f64,
    pub reference: ReferenceFigures,
}

/// Assembles every metric for one configuration.
pub fn metrics_report(
    spec: &ConvSpec,
    image: ImageDims,
    wtc: &CounterConfig,
    power_per_pixel: f64,
    cycle_time: Option<f64>,
) -> Result<MetricsReport> {
    wtc.validate()?;
    let dims = output_dims(spec, image)?;
    let br = bandwidth_reduction(spec, image)?;
    let schedule = build_schedule(spec, image)?;
    let cycle_time = cycle_time.unwrap_or_else(|| default_cycle_time(wtc));
    let e = energy_estimate(spec, image, power_per_pixel, &schedule, cycle_time)?;
    Ok(MetricsReport {
        image,
        conv_rows: dims.conv_rows,
        conv_cols: dims.conv_cols,
        pool_rows: dims.pool_rows,
        pool_cols: dims.pool_cols,
        br_printed: br.br_printed,
        br_bits: br.br_bits,
        activation_count_cycle0: schedule.cycle0_active_pixels(),
        total_cycles: schedule.total_cycles(),
        total_ops: op_count(spec, image)?,
        cycle_time,
        power_per_pixel_w: power_per_pixel,
        frame_time: e.frame_time,
        energy: e.energy,
        gops: e.gops,
        gops_per_watt: e.gops_per_watt,
        reference: ReferenceFigures::default(),
    })
}
