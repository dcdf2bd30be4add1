//! Phase-level simulation of a whole first layer on the array.
//!
//! For every output channel and row band the schedule's cycles run in
//! order. Each cycle is a write phase (kernel magnitudes of one polarity
//! into the window cells), a compute phase (integrate, accumulate, combine)
//! and a clear, once for positive and once for negative weights. The column
//! ADC then forms the signed count, and ReLU, requantization and pooling
//! produce the activation maps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adc::{cds_signed, AdcConfig};
use crate::array::{
    clear_window_weights, load_window_weights, run_mac_cycle, ArrayConfig, MacCycleResult, Polarity, Window,
};
use crate::device::PixelParams;
use crate::error::{Error, Result};
use crate::frame::BayerFrame;
use crate::golden::{layer_geometry, CalibrationMap, LayerOutput};
use crate::mapper::{build_schedule, ConvSpec, FusedLayer};
use crate::wtc::{CounterConfig, WeightPlane};

/// Everything describing the hardware under simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hardware {
    pub pixel: PixelParams,
    pub array: ArrayConfig,
    pub wtc: CounterConfig,
    pub adc: AdcConfig,
}

impl Hardware {
    pub fn validate(&self) -> Result<()> {
        self.pixel.validate()?;
        self.array.validate()?;
        self.wtc.validate()?;
        self.adc.validate()
    }

    pub fn calibration(&self) -> Result<CalibrationMap> {
        CalibrationMap::derive(&self.pixel, &self.wtc, &self.array, &self.adc)
    }
}

/// Both polarity samples for every node of one output row of one channel.
fn run_row(
    hw: &Hardware,
    frame: &BayerFrame,
    fused: &FusedLayer,
    spec: &ConvSpec,
    band: &[crate::mapper::Cycle],
    ch: usize,
    out_row: usize,
    out_cols: usize,
) -> Result<Vec<MacCycleResult>> {
    let q = &fused.quantized;
    let taps = spec.taps();
    let origin_row = 2 * out_row * spec.s;
    let mut plane = WeightPlane::new(2 * spec.k, frame.cols());
    let mut results = vec![MacCycleResult::default(); out_cols];

    for cycle in band {
        let windows: Vec<Window> = cycle
            .out_cols
            .iter()
            .map(|&oc| Window {
                site_row: out_row * spec.s,
                site_col: oc * spec.s,
                k: spec.k,
            })
            .collect();
        for polarity in Polarity::BOTH {
            let channel_taps = &q.plane(polarity)[ch * taps..(ch + 1) * taps];
            load_window_weights(&mut plane, origin_row, channel_taps, &windows)?;
            let nodes = run_mac_cycle(
                &hw.array,
                &hw.pixel,
                frame,
                &plane,
                origin_row,
                &hw.wtc,
                &windows,
                polarity,
            )?;
            clear_window_weights(&mut plane, origin_row, &windows)?;
            for (&oc, node) in cycle.out_cols.iter().zip(nodes) {
                match polarity {
                    Polarity::Positive => results[oc].v_pos = node.v_adc_in,
                    Polarity::Negative => results[oc].v_neg = node.v_adc_in,
                }
            }
        }
    }
    Ok(results)
}

/// ADC-input voltages for every node, `[channel][conv_row][conv_col]`.
pub fn simulate_analog(
    hw: &Hardware,
    frame: &BayerFrame,
    fused: &FusedLayer,
    spec: &ConvSpec,
) -> Result<Vec<MacCycleResult>> {
    hw.validate()?;
    let (image, dims) = layer_geometry(frame, spec)?;
    if image.rows > hw.array.rows || image.cols > hw.array.cols {
        return Err(Error::Dimension(format!(
            "{}x{} site frame does not fit the {}x{} array",
            image.rows, image.cols, hw.array.rows, hw.array.cols
        )));
    }
    let q = &fused.quantized;
    if q.k != spec.k || q.c_in != spec.c_in || q.c_o != spec.c_o {
        return Err(Error::Dimension(format!(
            "fused layer {}x{}x{}x{} does not match spec",
            q.c_o, q.c_in, q.k, q.k
        )));
    }
    let schedule = build_schedule(spec, image)?;
    let padded = frame.padded(spec.p);

    let rows = (0..spec.c_o * dims.conv_rows)
        .into_par_iter()
        .map(|idx| {
            let (ch, row) = (idx / dims.conv_rows, idx % dims.conv_rows);
            run_row(hw, &padded, fused, spec, &schedule.band, ch, row, dims.conv_cols)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.concat())
}

/// Full layer: analog chain, digital CDS with the batch-norm preload, ReLU,
/// requantization and pooling.
pub fn simulate_layer(
    hw: &Hardware,
    frame: &BayerFrame,
    fused: &FusedLayer,
    spec: &ConvSpec,
) -> Result<LayerOutput> {
    let (_, dims) = layer_geometry(frame, spec)?;
    if fused.offsets.len() != spec.c_o {
        return Err(Error::Dimension(format!(
            "{} offsets for {} channels",
            fused.offsets.len(),
            spec.c_o
        )));
    }
    let analog = simulate_analog(hw, frame, fused, spec)?;
    let offsets = hw.calibration()?.layer_offsets(fused);
    let per_channel = dims.conv_elements();
    let codes = analog
        .iter()
        .enumerate()
        .map(|(i, node)| cds_signed(&hw.adc.with_offset(offsets[i / per_channel]), node.v_pos, node.v_neg))
        .collect::<Result<Vec<_>>>()?;
    LayerOutput::finish(dims, spec.c_o, codes, &hw.adc, spec.p_s)
}
