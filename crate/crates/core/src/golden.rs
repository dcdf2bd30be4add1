//! Integer reference model of the fused first layer and the comparison
//! harness used to check the analog simulation against it.
//!
//! The reference accumulates `magnitude * raw` in exact integer arithmetic
//! per polarity, converts each polarity to ADC codes through the
//! [`CalibrationMap`], and then applies the same offset, ReLU,
//! requantization and pooling as the hardware. Keeping the two-cycle
//! structure (quantize each polarity, then subtract) is what makes the
//! analog path agree within one output LSB.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adc::{maxpool, relu_requantize, ActivationMap, AdcConfig, DigitalActivation};
use crate::array::ArrayConfig;
use crate::device::PixelParams;
use crate::error::{Error, Result};
use crate::frame::{site_pixel, BayerFrame, RAW_FULL_SCALE};
use crate::mapper::{output_dims, ConvSpec, FusedLayer, ImageDims, LayerDims};
use crate::wtc::{CounterConfig, MAX_MAGNITUDE};

/// Limit on preloaded offsets; far beyond any reachable count.
const OFFSET_CODE_LIMIT: f64 = (1u64 << 40) as f64;

/// Conversion from normalized weight-input products to ADC-input volts,
/// derived from the physical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    /// ADC-input volts for one unit of `w_norm * x_norm` on one tap.
    pub volts_per_unit_product: f64,
    /// The same in ADC codes.
    pub lsb_per_unit: f64,
    /// Whether a full-scale pixel stays below the headroom clamp.
    pub clamp_free: bool,
}

impl CalibrationMap {
    pub fn derive(
        pixel: &PixelParams,
        wtc: &CounterConfig,
        array: &ArrayConfig,
        adc: &AdcConfig,
    ) -> Result<Self> {
        pixel.validate()?;
        wtc.validate()?;
        array.validate()?;
        adc.validate()?;
        let full_scale_drop = pixel.raw_discharge(pixel.i_max, wtc.max_exposure());
        let volts_per_unit_product = full_scale_drop / array.divider();
        Ok(Self {
            volts_per_unit_product,
            lsb_per_unit: volts_per_unit_product / adc.lsb(),
            clamp_free: full_scale_drop <= pixel.headroom,
        })
    }

    /// ADC codes per unit of `magnitude * raw`.
    #[inline]
    pub fn codes_per_tap_unit(&self) -> f64 {
        self.lsb_per_unit / (f64::from(MAX_MAGNITUDE) * f64::from(RAW_FULL_SCALE))
    }

    /// Batch-norm offset `b` (in fused-layer units) as a counter preload.
    ///
    /// One fused unit is `1 / weight_scale` magnitude steps at full input,
    /// i.e. `volts_per_unit_product / (15 * weight_scale)` volts.
    pub fn offset_codes(&self, b: f64, weight_scale: f64) -> i64 {
        if weight_scale <= 0.0 || !b.is_finite() {
            return 0;
        }
        let codes = b * self.lsb_per_unit / (f64::from(MAX_MAGNITUDE) * weight_scale);
        codes.round().clamp(-OFFSET_CODE_LIMIT, OFFSET_CODE_LIMIT) as i64
    }

    /// Preloads for every channel of a fused layer.
    pub fn layer_offsets(&self, fused: &FusedLayer) -> Vec<i64> {
        fused
            .offsets
            .iter()
            .map(|&b| self.offset_codes(b, fused.weight_scale()))
            .collect()
    }
}

/// Output of a layer evaluation, from either the simulator or the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub dims: LayerDims,
    pub channels: usize,
    /// Pre-ReLU signed counts, `[channel][conv_row][conv_col]`.
    pub signed_codes: Vec<i64>,
    /// Pooled activations per channel.
    pub activations: Vec<ActivationMap>,
}

impl LayerOutput {
    /// Applies ReLU, requantization and pooling to signed counts.
    pub fn finish(
        dims: LayerDims,
        channels: usize,
        signed_codes: Vec<i64>,
        adc: &AdcConfig,
        p_s: usize,
    ) -> Result<Self> {
        let per_channel = dims.conv_elements();
        let activations = signed_codes
            .chunks(per_channel)
            .map(|codes| {
                let map = ActivationMap::new(
                    dims.conv_rows,
                    dims.conv_cols,
                    codes.iter().map(|&c| relu_requantize(adc, c)).collect(),
                )?;
                maxpool(&map, p_s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dims,
            channels,
            signed_codes,
            activations,
        })
    }

    pub fn signed_code(&self, ch: usize, r: usize, c: usize) -> i64 {
        self.signed_codes[(ch * self.dims.conv_rows + r) * self.dims.conv_cols + c]
    }
}

/// Site grid of an even-sized frame, checked against the layer.
pub(crate) fn layer_geometry(frame: &BayerFrame, spec: &ConvSpec) -> Result<(ImageDims, LayerDims)> {
    let (rows, cols) = frame.site_dims()?;
    let image = ImageDims::new(rows, cols);
    let dims = output_dims(spec, image).map_err(|e| Error::Dimension(e.to_string()))?;
    Ok((image, dims))
}

fn check_layer(fused: &FusedLayer, spec: &ConvSpec) -> Result<()> {
    let q = &fused.quantized;
    if q.k != spec.k || q.c_in != spec.c_in || q.c_o != spec.c_o || fused.offsets.len() != spec.c_o {
        return Err(Error::Dimension(format!(
            "fused layer {}x{}x{k}x{k} with {} offsets does not match spec {}x{}x{}x{}",
            q.c_o,
            q.c_in,
            fused.offsets.len(),
            spec.c_o,
            spec.c_in,
            spec.k,
            spec.k,
            k = q.k
        )));
    }
    Ok(())
}

/// Bit-exact reference of the fused first layer.
pub fn golden_layer(
    frame: &BayerFrame,
    fused: &FusedLayer,
    spec: &ConvSpec,
    adc: &AdcConfig,
    cal: &CalibrationMap,
) -> Result<LayerOutput> {
    spec.validate()?;
    adc.validate()?;
    check_layer(fused, spec)?;
    let (_, dims) = layer_geometry(frame, spec)?;
    let frame = frame.padded(spec.p);
    let q = &fused.quantized;
    let offsets = cal.layer_offsets(fused);
    let scale = cal.codes_per_tap_unit();
    let max_code = i64::from(adc.max_code());
    let to_code = |acc: u64| -> i64 {
        let steps = (acc as f64 * scale).floor();
        if steps >= max_code as f64 {
            max_code
        } else {
            steps as i64
        }
    };

    let rows: Vec<Vec<i64>> = (0..spec.c_o * dims.conv_rows)
        .into_par_iter()
        .map(|idx| {
            let (ch, or) = (idx / dims.conv_rows, idx % dims.conv_rows);
            (0..dims.conv_cols)
                .map(|oc| {
                    let (sr, sc) = (or * spec.s, oc * spec.s);
                    let (mut acc_pos, mut acc_neg) = (0u64, 0u64);
                    for c in 0..spec.c_in {
                        for r in 0..spec.k {
                            for col in 0..spec.k {
                                let i = q.index(ch, c, r, col);
                                let (pr, pc) = site_pixel(sr + r, sc + col, c);
                                let x = u64::from(frame.raw(pr, pc));
                                acc_pos += u64::from(q.positive[i].magnitude()) * x;
                                acc_neg += u64::from(q.negative[i].magnitude()) * x;
                            }
                        }
                    }
                    to_code(acc_pos) - to_code(acc_neg) + offsets[ch]
                })
                .collect()
        })
        .collect();
    LayerOutput::finish(dims, spec.c_o, rows.concat(), adc, spec.p_s)
}

/// Thresholds a comparison must meet to pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareThresholds {
    pub max_abs_diff: u16,
    pub min_fraction_within_one: f64,
}

impl Default for CompareThresholds {
    fn default() -> Self {
        Self {
            max_abs_diff: 1,
            min_fraction_within_one: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub nodes: usize,
    pub max_abs_diff: u16,
    pub fraction_exact: f64,
    pub fraction_within_one: f64,
}

impl CompareReport {
    pub fn passes(&self, t: &CompareThresholds) -> bool {
        self.max_abs_diff <= t.max_abs_diff && self.fraction_within_one >= t.min_fraction_within_one
    }
}

/// Element-wise comparison of two sets of activation maps.
pub fn compare_runs(sim: &[ActivationMap], gold: &[ActivationMap]) -> Result<CompareReport> {
    if sim.len() != gold.len() {
        return Err(Error::Dimension(format!(
            "{} simulated channels vs {} reference channels",
            sim.len(),
            gold.len()
        )));
    }
    let (mut nodes, mut exact, mut within, mut max_abs) = (0usize, 0usize, 0usize, 0u16);
    for (ch, (a, b)) in sim.iter().zip(gold).enumerate() {
        if (a.rows, a.cols) != (b.rows, b.cols) {
            return Err(Error::Dimension(format!(
                "channel {ch}: {}x{} vs {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        for (x, y) in a.values.iter().zip(&b.values) {
            let d = x.value().abs_diff(y.value());
            nodes += 1;
            exact += usize::from(d == 0);
            within += usize::from(d <= 1);
            max_abs = max_abs.max(d);
        }
    }
    let frac = |n: usize| if nodes == 0 { 1.0 } else { n as f64 / nodes as f64 };
    Ok(CompareReport {
        nodes,
        max_abs_diff: max_abs,
        fraction_exact: frac(exact),
        fraction_within_one: frac(within),
    })
}

/// Convenience for tests and reports: a map filled with one value.
pub fn constant_map(rows: usize, cols: usize, v: u16) -> ActivationMap {
    ActivationMap {
        rows,
        cols,
        values: vec![DigitalActivation(v); rows * cols],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::{BnParams, QuantizedWeights, WeightTensor};

    fn cal() -> CalibrationMap {
        CalibrationMap::derive(
            &PixelParams::default(),
            &CounterConfig::default(),
            &ArrayConfig::default(),
            &AdcConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn calibration_from_defaults() {
        let c = cal();
        // 50 pA * 15 us / 10 fF / 7.
        assert!((c.volts_per_unit_product - 0.075 / 7.0).abs() < 1e-15);
        assert!((c.lsb_per_unit - 0.075 / 7.0 / 0.01).abs() < 1e-12);
        assert!(c.clamp_free);
    }

    #[test]
    fn offset_code_conversion() {
        let c = cal();
        assert_eq!(c.offset_codes(0.0, 0.1), 0);
        assert_eq!(c.offset_codes(1.0, 0.0), 0);
        // One fused unit at scale 1/15 is one full-scale tap.
        let one_tap = c.offset_codes(1.0, 1.0 / 15.0);
        assert_eq!(one_tap, c.lsb_per_unit.round() as i64);
        assert_eq!(c.offset_codes(-1.0, 1.0 / 15.0), -one_tap);
    }

    fn unit_layer(tap: i8, b: f64) -> (FusedLayer, ConvSpec) {
        let spec = ConvSpec {
            k: 1,
            s: 1,
            c_o: 1,
            p_s: 1,
            ..ConvSpec::default()
        };
        let quantized = QuantizedWeights::from_signed(1, 4, 1, &[tap, 0, 0, 0], 1.0 / 15.0).unwrap();
        let fused = FusedLayer {
            scaled_weights: WeightTensor::zeros(1, 4, 1),
            offsets: vec![b],
            quantized,
        };
        (fused, spec)
    }

    #[test]
    fn zero_frame_gives_zero() {
        let (fused, spec) = unit_layer(15, 0.0);
        let frame = BayerFrame::dark(8, 8, 50e-12).unwrap();
        let out = golden_layer(&frame, &fused, &spec, &AdcConfig::default(), &cal()).unwrap();
        assert!(out.activations[0].values.iter().all(|v| v.0 == 0));
    }

    #[test]
    fn single_tap_full_scale_is_max_activation() {
        let (fused, spec) = unit_layer(15, 0.0);
        let frame = BayerFrame::from_raw(2, 2, vec![u16::MAX; 4], 50e-12).unwrap();
        // Make one tap span the whole ADC range: 0.64 V per unit product.
        let big = CalibrationMap {
            volts_per_unit_product: 0.64,
            lsb_per_unit: 64.0,
            clamp_free: true,
        };
        let out = golden_layer(&frame, &fused, &spec, &AdcConfig::default(), &big).unwrap();
        assert_eq!(out.signed_code(0, 0, 0), 63);
        assert_eq!(out.activations[0].values, vec![DigitalActivation(15)]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let (fused, spec) = unit_layer(1, 0.0);
        let wrong = ConvSpec { c_o: 2, ..spec };
        let frame = BayerFrame::dark(4, 4, 1.0).unwrap();
        assert!(matches!(
            golden_layer(&frame, &fused, &wrong, &AdcConfig::default(), &cal()),
            Err(Error::Dimension(_))
        ));
        let odd = BayerFrame::dark(3, 4, 1.0).unwrap();
        assert!(golden_layer(&odd, &fused, &spec, &AdcConfig::default(), &cal()).is_err());
    }

    #[test]
    fn comparison_stats() {
        let a = constant_map(4, 4, 3);
        let r = compare_runs(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap();
        assert_eq!(r.max_abs_diff, 0);
        assert_eq!(r.fraction_exact, 1.0);
        assert!(r.passes(&CompareThresholds::default()));

        let mut b = a.clone();
        b.values[5] = DigitalActivation(4);
        let r = compare_runs(std::slice::from_ref(&a), &[b]).unwrap();
        assert_eq!(r.fraction_within_one, 1.0);
        assert!(r.fraction_exact < 1.0);
        assert_eq!(r.max_abs_diff, 1);

        let mut c = a.clone();
        c.values[0] = DigitalActivation(9);
        let r = compare_runs(std::slice::from_ref(&a), &[c]).unwrap();
        assert!(!r.passes(&CompareThresholds::default()));

        assert!(compare_runs(std::slice::from_ref(&a), &[constant_map(4, 3, 3)]).is_err());
        assert!(compare_runs(std::slice::from_ref(&a), &[]).is_err());
    }

    #[test]
    fn bn_offset_shifts_relu_threshold() {
        // A constant input whose positive sum is N codes is zeroed exactly
        // when the preload is <= -N.
        let frame = BayerFrame::from_raw(2, 2, vec![u16::MAX; 4], 50e-12).unwrap();
        let c = cal();
        let n = (c.lsb_per_unit).floor() as i64;
        let spec = ConvSpec {
            k: 1,
            s: 1,
            c_o: 1,
            p_s: 1,
            ..ConvSpec::default()
        };
        let bn = BnParams::identity(1);
        let w = WeightTensor::new(1, 4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let fused = FusedLayer::build(&w, &bn, &spec).unwrap();
        let out = golden_layer(&frame, &fused, &spec, &AdcConfig::default(), &c).unwrap();
        assert_eq!(out.signed_code(0, 0, 0), n);
    }
}
