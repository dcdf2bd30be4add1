//! Behavioral model of a single CTIA pixel used as an analog multiplier.
//!
//! The photodiode current discharges the integration node linearly from the
//! reset level for as long as the weight-to-time converter holds the exposure
//! window open, so the voltage drop is the product of input current and
//! weight-encoded time. The OTA is treated as ideal (infinite gain, no offset).
//!
//! The module also carries the transfer-curve fitting used to hand a compact
//! model of the analog multiply to an external training framework.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electrical parameters of one CTIA pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PixelParams {
    /// Reset voltage of the integration node VCO, in volts.
    pub v_rst: f64,
    /// Feedback (integration) capacitance, in farads.
    pub c_f: f64,
    /// Photocurrent at full-scale pixel value, in amperes.
    pub i_max: f64,
    /// Largest discharge the node can take before it clips, in volts.
    pub headroom: f64,
}

impl Default for PixelParams {
    fn default() -> Self {
        Self {
            v_rst: 0.8,
            c_f: 10e-15,
            i_max: 50e-12,
            headroom: 0.8,
        }
    }
}

impl PixelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.v_rst, self.c_f, self.i_max, self.headroom]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(
                "pixel parameters must be finite".into(),
            ));
        }
        if self.v_rst <= 0.0 || self.c_f <= 0.0 || self.i_max <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "v_rst, c_f and i_max must be positive (got {}, {}, {})",
                self.v_rst, self.c_f, self.i_max
            )));
        }
        if self.headroom <= 0.0 || self.headroom > self.v_rst {
            return Err(Error::InvalidParameter(format!(
                "headroom must lie in (0, v_rst]; got {} with v_rst {}",
                self.headroom, self.v_rst
            )));
        }
        Ok(())
    }

    /// Unclamped discharge for a given photocurrent and exposure.
    #[inline]
    pub fn raw_discharge(&self, photocurrent: f64, exposure: f64) -> f64 {
        photocurrent * exposure / self.c_f
    }
}

/// Voltage drop at node VCO after integrating `photocurrent` for `exposure`
/// seconds, clipped at the pixel headroom.
pub fn integrate(params: &PixelParams, photocurrent: f64, exposure: f64) -> Result<f64> {
    if !photocurrent.is_finite() || !exposure.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "non-finite integration input (i = {photocurrent}, t = {exposure})"
        )));
    }
    if photocurrent < 0.0 || exposure < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "photocurrent and exposure must be nonnegative (i = {photocurrent}, t = {exposure})"
        )));
    }
    Ok(params.raw_discharge(photocurrent, exposure).min(params.headroom))
}

/// Functional family of a [`TransferModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "coeffs")]
pub enum TransferKind {
    IdealLinear,
    /// Polynomial in `w_norm * x_norm`, coefficients in ascending powers.
    FittedPolynomial(Vec<f64>),
}

/// Compact model of the analog multiply: output volts as a function of the
/// normalized weight-input product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferModel {
    pub slope: f64,
    pub intercept: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub kind: TransferKind,
}

impl TransferModel {
    pub fn ideal_linear(slope: f64, intercept: f64, clamp_lo: f64, clamp_hi: f64) -> Result<Self> {
        let model = Self {
            slope,
            intercept,
            clamp_lo,
            clamp_hi,
            kind: TransferKind::IdealLinear,
        };
        model.validate()?;
        Ok(model)
    }

    /// Builds a polynomial model. The intercept and slope fields mirror the
    /// constant and linear coefficients.
    pub fn polynomial(coeffs: Vec<f64>, clamp_lo: f64, clamp_hi: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidParameter(
                "polynomial transfer model needs at least one coefficient".into(),
            ));
        }
        let model = Self {
            slope: coeffs.get(1).copied().unwrap_or(0.0),
            intercept: coeffs[0],
            clamp_lo,
            clamp_hi,
            kind: TransferKind::FittedPolynomial(coeffs),
        };
        model.validate()?;
        Ok(model)
    }

    /// Ideal model of the pixel at a given maximum exposure: a full-scale
    /// weight and input produce `i_max * max_exposure / c_f`.
    pub fn for_pixel(params: &PixelParams, max_exposure: f64) -> Result<Self> {
        params.validate()?;
        Self::ideal_linear(
            params.raw_discharge(params.i_max, max_exposure),
            0.0,
            0.0,
            params.headroom,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let coeffs_finite = match &self.kind {
            TransferKind::IdealLinear => true,
            TransferKind::FittedPolynomial(c) => c.iter().all(|v| v.is_finite()),
        };
        if !(self.slope.is_finite()
            && self.intercept.is_finite()
            && self.clamp_lo.is_finite()
            && self.clamp_hi.is_finite()
            && coeffs_finite)
        {
            return Err(Error::InvalidParameter(
                "transfer model fields must be finite".into(),
            ));
        }
        if !(self.clamp_lo <= self.intercept && self.intercept <= self.clamp_hi) {
            return Err(Error::InvalidParameter(format!(
                "transfer model requires clamp_lo <= intercept <= clamp_hi (got {} <= {} <= {})",
                self.clamp_lo, self.intercept, self.clamp_hi
            )));
        }
        Ok(())
    }

    pub fn eval(&self, w_norm: f64, x_norm: f64) -> f64 {
        eval_transfer(self, w_norm, x_norm)
    }
}

/// Evaluates the transfer model at a weight/input pair.
pub fn eval_transfer(model: &TransferModel, w_norm: f64, x_norm: f64) -> f64 {
    let u = w_norm * x_norm;
    let v = match &model.kind {
        TransferKind::IdealLinear => model.slope * u + model.intercept,
        // Horner, highest power first.
        TransferKind::FittedPolynomial(c) => c.iter().rev().fold(0.0, |acc, &a| acc * u + a),
    };
    v.clamp(model.clamp_lo, model.clamp_hi)
}

/// One measured or simulated point of the transfer curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferSample {
    pub w_norm: f64,
    pub x_norm: f64,
    pub volts: f64,
}

impl TransferSample {
    #[inline]
    pub fn product(&self) -> f64 {
        self.w_norm * self.x_norm
    }
}

/// Least-squares line through (w·x, volts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub residual_rms: f64,
}

fn check_samples(samples: &[TransferSample]) -> Result<()> {
    if let Some((i, _)) = samples
        .iter()
        .enumerate()
        .find(|(_, s)| !(s.w_norm.is_finite() && s.x_norm.is_finite() && s.volts.is_finite()))
    {
        return Err(Error::InvalidParameter(format!("sample {i} is not finite")));
    }
    Ok(())
}

/// Ordinary least-squares fit of output volts against the normalized product.
pub fn fit_transfer(samples: &[TransferSample]) -> Result<FitResult> {
    check_samples(samples)?;
    if samples.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean_u = samples.iter().map(TransferSample::product).sum::<f64>() / n;
    let mean_v = samples.iter().map(|s| s.volts).sum::<f64>() / n;
    let (mut s_uu, mut s_uv) = (0.0, 0.0);
    for s in samples {
        let du = s.product() - mean_u;
        s_uu += du * du;
        s_uv += du * (s.volts - mean_v);
    }
    if s_uu == 0.0 {
        return Err(Error::DegenerateFit(
            "all samples share the same w_norm * x_norm abscissa".into(),
        ));
    }
    let slope = s_uv / s_uu;
    let intercept = mean_v - slope * mean_u;
    Ok(summarize_fit(samples, slope, intercept, |u| slope * u + intercept))
}

fn summarize_fit(
    samples: &[TransferSample],
    slope: f64,
    intercept: f64,
    predict: impl Fn(f64) -> f64,
) -> FitResult {
    let n = samples.len() as f64;
    let mean_v = samples.iter().map(|s| s.volts).sum::<f64>() / n;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for s in samples {
        let r = s.volts - predict(s.product());
        ss_res += r * r;
        let d = s.volts - mean_v;
        ss_tot += d * d;
    }
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    FitResult {
        slope,
        intercept,
        r_squared,
        residual_rms: (ss_res / n).sqrt(),
    }
}

/// Least-squares polynomial of the given degree in `w_norm * x_norm`.
///
/// Degree 1 is the same line as [`fit_transfer`]. The returned model clamps
/// to the range spanned by the sample voltages (widened to include the
/// constant term).
pub fn fit_polynomial(
    samples: &[TransferSample],
    degree: usize,
) -> Result<(TransferModel, FitResult)> {
    check_samples(samples)?;
    let terms = degree + 1;
    let mut distinct: Vec<f64> = samples.iter().map(TransferSample::product).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if degree == 0 || distinct.len() < terms {
        return Err(Error::DegenerateFit(format!(
            "degree {degree} fit needs a positive degree and at least {terms} distinct abscissae, got {}",
            distinct.len()
        )));
    }

    let coeffs: Vec<f64> = if degree == 1 {
        let line = fit_transfer(samples)?;
        vec![line.intercept, line.slope]
    } else {
        let design = DMatrix::from_fn(samples.len(), terms, |r, c| {
            samples[r].product().powi(c as i32)
        });
        let target = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.volts));
        let svd = design.svd(true, true);
        let solution = svd
            .solve(&target, 1e-14)
            .map_err(|e| Error::DegenerateFit(e.to_string()))?;
        solution.iter().copied().collect()
    };

    let lo = samples.iter().map(|s| s.volts).fold(coeffs[0], f64::min);
    let hi = samples.iter().map(|s| s.volts).fold(coeffs[0], f64::max);
    let model = TransferModel::polynomial(coeffs, lo, hi)?;
    let fit = summarize_fit(samples, model.slope, model.intercept, |u| {
        eval_transfer(&model, u, 1.0)
    });
    Ok((model, fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> PixelParams {
        PixelParams::default()
    }

    #[test]
    fn zero_current_or_exposure_gives_zero() {
        assert_eq!(integrate(&p(), 0.0, 1e-3).unwrap(), 0.0);
        assert_eq!(integrate(&p(), 30e-12, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_clamp() {
        let params = PixelParams {
            c_f: 10e-15,
            headroom: 0.8,
            ..p()
        };
        // 1e-9 * 1e-5 / 1e-14 = 1.0 V, clipped to 0.8 V.
        assert_eq!(integrate(&params, 1e-9, 10e-6).unwrap(), 0.8);
    }

    #[test]
    fn rejects_non_finite_and_negative() {
        assert!(matches!(
            integrate(&p(), f64::NAN, 1.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(integrate(&p(), 1e-12, f64::INFINITY).is_err());
        assert!(integrate(&p(), -1e-12, 1e-6).is_err());
    }

    #[test]
    fn default_params_fit_headroom_at_max_exposure() {
        // 15 ticks at 8X of 1 us is the longest default-reachable exposure.
        let params = p();
        params.validate().unwrap();
        assert!(params.raw_discharge(params.i_max, 120e-6) <= params.headroom);
    }

    #[test]
    fn param_invariants() {
        assert!(PixelParams { headroom: 0.9, ..p() }.validate().is_err());
        assert!(PixelParams { c_f: 0.0, ..p() }.validate().is_err());
        assert!(PixelParams { i_max: f64::NAN, ..p() }.validate().is_err());
    }

    #[test]
    fn ideal_linear_examples() {
        let m = TransferModel::ideal_linear(1.0, 0.0, 0.0, 2.0).unwrap();
        assert_eq!(eval_transfer(&m, 0.0, 0.7), 0.0);
        assert_eq!(eval_transfer(&m, 1.0, 1.0), 1.0);
        let tight = TransferModel::ideal_linear(1.0, 0.0, 0.0, 0.5).unwrap();
        assert_eq!(eval_transfer(&tight, 1.0, 1.0), 0.5);
    }

    #[test]
    fn transfer_model_invariant() {
        assert!(TransferModel::ideal_linear(1.0, 0.5, 0.0, 0.4).is_err());
        assert!(TransferModel::polynomial(vec![], 0.0, 1.0).is_err());
    }

    #[test]
    fn exact_line_is_recovered() {
        let samples: Vec<_> = (0..16)
            .flat_map(|w| {
                (0..5).map(move |x| {
                    let (w, x) = (w as f64 / 15.0, x as f64 / 4.0);
                    TransferSample {
                        w_norm: w,
                        x_norm: x,
                        volts: 2.0 * w * x + 0.1,
                    }
                })
            })
            .collect();
        let fit = fit_transfer(&samples).unwrap();
        assert!((fit.slope - 2.0).abs() <= 2e-9);
        assert!((fit.intercept - 0.1).abs() <= 1e-10);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn degenerate_abscissae() {
        let s = TransferSample {
            w_norm: 0.5,
            x_norm: 0.5,
            volts: 0.1,
        };
        assert!(matches!(
            fit_transfer(&[s, s, s]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(fit_transfer(&[s]), Err(Error::DegenerateFit(_))));
        // Same product, different factors.
        let t = TransferSample {
            w_norm: 1.0,
            x_norm: 0.25,
            volts: 0.3,
        };
        assert!(fit_transfer(&[s, t]).is_err());
    }

    fn pixel_samples(params: &PixelParams, t_max: f64) -> Vec<TransferSample> {
        let mut out = Vec::new();
        for w in 0..16u32 {
            for x in 0..=10u32 {
                let (w_norm, x_norm) = (w as f64 / 15.0, x as f64 / 10.0);
                let volts = integrate(params, x_norm * params.i_max, w_norm * t_max).unwrap();
                out.push(TransferSample {
                    w_norm,
                    x_norm,
                    volts,
                });
            }
        }
        out
    }

    #[test]
    fn fit_over_integrate_samples_is_linear() {
        let samples = pixel_samples(&p(), 15e-6);
        let fit = fit_transfer(&samples).unwrap();
        assert!(fit.r_squared >= 0.999, "r2 = {}", fit.r_squared);
    }

    #[test]
    fn fitted_polynomial_reproduces_samples() {
        let params = p();
        let samples = pixel_samples(&params, 15e-6);
        for degree in [1usize, 2, 3] {
            let (model, fit) = fit_polynomial(&samples, degree).unwrap();
            for s in &samples {
                let err = (eval_transfer(&model, s.w_norm, s.x_norm) - s.volts).abs();
                assert!(err <= fit.residual_rms + 1e-12, "degree {degree}: err {err}");
            }
        }
    }

    #[test]
    fn polynomial_recovers_quadratic() {
        let samples: Vec<_> = (0..=20)
            .map(|i| {
                let u = i as f64 / 20.0;
                TransferSample {
                    w_norm: u,
                    x_norm: 1.0,
                    volts: 0.05 + 0.4 * u - 0.1 * u * u,
                }
            })
            .collect();
        let (model, fit) = fit_polynomial(&samples, 2).unwrap();
        let TransferKind::FittedPolynomial(c) = &model.kind else {
            panic!("expected polynomial");
        };
        assert!((c[0] - 0.05).abs() < 1e-9 && (c[1] - 0.4).abs() < 1e-9 && (c[2] + 0.1).abs() < 1e-9);
        assert!(fit.r_squared > 1.0 - 1e-12);
    }
}
