use ctia_ipc::device::{fit_polynomial, fit_transfer, integrate, PixelParams, TransferSample};
use proptest::prelude::*;

mod common;
use common::rel_close;

fn params() -> PixelParams {
    PixelParams::default()
}

proptest! {
    #[test]
    fn integrate_is_homogeneous(i in 0.0f64..50e-12, t in 0.0f64..15e-6, a in 0.0f64..4.0) {
        let p = params();
        // Largest drop here is 4 * 0.075 V, well under the headroom.
        let base = integrate(&p, i, t).unwrap();
        prop_assert!(rel_close(integrate(&p, a * i, t).unwrap(), a * base, 1e-12));
        prop_assert!(rel_close(integrate(&p, i, a * t).unwrap(), a * base, 1e-12));
    }

    #[test]
    fn integrate_is_monotone(i in 0.0f64..1e-9, di in 0.0f64..1e-9, t in 0.0f64..1e-3, dt in 0.0f64..1e-3) {
        let p = params();
        let v = integrate(&p, i, t).unwrap();
        prop_assert!(integrate(&p, i + di, t).unwrap() >= v);
        prop_assert!(integrate(&p, i, t + dt).unwrap() >= v);
    }

    #[test]
    fn integrate_never_exceeds_headroom(i in 0.0f64..1e-6, t in 0.0f64..1.0) {
        let p = params();
        prop_assert!(integrate(&p, i, t).unwrap() <= p.headroom);
    }

    #[test]
    fn affine_fit_recovers_line(
        slope in prop_oneof![-2.0f64..-0.01, 0.01f64..2.0],
        intercept in -1.0f64..1.0,
        n in 3usize..40,
    ) {
        let samples: Vec<TransferSample> = (0..n)
            .map(|i| {
                let w = i as f64 / (n - 1) as f64;
                let x = 1.0 - 0.5 * w;
                TransferSample { w_norm: w, x_norm: x, volts: slope * w * x + intercept }
            })
            .collect();
        let fit = fit_transfer(&samples).unwrap();
        prop_assert!(rel_close(fit.slope, slope, 1e-9));
        prop_assert!((fit.intercept - intercept).abs() <= 1e-9 * intercept.abs().max(1.0));
        prop_assert!((fit.r_squared - 1.0).abs() <= 1e-12);
        let (_, poly) = fit_polynomial(&samples, 1).unwrap();
        prop_assert!(rel_close(poly.slope, slope, 1e-9));
    }
}
