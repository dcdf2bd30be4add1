use ctia_ipc::adc::{cds_signed, maxpool, quantize, relu_requantize, ActivationMap, AdcConfig, DigitalActivation};
use proptest::prelude::*;

fn cfg() -> AdcConfig {
    AdcConfig::default()
}

proptest! {
    #[test]
    fn quantize_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(&cfg(), lo).unwrap() <= quantize(&cfg(), hi).unwrap());
    }

    #[test]
    fn one_lsb_step_is_one_code(n in 0u32..62, frac in 0.01f64..0.99) {
        let c = cfg();
        let v = (f64::from(n) + frac) * c.lsb();
        let step = quantize(&c, v + c.lsb()).unwrap() - quantize(&c, v).unwrap();
        prop_assert_eq!(step, 1);
    }

    #[test]
    fn one_lsb_step_never_exceeds_one(v in 0.0f64..1.0) {
        let c = cfg();
        let step = quantize(&c, v + c.lsb()).unwrap() - quantize(&c, v).unwrap();
        prop_assert!(step <= 1);
    }

    #[test]
    fn cds_antisymmetric(a in 0.0f64..1.0, b in 0.0f64..1.0, off in -100i64..100) {
        let c = cfg().with_offset(off);
        prop_assert_eq!(cds_signed(&c, a, b).unwrap() + cds_signed(&c, b, a).unwrap(), 2 * off);
    }

    #[test]
    fn cds_within_one_code_of_ideal(a in 0.0f64..0.63, b in 0.0f64..0.63, off in -50i64..50) {
        let c = cfg().with_offset(off);
        let ideal = (a - b) / c.lsb() + off as f64;
        prop_assert!((cds_signed(&c, a, b).unwrap() as f64 - ideal).abs() <= 1.0);
    }

    #[test]
    fn relu_output_is_stable(code in -200i64..200) {
        let c = cfg();
        let a = relu_requantize(&c, code);
        let expanded = i64::from(a.0) << (c.bits - c.out_bits);
        prop_assert_eq!(relu_requantize(&c, expanded), a);
        prop_assert!(a.0 <= c.max_output());
    }

    #[test]
    fn pooling_bounded_and_commutes(
        rows in 1usize..12,
        cols in 1usize..12,
        p in 1usize..4,
        vals in proptest::collection::vec(0u16..16, 144),
    ) {
        let m = ActivationMap::from_u16(rows, cols, &vals[..rows * cols]).unwrap();
        let pooled = maxpool(&m, p).unwrap();
        prop_assert!(pooled.max() <= m.max());
        let f = |v: DigitalActivation| DigitalActivation((v.0 / 3).min(4));
        let mapped = ActivationMap::new(rows, cols, m.values.iter().copied().map(f).collect()).unwrap();
        let lhs = maxpool(&mapped, p).unwrap();
        let rhs = ActivationMap::new(pooled.rows, pooled.cols, pooled.values.iter().copied().map(f).collect()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }
}
