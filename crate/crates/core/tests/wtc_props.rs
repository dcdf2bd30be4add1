use ctia_ipc::wtc::{match_time, pulse, CounterConfig, WeightPlane, WeightWord, COUNTER_BITS};
use proptest::prelude::*;

/// Steps the 7-bit counter from zero and reports the first tick at which
/// the selected 4-bit slice equals `w`.
fn brute_first_match(window: u8, w: u8) -> u32 {
    (0..1u32 << COUNTER_BITS)
        .find(|&tick| ((tick >> window) & 0xF) as u8 == w)
        .expect("every word appears in a full counter period")
}

#[test]
fn closed_form_matches_counter() {
    for window in 0..=3u8 {
        let cfg = CounterConfig::new(1e-6, window).unwrap();
        for tick in 0..1u32 << COUNTER_BITS {
            assert_eq!(cfg.window_value(tick), ((tick >> window) & 0xF) as u8);
        }
        for m in 0..=15u8 {
            let w = WeightWord::new(m).unwrap();
            assert_eq!(brute_first_match(window, m), cfg.match_tick(w), "w {m} window {window}");
            assert_eq!(match_time(&cfg, w), f64::from(u32::from(m) << window) * 1e-6);
        }
    }
}

proptest! {
    #[test]
    fn exposure_scales_by_powers_of_two(m in 1u8..=15, window in 0u8..3, t_step in 1e-9f64..1e-3) {
        let w = WeightWord::new(m).unwrap();
        let lo = CounterConfig::new(t_step, window).unwrap();
        let hi = CounterConfig::new(t_step, window + 1).unwrap();
        prop_assert_eq!(match_time(&hi, w), 2.0 * match_time(&lo, w));
        prop_assert_eq!(hi.match_tick(w), 2 * lo.match_tick(w));
    }

    #[test]
    fn exposure_strictly_increases(m in 0u8..15, window in 0u8..=3) {
        let cfg = CounterConfig::new(1e-6, window).unwrap();
        let a = WeightWord::new(m).unwrap();
        let b = WeightWord::new(m + 1).unwrap();
        prop_assert!(match_time(&cfg, b) > match_time(&cfg, a));
        prop_assert_eq!(pulse(&cfg, b, false).width_ticks(), cfg.match_tick(b));
        prop_assert_eq!(pulse(&cfg, b, true).width_ticks(), 0);
    }

    #[test]
    fn plane_round_trips(rows in 1usize..40, cols in 1usize..40, seed in any::<u64>()) {
        let mut plane = WeightPlane::new(rows, cols);
        let word = |r: usize, c: usize| ((seed >> ((r * 7 + c) % 60)) & 0xF) as u8;
        for r in 0..rows {
            for c in 0..cols {
                plane.write_weight(r, c, WeightWord::new(word(r, c)).unwrap()).unwrap();
            }
        }
        for r in 0..rows {
            for c in 0..cols {
                prop_assert_eq!(plane.read(r, c).unwrap().magnitude(), word(r, c));
            }
        }
        prop_assert!(plane.read(rows, 0).is_err());
    }
}
