use ctia_ipc::frame::{decode_pgm, encode_pgm, frame_to_pgm, load_frame, BayerFrame};
use ctia_ipc::mapper::WeightTensor;
use ctia_ipc::weights_io::{parse_weights, weights_to_string, LayerWeights};
use ctia_ipc::Error;
use proptest::prelude::*;

mod common;
use common::{random_bn, random_weights, rng};

proptest! {
    #[test]
    fn pgm_round_trips(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>()) {
        let samples: Vec<u16> = (0..rows * cols).map(|i| (seed.rotate_left(i as u32 % 64) as u16) ^ (i as u16)).collect();
        let bytes = encode_pgm(rows, cols, &samples);
        prop_assert_eq!(decode_pgm(&bytes).unwrap(), (rows, cols, samples));
    }

    #[test]
    fn truncated_pgm_is_a_format_error(cut in 0usize..30) {
        let bytes = encode_pgm(3, 4, &[7; 12]);
        let cut = cut.min(bytes.len() - 1);
        let is_format = matches!(decode_pgm(&bytes[..cut]), Err(Error::Format { .. }));
        prop_assert!(is_format);
    }

    #[test]
    fn weights_round_trip(seed in any::<u64>(), k in 1usize..8, c_o in 1usize..5) {
        let mut r = rng(seed);
        let spec = ctia_ipc::mapper::ConvSpec { k, c_o, ..Default::default() };
        let layer = LayerWeights { weights: random_weights(&mut r, &spec), bn: random_bn(&mut r, c_o) };
        let back = parse_weights(&weights_to_string(&layer).unwrap()).unwrap();
        for (a, b) in back.weights.data.iter().zip(&layer.weights.data) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert_eq!(back, layer);
    }
}

#[test]
fn gradient_frame_survives_disk() {
    let (rows, cols) = (32, 48);
    let raw: Vec<u16> = (0..rows * cols).map(|i| ((i * 65535) / (rows * cols - 1)) as u16).collect();
    let frame = BayerFrame::from_raw(rows, cols, raw, 50e-12).unwrap();
    let dir = std::env::temp_dir().join(format!("ctia-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("gradient.pgm");
    std::fs::write(&path, frame_to_pgm(&frame)).unwrap();
    let back = load_frame(&path, 50e-12).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(back, frame);
    assert_eq!(back.photocurrent(rows - 1, cols - 1), 50e-12);
}

#[test]
fn endpoints_map_to_full_scale() {
    let bytes = encode_pgm(2, 2, &[65535, 0, 0, 65535]);
    let (r, c, raw) = decode_pgm(&bytes).unwrap();
    let f = BayerFrame::from_raw(r, c, raw, 50e-12).unwrap();
    assert_eq!(
        [f.photocurrent(0, 0), f.photocurrent(0, 1), f.photocurrent(1, 0), f.photocurrent(1, 1)],
        [50e-12, 0.0, 0.0, 50e-12]
    );
}

#[test]
fn weight_tensor_shape_errors_are_collected() {
    let text = r#"{"c_o": 1, "c_in": 4, "k": 2, "weights": [[[[1, 2], [3]], [[1, 1], [1, 1]]]]}"#;
    match parse_weights(text) {
        Err(Error::Validation(v)) => assert!(v.len() >= 2, "{v:?}"),
        other => panic!("{other:?}"),
    }
    let _ = WeightTensor::zeros(1, 1, 1);
}
