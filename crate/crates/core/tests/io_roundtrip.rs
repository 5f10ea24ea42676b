use std::path::Path;

use otground::grounding::{GroundingModel, ModelDims};
use otground::harness::OptimizerState;
use otground::io::{decode_matrix, encode_matrix, read_matrix, write_matrix, Checkpoint, RunConfig, HEADER_LEN};
use otground::ot::Matrix;
use otground::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f32_values_survive_bitwise(rows in 1usize..6, cols in 1usize..6, bits in prop::collection::vec(any::<u32>(), 36)) {
        let data: Vec<f64> = (0..rows * cols)
            .map(|i| f32::from_bits(bits[i]))
            .map(|v| if v.is_finite() { v as f64 } else { 0.5 })
            .collect();
        let m = Matrix::new(rows, cols, data).unwrap();
        let bytes = encode_matrix(&m).unwrap();
        prop_assert_eq!(bytes.len(), HEADER_LEN + 4 * rows * cols);
        let back = decode_matrix(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back.rows(), rows);
        let same = back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn any_truncation_is_a_format_error(len in 0usize..30) {
        let m = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_matrix(&m).unwrap();
        prop_assume!(len < bytes.len());
        let is_format_error = matches!(decode_matrix(&bytes[..len], Path::new("t")), Err(Error::Format { .. }));
        prop_assert!(is_format_error);
    }

    #[test]
    fn checkpoints_round_trip_bitwise(seed in 0u64..1000, steps in 0u64..5) {
        let model = GroundingModel::init(ModelDims::default(), seed).unwrap();
        let mut opt = OptimizerState::new(&model);
        opt.step = steps;
        let ck = Checkpoint::new(RunConfig::default(), steps as usize, &model, Some(&opt));
        let text = ck.to_json();
        let back = Checkpoint::from_json(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(back.model().unwrap(), model);
        prop_assert_eq!(back.to_json(), text);
    }
}

#[test]
fn file_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.oteb");
    let m = Matrix::new(3, 2, vec![0.25, -1.5, 3.0, 1e-3, 7.0, 0.0]).unwrap();
    write_matrix(&path, &m).unwrap();
    let back = read_matrix(&path).unwrap();
    for (a, b) in back.data().iter().zip(m.data()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert!(matches!(read_matrix(&dir.path().join("missing")), Err(Error::Io { .. })));
}
