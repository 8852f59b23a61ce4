use hoi_cli::formats::TripletRecord;
use hoi_cli::tensor::Tensor;
use hoi_cli::Error;
use proptest::prelude::*;

proptest! {
    #[test]
    fn tensor_bytes_round_trip(dims in prop::collection::vec(0usize..5, 0..4), seed in any::<u32>()) {
        let count: usize = dims.iter().product();
        let data: Vec<f32> = (0..count as u32).map(|i| f32::from_bits(i.wrapping_mul(2_654_435_761).wrapping_add(seed))).collect();
        let tensor = Tensor::new(dims.clone(), data).unwrap();
        let back = Tensor::from_bytes(&tensor.to_bytes()).unwrap();
        prop_assert_eq!(back.dims(), &dims[..]);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&tensor));
    }

    #[test]
    fn truncation_is_always_detected(rows in 1usize..4, cols in 1usize..4, cut in 1usize..64) {
        let bytes = Tensor::new(vec![rows, cols], vec![0.5; rows * cols]).unwrap().to_bytes();
        let cut = cut.min(bytes.len());
        let result = Tensor::from_bytes(&bytes[..bytes.len() - cut]);
        let detected = matches!(result, Err(Error::TruncatedPayload { .. }) | Err(Error::TruncatedHeader));
        prop_assert!(detected);
    }

    #[test]
    fn triplet_records_round_trip(
        corners in prop::array::uniform4(0.0f32..1000.0),
        size in prop::array::uniform2(0.5f32..300.0),
        score in 0.0f64..1.0,
        category in 0usize..600,
    ) {
        let b = [corners[0], corners[1], corners[0] + size[0], corners[1] + size[1]];
        let record = TripletRecord { image: "img".into(), human: b, object: b, category, score: Some(score) };
        let text = serde_json::to_string(&record).unwrap();
        let back: TripletRecord = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &record);
        prop_assert!(back.to_prediction().is_ok());
    }
}
