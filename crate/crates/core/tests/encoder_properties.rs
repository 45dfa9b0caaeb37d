use proptest::prelude::*;

use setseq::encoder::{EncoderConfig, EncoderModel};
use setseq::featurizer::FeatureLayout;
use setseq::numerics::Tensor;

fn model() -> EncoderModel {
    let cfg = EncoderConfig {
        layers: 2,
        heads: 2,
        inducing_points: 4,
        hidden: 16,
        ff_hidden: 32,
    };
    EncoderModel::new(cfg, FeatureLayout::Standard, 12).unwrap()
}

fn features(width: usize) -> impl Strategy<Value = (Tensor, Vec<usize>)> {
    (1usize..24).prop_flat_map(move |n| {
        (
            proptest::collection::vec(-2.0f64..2.0, n * width),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
            .prop_map(move |(data, perm)| (Tensor::matrix(n, width, data).unwrap(), perm))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scores_follow_their_tracks((x, perm) in features(101)) {
        let m = model();
        let rows: Vec<&[f64]> = perm.iter().map(|&i| x.row(i)).collect();
        let px = Tensor::from_rows(&rows).unwrap();
        let base = m.logits(&x, None).unwrap();
        let moved = m.logits(&px, None).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((moved[k] - base[i]).abs() <= 1e-9 * (1.0 + base[i].abs()));
        }
    }

    #[test]
    fn padding_never_changes_real_rows((x, _) in features(101), pad in 1usize..6) {
        let m = model();
        let n = x.rows();
        let mut data = x.data().to_vec();
        data.extend(std::iter::repeat_n(7.5, pad * x.cols()));
        let padded = Tensor::matrix(n + pad, x.cols(), data).unwrap();
        let valid: Vec<bool> = (0..n + pad).map(|i| i < n).collect();
        let plain = m.encode(&x).unwrap().0;
        let masked = m.encode_padded(&padded, &valid).unwrap().0;
        for i in 0..n {
            prop_assert!((plain[i] - masked[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn scores_are_probabilities((x, _) in features(101)) {
        let s = model().encode(&x).unwrap().0;
        prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
