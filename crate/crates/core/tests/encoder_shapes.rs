mod common;

use gatedlex::encoder::{Encoder, EncoderConfig, GatedPlacement};
use gatedlex::numerics::{Layer, SeedRng, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;

#[test]
fn full_config_maps_480_by_800_to_15_by_100() {
    common::criteria::geometry().unwrap();
}

#[test]
fn separable_blocks_match_closed_form_counts() {
    common::criteria::dsc_efficiency().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn forward_shape_matches_output_shape(h in 8usize..40, w in 8usize..40, late in any::<bool>(), seed in 0u64..100) {
        let cfg = EncoderConfig {
            cb_channels: vec![2, 3],
            cb_strides: vec![(2, 2), (2, 1)],
            dscb_channels: vec![3],
            gated_placement: if late { GatedPlacement::Late } else { GatedPlacement::Early },
            ..EncoderConfig::toy()
        };
        let mut rng = SeedRng::seed_from_u64(seed);
        let enc = Encoder::<f32>::new(cfg.clone(), &mut rng).unwrap();
        let (y, _) = enc.forward(&Tensor::uniform(&[1, h, w], 0.0, 1.0, &mut rng), None).unwrap();
        let (c, fh, fw) = cfg.output_shape(h, w).unwrap();
        prop_assert_eq!(y.shape(), &[c, fh, fw][..]);
        prop_assert!(y.is_finite());
    }
}
