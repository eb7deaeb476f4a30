mod common;

use avar_core::dump::{read_dump, write_dump};
use avar_core::intervention::{reallocate, InterventionConfig};
use avar_core::rl::group_advantages;
use avar_core::rng::SeededRng;
use avar_core::vas::{classify_band, pearson, vas_model, VasOptions};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vas_is_nonnegative_and_banded(seed in any::<u64>()) {
        let (a, seg) = common::random_case(&mut SeededRng::new(seed));
        let v = vas_model(&a, &seg, VasOptions::default()).unwrap();
        prop_assert!(v >= 0.0 && v.is_finite());
        prop_assert!(classify_band(v).is_ok());
    }

    #[test]
    fn reallocation_keeps_rows_stochastic(seed in any::<u64>(), gamma in 0.01f64..=1.0) {
        let (a, seg) = common::random_case(&mut SeededRng::new(seed));
        let b = reallocate(&a, &seg, &InterventionConfig::with_gamma(gamma)).unwrap();
        prop_assert!(b.validate(1e-12).is_ok());
        let before = vas_model(&a, &seg, VasOptions::default()).unwrap();
        let after = vas_model(&b, &seg, VasOptions::default()).unwrap();
        prop_assert!(after >= before * (1.0 - 1e-12));
    }

    #[test]
    fn pearson_is_bounded(xs in prop::collection::vec(-1e3f64..1e3, 3..30), shift in -5.0f64..5.0) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x.sin() + shift * i as f64).collect();
        if let Ok(r) = pearson(&xs, &ys) {
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn advantages_are_centered(rewards in prop::collection::vec(-10f64..10.0, 2..16)) {
        let adv = group_advantages(&rewards).unwrap();
        let mean: f64 = adv.iter().sum::<f64>() / adv.len() as f64;
        prop_assert!(mean.abs() < 1e-9);
        for w in rewards.windows(2).zip(adv.windows(2)) {
            // order-preserving
            prop_assert!((w.0[0] - w.0[1]) * (w.1[0] - w.1[1]) >= 0.0);
        }
    }

    #[test]
    fn dumps_round_trip(seed in any::<u64>()) {
        let (a, seg) = common::random_case(&mut SeededRng::new(seed));
        let bytes = write_dump(&a, &seg, Some("s")).unwrap();
        let back = read_dump(&bytes).unwrap();
        prop_assert_eq!(&back.segmentation, &seg);
        prop_assert_eq!(write_dump(&back.attention, &back.segmentation, back.sample_id.as_deref()).unwrap(), bytes);
    }
}
