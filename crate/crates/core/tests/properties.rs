use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stftsynth::dataset::{holdout_count, split, Channel, EventSignal};
use stftsynth::metrics::{fid, psnr, ssim};
use stftsynth::models::gru::{bigru_layer, GruCell};
use stftsynth::models::{GanSpec, Variant};
use stftsynth::nn::Store;
use stftsynth::optim::{Nadam, NadamConfig, PlateauConfig, PlateauScheduler};
use stftsynth::stft::{featurize, stft, StftParams, DEFAULT_FLOOR_DB, WINDOW_SIZES};
use stftsynth::synthetic::{synthesize_corpus, EventClass, EVENT_LEN};
use stftsynth::Tensor;

fn image(shape: (usize, usize)) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f64..1.0, shape.0 * shape.1).prop_map(move |v| Tensor::new(vec![shape.0, shape.1], v).unwrap())
}

fn image_pair() -> impl Strategy<Value = (Tensor, Tensor)> {
    (2usize..20, 2usize..20).prop_flat_map(|s| (image(s), image(s)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stft_shape_depends_only_on_window(
        samples in prop::collection::vec(-1.0f64..1.0, EVENT_LEN),
        w in prop::sample::select(WINDOW_SIZES.to_vec()),
    ) {
        let ev = EventSignal::new(samples, 96_000, EventClass::Hammer, Channel::Mono, "p").unwrap();
        let params = StftParams::new(w).unwrap();
        let spec = stft(&ev, params).unwrap();
        prop_assert_eq!(spec.shape(), params.shape_for(EVENT_LEN));
        prop_assert_eq!(spec.freq_bins(), w / 2 + 1);
        prop_assert!(spec.values.data().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn ssim_is_symmetric_bounded_and_one_on_the_diagonal((x, y) in image_pair()) {
        let a = ssim(&x, &y).unwrap();
        prop_assert!((a - ssim(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&a));
        prop_assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_is_symmetric_and_capped_on_identity((x, y) in image_pair()) {
        let p = psnr(&x, &y).unwrap();
        prop_assert_eq!(p.db, psnr(&y, &x).unwrap().db);
        prop_assert!(p.db >= 0.0);
        prop_assert!(psnr(&x, &x).unwrap().capped);
    }

    #[test]
    fn fid_is_non_negative_symmetric_and_zero_on_identity(
        a in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 6..20),
        b in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 6..20),
    ) {
        let f = fid(&a, &b).unwrap();
        prop_assert!(f >= -1e-9);
        prop_assert!((f - fid(&b, &a).unwrap()).abs() < 1e-8 * f.max(1.0));
        prop_assert!(fid(&a, &a).unwrap().abs() <= 1e-6);
    }

    #[test]
    fn split_is_a_stratified_partition(counts in prop::collection::vec(2usize..30, 1..4), frac in 0.05f64..0.5, seed in 0u64..1000) {
        let classes: std::collections::BTreeMap<_, _> = EventClass::ALL.iter().copied().zip(counts.iter().copied()).collect();
        let corpus = synthesize_corpus(&classes, seed).unwrap();
        match split(&corpus, frac, seed) {
            Ok(m) => {
                for (class, n) in &classes {
                    let tr = &m.train_ids[class];
                    let va = &m.val_ids[class];
                    prop_assert_eq!(va.len(), holdout_count(*n, frac));
                    prop_assert_eq!(tr.len() + va.len(), *n);
                    prop_assert!(tr.iter().all(|id| !va.contains(id)));
                }
                prop_assert_eq!(split(&corpus, frac, seed).unwrap(), m);
            }
            Err(e) => prop_assert_eq!(e.exit_code(), 2),
        }
    }

    #[test]
    fn gru_states_stay_in_the_unit_box(seed in 0u64..500, inp in 1usize..5, hid in 1usize..5, t in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, b) = (GruCell::random(inp, hid, &mut rng), GruCell::random(inp, hid, &mut rng));
        let x = Tensor::from_fn(&[t, inp], |i| ((i * 7919 + seed as usize) % 97) as f64 - 48.0);
        let out = bigru_layer(&f, &b, &x).unwrap();
        prop_assert_eq!(out.shape(), &[t, 2 * hid][..]);
        prop_assert!(out.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn nadam_keeps_parameters_finite(grads in prop::collection::vec(-1e6f64..1e6, 4), lr in 1e-6f64..1e-1) {
        let mut p = Store::default();
        p.add("w", Tensor::zeros(&[4]));
        let mut opt = Nadam::new(&p, NadamConfig::default());
        for k in 0..5 {
            let g = Tensor::from_vec(grads.iter().map(|v| v * (k as f64 - 2.0)).collect());
            opt.update(&mut p, &[g], lr).unwrap();
        }
        prop_assert!(p.values()[0].all_finite());
    }

    #[test]
    fn plateau_rates_never_rise_or_cross_the_floor(values in prop::collection::vec(-5.0f64..5.0, 1..60), floor in 0.0f64..1e-4) {
        let mut s = PlateauScheduler::new(PlateauConfig { min_lr: floor, ..PlateauConfig::default() });
        let mut lrs = [1e-3, 2e-4];
        for v in values {
            let before = lrs;
            s.observe(v, &mut lrs);
            for k in 0..2 {
                prop_assert!(lrs[k] <= before[k]);
                prop_assert!(lrs[k] >= floor.min(before[k]));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generators_hit_any_target_shape_in_range(f in 2usize..140, t in 1usize..20, seed in 0u64..100) {
        let spec = GanSpec::new(Variant::Stftsynth, (f, t)).with_widths(2, 2);
        let (g, _) = spec.build(seed).unwrap();
        let mut g = g;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = g.sample(2, &mut rng).unwrap();
        prop_assert_eq!(out.shape(), &[2, 1, f, t][..]);
        prop_assert!(out.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn featurized_values_lie_in_the_unit_interval(seed in 0u64..1000, w in prop::sample::select(vec![128usize, 256])) {
        let counts = [(EventClass::Traffic, 2), (EventClass::Breakage, 2)].into_iter().collect();
        let corpus = synthesize_corpus(&counts, seed).unwrap();
        for spec in featurize(&corpus, StftParams::new(w).unwrap(), DEFAULT_FLOOR_DB).unwrap() {
            prop_assert!(spec.values.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert_eq!(spec.values.data().iter().cloned().fold(f64::MIN, f64::max), 1.0);
        }
    }
}
