//! Property tests across module boundaries.

use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;

use sclmkb::cdfc::{cosine_sim, fuse, FusionPairing, FusionWeights};
use sclmkb::csi_pipeline::{complex_to_real, denormalize, normalize, real_to_complex};
use sclmkb::eval::{average_precision, map_score, nmse_metric, rank_by_scores, RankingResult};
use sclmkb::harness::{decode_csi, encode_csi, synth_dataset, ExperimentConfig};
use sclmkb::harness::config::DatasetSection;
use sclmkb::lmkb_core::sample_with_temperature;
use sclmkb::mimo_channel::{
    detect, generate_trace, precode, quantize_feedback, svd_decompose, transmit, CMatrix, ChannelModelParams,
    ChannelTrace, ModelTag, NoiseModel, PrecodeConfig,
};

fn cmatrix(r: usize, c: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), r * c)
        .prop_map(move |v| CMatrix::from_iterator(r, c, v.into_iter().map(|(a, b)| Complex64::new(a, b))))
}

fn sized_cmatrix() -> impl Strategy<Value = CMatrix> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| cmatrix(r, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs_and_is_ordered(h in sized_cmatrix()) {
        let t = svd_decompose(&h).unwrap();
        prop_assert!((t.reconstruct() - &h).norm() <= 1e-10 * h.norm().max(1.0));
        prop_assert!(t.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(t.sigma.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn noiseless_link_scales_by_sigma(h in cmatrix(4, 4), z in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2)) {
        let t = svd_decompose(&h).unwrap();
        let cfg = PrecodeConfig { d: 2, equalize: false };
        let z = DVector::from_iterator(2, z.into_iter().map(|(a, b)| Complex64::new(a, b)));
        let y = transmit(&precode(&z, &t, &cfg).unwrap(), &h, &NoiseModel::noiseless()).unwrap();
        let got = detect(&y, &t, &cfg).unwrap().streams;
        for i in 0..2 {
            prop_assert!((got[i] - z[i] * t.sigma[i]).norm() <= 1e-9);
        }
    }

    #[test]
    fn feedback_error_never_grows(h in cmatrix(4, 4), d in 1usize..4) {
        let v = svd_decompose(&h).unwrap().v_d(d);
        let mut last = f64::INFINITY;
        for bits in [8u32, 16, 32, 64, 128, 256, 512] {
            let err = (quantize_feedback(&v, bits).unwrap() - &v).norm();
            prop_assert!(err <= last + 1e-12, "{bits} bits: {err} > {last}");
            last = err;
        }
    }

    #[test]
    fn real_layout_round_trips(mats in prop::collection::vec(cmatrix(2, 3), 1..8), scale in 0.01f64..100.0) {
        let mats: Vec<CMatrix> = mats.into_iter().map(|m| m * Complex64::new(scale, 0.0)).collect();
        let trace = ChannelTrace::from_matrices(mats, 1.0, ModelTag::FromFile).unwrap();
        let real = complex_to_real(&trace).unwrap();
        if let Ok((n, stats)) = normalize(&real) {
            let back = real_to_complex(&denormalize(&n, stats), ModelTag::FromFile).unwrap();
            for (a, b) in back.realizations().iter().zip(trace.realizations()) {
                prop_assert!((&a.h - &b.h).norm() <= 1e-9 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn csif_round_trip_is_stable(seed in any::<u64>(), n_r in 1usize..4, n_t in 1usize..4, len in 1usize..6) {
        let p = ChannelModelParams { n_r, n_t, ..ChannelModelParams::default() };
        let bytes = encode_csi(&generate_trace(&p, seed, len).unwrap()).unwrap();
        let back = decode_csi(&bytes).unwrap();
        prop_assert_eq!(back.len(), len);
        prop_assert_eq!(back.dims(), Some((n_r, n_t)));
        prop_assert_eq!(encode_csi(&back).unwrap(), bytes);
    }

    #[test]
    fn traces_are_seed_deterministic(seed in any::<u64>()) {
        let p = ChannelModelParams { n_r: 2, n_t: 2, ..ChannelModelParams::default() };
        prop_assert_eq!(generate_trace(&p, seed, 5).unwrap(), generate_trace(&p, seed, 5).unwrap());
    }

    #[test]
    fn nmse_of_scaled_truth(mats in prop::collection::vec(cmatrix(2, 2), 1..5), a in -3.0f64..3.0) {
        let truth = ChannelTrace::from_matrices(mats.clone(), 1.0, ModelTag::FromFile).unwrap();
        prop_assume!(truth.energy() > 1e-6);
        let pred = ChannelTrace::from_matrices(
            mats.iter().map(|m| m * Complex64::new(a, 0.0)).collect(), 1.0, ModelTag::FromFile).unwrap();
        let got = nmse_metric(&pred, &truth).unwrap();
        prop_assert!((got - (a - 1.0).powi(2)).abs() <= 1e-9 * (1.0 + got));
    }

    #[test]
    fn cosine_is_bounded(a in prop::collection::vec(-5.0f64..5.0, 8), b in prop::collection::vec(-5.0f64..5.0, 8)) {
        if let Ok(c) = cosine_sim(&a, &b) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        }
    }

    #[test]
    fn fusion_weights_are_convex(eta_i in -1e3f64..1e3, eta_a in -1e3f64..1e3,
                                 t in prop::collection::vec(-3.0f64..3.0, 6), u in prop::collection::vec(-3.0f64..3.0, 6)) {
        let w = FusionWeights::from_scores(eta_i, eta_a).unwrap();
        prop_assert!((w.theta_i + w.theta_a - 1.0).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&w.theta_i));
        for pairing in [FusionPairing::Cross, FusionPairing::Matched] {
            prop_assert_eq!(fuse(&t, &t, &w, pairing).unwrap(), t.clone());
            // Each fused component lies between the two inputs.
            let f = fuse(&t, &u, &w, pairing).unwrap();
            for k in 0..6 {
                let (lo, hi) = (t[k].min(u[k]), t[k].max(u[k]));
                prop_assert!(f[k] >= lo - 1e-12 && f[k] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn sampling_stays_in_range(logits in prop::collection::vec(-10.0f64..10.0, 1..30), tau in 0.0f64..5.0, seed in any::<u64>()) {
        let id = sample_with_temperature(&logits, tau, seed).unwrap() as usize;
        prop_assert!(id < logits.len());
        prop_assert_eq!(sample_with_temperature(&logits, tau, seed).unwrap() as usize, id);
    }

    #[test]
    fn average_precision_is_a_fraction(scores in prop::collection::vec(-1.0f64..1.0, 2..20), pick in any::<prop::sample::Index>()) {
        let ranking = rank_by_scores(&scores);
        let rel = vec![pick.index(scores.len())];
        let ap = average_precision(&ranking, &rel).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
        let pos = ranking.iter().position(|&i| i == rel[0]).unwrap();
        prop_assert!((ap - 1.0 / (pos + 1) as f64).abs() <= 1e-12);
        let m = map_score(&[RankingResult::new(ranking, rel).unwrap()]).unwrap();
        prop_assert!((m - ap).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn corpus_is_seed_deterministic_and_labelled(seed in any::<u64>(), n_classes in 2usize..20) {
        let cfg = DatasetSection { n_classes, ..DatasetSection::default() };
        let a = synth_dataset(&cfg, seed).unwrap();
        prop_assert_eq!(&a, &synth_dataset(&cfg, seed).unwrap());
        prop_assert_eq!(a.gallery.nrows(), n_classes);
        for c in a.train.iter().chain(&a.test) {
            prop_assert!(c.label < n_classes);
            prop_assert!(!c.tokens.is_empty());
        }
        for row in a.gallery.row_iter() {
            prop_assert!((row.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn config_survives_toml(seed in any::<u64>(), gamma in 0.0f64..1.0, epochs in 1usize..500) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.cdfc.gamma = gamma;
        cfg.cdfc.epochs = epochs;
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }
}
