use std::sync::Arc;

use neurochair_core::classifier::{
    assign_folds, fit_dataset, load_model, save_model, Dataset, FitConfig, ModelKind, ModelMetadata,
};
use neurochair_core::decoder::{decode, Command, DecoderConfig};
use neurochair_core::dsp::{band_power, welch_psd, EpochConfig, Epocher, FeatureExtractor, FeatureVector, WelchConfig};
use neurochair_core::signal::{default_bands, default_montage, CommandLabel, EegFrame, Epoch, Montage};
use neurochair_core::synth::{generate_recording, read_csv, write_csv_to, ScenarioSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn two_channels() -> Montage {
    Montage::from_names(&["C3", "C4"], 128.0).unwrap()
}

fn noise(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let s: f64 = StandardNormal.sample(rng);
            sd * s
        })
        .collect()
}

/// Five Gaussian blobs in 10-D, `per_class` samples in groups of 5.
fn blobs(seed: u64, per_class: usize, spread: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset {
        x: Vec::new(),
        y: Vec::new(),
        group: Vec::new(),
    };
    for (c, &label) in CommandLabel::ALL.iter().enumerate() {
        for i in 0..per_class {
            let mut row = noise(&mut rng, 10, spread);
            row[c] += 3.0;
            row[c + 5] -= 2.0;
            ds.x.push(row);
            ds.y.push(label);
            ds.group.push(c * 1000 + i / 5);
        }
    }
    ds
}

fn fv(row: &[f64]) -> FeatureVector {
    FeatureVector::new(row.to_vec(), 2, 5, 0.0, 1.0).unwrap()
}

fn meta() -> ModelMetadata {
    ModelMetadata::new(&two_channels(), &default_bands())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn band_power_scales_with_amplitude_squared(seed in any::<u64>(), k in 0.1f64..20.0) {
        let montage = Arc::new(two_channels());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 256, 5.0)).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|c| c.iter().map(|v| v * k).collect()).collect();
        let px = welch_psd(&Epoch::from_channels(montage.clone(), &x).unwrap(), WelchConfig::default()).unwrap();
        let py = welch_psd(&Epoch::from_channels(montage, &y).unwrap(), WelchConfig::default()).unwrap();
        for b in default_bands() {
            for (a, b) in band_power(&px, &b).unwrap().iter().zip(band_power(&py, &b).unwrap()) {
                prop_assert!((b - a * k * k).abs() <= 1e-9 * b.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn band_powers_sum_to_variance(seed in any::<u64>(), sd in 0.5f64..50.0) {
        let montage = Arc::new(two_channels());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 1024, sd)).collect();
        let spec = welch_psd(&Epoch::from_channels(montage, &x).unwrap(), WelchConfig::default()).unwrap();
        let bands = default_bands();
        for (c, ch) in x.iter().enumerate() {
            let mean = ch.iter().sum::<f64>() / ch.len() as f64;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ch.len() - 1) as f64;
            let total: f64 = bands.iter().map(|b| band_power(&spec, b).unwrap()[c]).sum();
            prop_assert!((total - var).abs() <= 0.15 * var, "{total} vs {var}");
        }
    }

    #[test]
    fn epocher_emits_exactly_the_gap_free_windows(
        n in 128usize..700,
        gaps in proptest::collection::btree_set(1u64..700, 0..6),
    ) {
        let montage = Arc::new(two_channels());
        let cfg = EpochConfig::default();
        let (len, hop) = cfg.samples(128.0).unwrap();
        let mut e = Epocher::new(montage, cfg).unwrap();
        let present: Vec<u64> = (0..n as u64).filter(|s| !gaps.contains(s)).collect();
        let mut starts = Vec::new();
        for &seq in &present {
            for ep in e.push(EegFrame { seq, t: seq as f64 / 128.0, values: vec![0.0, 0.0] }) {
                let frames = ep.frames();
                prop_assert_eq!(frames.len(), len);
                prop_assert!(frames.windows(2).all(|w| w[1].seq == w[0].seq + 1));
                starts.push(frames[0].seq);
            }
        }
        let last = *present.last().unwrap();
        let expected: Vec<u64> = (0..)
            .map(|k| k * hop as u64)
            .take_while(|s| s + len as u64 - 1 <= last)
            .filter(|s| (*s..s + len as u64).all(|q| !gaps.contains(&q)))
            .collect();
        prop_assert_eq!(&starts, &expected);
        let total_windows = (0..).map(|k| k * hop as u64).take_while(|s| s + len as u64 - 1 <= last).count();
        prop_assert_eq!(e.dropped(), total_windows - expected.len());
    }

    #[test]
    fn confidences_are_distributions(seed in any::<u64>(), forest in any::<bool>()) {
        let ds = blobs(seed, 10, 1.0);
        let kind = if forest { ModelKind::RandomForest } else { ModelKind::LinearDiscriminant };
        let cfg = FitConfig { trees: 15, seed, ..FitConfig::with_kind(kind) };
        let model = fit_dataset(&ds, &cfg, &meta()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..20 {
            let p = model.predict(&fv(&noise(&mut rng, 10, 4.0))).unwrap();
            let sum: f64 = p.confidences.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(p.confidences.iter().all(|&c| c > 0.0 && c <= 1.0));
            prop_assert_eq!(p.confidence(), p.confidences.iter().cloned().fold(0.0, f64::max));
        }
    }

    #[test]
    fn lda_decisions_ignore_a_constant_feature_shift(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let ds = blobs(seed, 10, 1.5);
        let shifted = Dataset {
            x: ds.x.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect(),
            ..ds.clone()
        };
        let cfg = FitConfig::default();
        let a = fit_dataset(&ds, &cfg, &meta()).unwrap();
        let b = fit_dataset(&shifted, &cfg, &meta()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        for _ in 0..30 {
            let x = noise(&mut rng, 10, 3.0);
            let xs: Vec<f64> = x.iter().map(|v| v + shift).collect();
            prop_assert_eq!(a.predict(&fv(&x)).unwrap().label, b.predict(&fv(&xs)).unwrap().label);
        }
    }

    #[test]
    fn folds_never_split_a_trial(seed in any::<u64>(), k in 2usize..5) {
        let ds = blobs(seed, 20, 1.0);
        let folds = assign_folds(&ds, k, seed).unwrap();
        for g in ds.group.iter() {
            prop_assert!(folds.contains_key(g));
        }
        // Each class's trials spread evenly over the folds.
        for c in 0..5 {
            let mut per_fold = vec![0; k];
            for t in 0..4 {
                per_fold[folds[&(c * 1000 + t)]] += 1;
            }
            prop_assert!(per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn decoded_events_respect_threshold_and_refractory(
        seed in any::<u64>(),
        threshold in 0.25f64..0.95,
        dwell in 1usize..5,
        refractory in 0.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<_> = (0..150)
            .map(|i| {
                let mut s = [0.0; 5];
                for v in &mut s {
                    *v = rng.random::<f64>();
                }
                s[rng.random_range(0..5)] += rng.random::<f64>() * 8.0;
                neurochair_core::classifier::Prediction::from_scores(s, i as f64 * 0.25, i as f64 * 0.25 + 1.0)
            })
            .collect();
        let cfg = DecoderConfig { threshold, dwell, refractory_s: refractory, ..DecoderConfig::default() };
        let events = decode(&preds, &cfg).unwrap();
        for e in &events {
            prop_assert!(e.confidence >= threshold || e.command == Command::Stop);
        }
        for w in events.windows(2) {
            prop_assert!(w[1].issued_at - w[0].issued_at >= refractory - 1e-9);
            prop_assert!(!(w[0].command == w[1].command && w[0].command.is_translation()));
        }
    }
}

#[test]
fn forest_is_bit_reproducible_and_survives_a_file_round_trip() {
    let ds = blobs(3, 12, 1.2);
    let cfg = FitConfig {
        trees: 25,
        seed: 77,
        ..FitConfig::with_kind(ModelKind::RandomForest)
    };
    let a = fit_dataset(&ds, &cfg, &meta()).unwrap();
    let b = fit_dataset(&ds, &cfg, &meta()).unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rf.json");
    save_model(&a, &path).unwrap();
    let c = load_model(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let x = fv(&noise(&mut rng, 10, 3.0));
        assert_eq!(a.predict(&x).unwrap(), c.predict(&x).unwrap());
    }
}

#[test]
fn csv_round_trip_is_byte_stable() {
    let spec = ScenarioSpec::calibration(4).fitted_to(12.0).unwrap();
    let rec = generate_recording(&spec, &default_montage()).unwrap();
    let mut first = Vec::new();
    write_csv_to(&mut first, &rec).unwrap();
    let back = read_csv(first.as_slice(), &default_montage()).unwrap();
    let mut second = Vec::new();
    write_csv_to(&mut second, &back).unwrap();
    assert_eq!(first, second);
}

#[test]
fn batch_extraction_matches_sequential() {
    let spec = ScenarioSpec::calibration(8).fitted_to(20.0).unwrap();
    let montage = Arc::new(default_montage());
    let rec = generate_recording(&spec, &montage).unwrap();
    let mut e = Epocher::new(montage.clone(), EpochConfig::default()).unwrap();
    let epochs: Vec<_> = rec.frames.into_iter().flat_map(|f| e.push(f)).collect();
    let fx = FeatureExtractor::new(
        montage,
        &default_bands(),
        &neurochair_core::dsp::default_filter_chain(None),
        WelchConfig::default(),
    )
    .unwrap();
    let batch = fx.extract_batch(&epochs).unwrap();
    let single: Vec<_> = epochs.iter().map(|ep| fx.extract(ep).unwrap()).collect();
    assert_eq!(batch, single);
}
