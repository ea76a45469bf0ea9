//! Property tests of the algebraic invariants.

use proptest::prelude::*;

use mzmix::evaluate::match_peaks;
use mzmix::model::{GaussianComponent, MixtureModel};
use mzmix::partition::{subtract_splitters, Splitter};
use mzmix::peaks::detect_peaks;
use mzmix::postprocess::{merge_components, MergePolicy};
use mzmix::spectrum::Spectrum;

fn arb_components(max_k: usize) -> impl Strategy<Value = Vec<GaussianComponent>> {
    prop::collection::vec(
        (0.05f64..1.0, 1000.0f64..9000.0, 0.5f64..30.0),
        1..=max_k,
    )
    .prop_map(|raw| {
        let total: f64 = raw.iter().map(|(a, _, _)| a).sum();
        raw.into_iter()
            .map(|(a, mu, sigma)| GaussianComponent::new(a / total, mu, sigma))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Rendering with the locally computed scale reproduces the signal sum
    /// to floating tolerance, whatever the signal was.
    #[test]
    fn scaling_round_trip(
        components in arb_components(4),
        signal_seed in 0u64..1000,
    ) {
        let model = MixtureModel::new(components, 1.0, 0.0).unwrap();
        // Dense grid covering +/- 6 sigma of every component.
        let lo = model.components().iter().map(|c| c.mu - 6.0 * c.sigma).fold(f64::INFINITY, f64::min);
        let hi = model.components().iter().map(|c| c.mu + 6.0 * c.sigma).fold(f64::NEG_INFINITY, f64::max);
        let n = 800;
        let mz: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let mut state = signal_seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
        let y: Vec<f64> = (0..n).map(|_| {
            state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
            ((state >> 32) % 1000) as f64 / 10.0
        }).collect();
        let spectrum = Spectrum::new(mz, y).unwrap();
        let scale = model.local_scale(&spectrum, 0..n).unwrap();
        let scaled = model.with_scale(scale).unwrap();
        let rendered = scaled.render_scaled(spectrum.mz(), 0..n).unwrap();
        let sum_rendered: f64 = rendered.iter().sum();
        let sum_signal = spectrum.total_ion_current();
        prop_assert!((sum_rendered - sum_signal).abs() <= 1e-9 * sum_signal.max(1.0));
    }

    /// Mixing proportions still sum to one after any merge pass.
    #[test]
    fn merge_preserves_normalization(
        components in arb_components(8),
        mz_thr in 0.0f64..2.0,
        sigma_thr in 0.0f64..0.5,
    ) {
        let model = MixtureModel::new(components, 10.0, 0.0).unwrap();
        let merged = merge_components(&model, &MergePolicy { mz_thr, sigma_thr }).unwrap();
        let sum: f64 = merged.components().iter().map(|c| c.alpha).sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(merged.k() <= model.k());
        // Means stay sorted.
        for pair in merged.components().windows(2) {
            prop_assert!(pair[0].mu <= pair[1].mu);
        }
    }

    /// Splitter subtraction never produces negatives and never increases
    /// any intensity.
    #[test]
    fn subtraction_is_bounded(
        anchor in 2000.0f64..8000.0,
        scale in 0.0f64..5000.0,
        sigma in 0.5f64..20.0,
    ) {
        let mz: Vec<f64> = (0..2000).map(|i| 1000.0 + i as f64 * 4.0).collect();
        let y: Vec<f64> = mz.iter().map(|&x| (x / 700.0).sin().abs() * 50.0).collect();
        let spectrum = Spectrum::new(mz, y).unwrap();
        let splitter = Splitter {
            anchor,
            components: vec![GaussianComponent::new(1.0, anchor, sigma)],
            scale,
        };
        let residual = subtract_splitters(&spectrum, &[splitter]);
        for (r, y) in residual.intensity().iter().zip(spectrum.intensity()) {
            prop_assert!(*r >= 0.0);
            prop_assert!(*r <= *y + 1e-12);
        }
    }

    /// Raising the SNR threshold never yields more detections.
    #[test]
    fn detection_count_monotone_in_snr(seed in 0u64..500) {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mz: Vec<f64> = (0..1500).map(|i| 2000.0 + i as f64).collect();
        let y: Vec<f64> = mz.iter().enumerate().map(|(i, &x)| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let noise = ((state >> 40) % 100) as f64 / 25.0;
            let humps = 40.0 * (-0.5 * ((x - 2300.0) / 8.0_f64).powi(2)).exp()
                + 25.0 * (-0.5 * ((x - 2900.0) / 6.0_f64).powi(2)).exp()
                + if i % 97 == 0 { 12.0 } else { 0.0 };
            humps + noise
        }).collect();
        let spectrum = Spectrum::new(mz, y).unwrap();
        let mut last = usize::MAX;
        for snr in [0.0, 1.0, 2.0, 4.0, 8.0] {
            let n = detect_peaks(&spectrum, 2.0, snr).len();
            prop_assert!(n <= last);
            last = n;
        }
    }

    /// Matching is one-to-one and invariant under a common positive scale.
    #[test]
    fn matching_one_to_one_and_scale_free(
        detected in prop::collection::vec(1000.0f64..9000.0, 0..40),
        truth in prop::collection::vec(1000.0f64..9000.0, 0..40),
        factor in 0.1f64..50.0,
    ) {
        let m = match_peaks(&detected, &truth, 0.003);
        let mut det_seen = std::collections::HashSet::new();
        let mut truth_seen = std::collections::HashSet::new();
        for &(i, j) in &m.pairs {
            prop_assert!(det_seen.insert(i), "detected {i} matched twice");
            prop_assert!(truth_seen.insert(j), "truth {j} matched twice");
            prop_assert!((detected[i] - truth[j]).abs() <= 0.003 * truth[j]);
        }
        let d2: Vec<f64> = detected.iter().map(|v| v * factor).collect();
        let t2: Vec<f64> = truth.iter().map(|v| v * factor).collect();
        let m2 = match_peaks(&d2, &t2, 0.003);
        prop_assert_eq!(m.pairs, m2.pairs);
    }
}
