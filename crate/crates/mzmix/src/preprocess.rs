//! Mean-spectrum computation and baseline estimation/removal.
//!
//! The baseline estimator slides a window (sized in Da, since the grid is
//! non-uniform) across the spectrum in half-window steps, takes a low
//! quantile of the intensities in each window, and interpolates the window
//! anchors onto the full grid with a monotone piecewise-cubic (no overshoot
//! under the peaks). The estimate is clamped at zero.

use crate::error::{Error, Result};
use crate::spectrum::{Spectrum, SpectrumSet};

/// A baseline signal aligned with a spectrum grid, together with the
/// parameters it was estimated under.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEstimate {
    pub baseline: Vec<f64>,
    pub window_da: f64,
    pub quantile: f64,
}

/// Pointwise average of the spectra in a set: intensity\[n\] = mean_m y_mn.
pub fn mean_spectrum(set: &SpectrumSet) -> Spectrum {
    let m = set.n_spectra() as f64;
    let n = set.n_points();
    let mut mean = vec![0.0; n];
    for row in set.rows() {
        for (acc, &y) in mean.iter_mut().zip(row) {
            *acc += y;
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    Spectrum::new(set.mz().to_vec(), mean).expect("rows validated at set construction")
}

/// Quantile of a sorted slice with linear interpolation between order
/// statistics (h = (n-1)q).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Anchor positions and quantile values for the sliding baseline window.
/// Anchors step at half the window width; each anchor's value is the
/// requested quantile of the intensities within +/- window/2 of it.
pub fn baseline_anchors(spectrum: &Spectrum, window_da: f64, quantile: f64) -> Vec<(f64, f64)> {
    let (lo, hi) = spectrum.span();
    let half = window_da / 2.0;
    let step = half;
    let mz = spectrum.mz();
    let ys = spectrum.intensity();
    let mut anchors = Vec::new();
    let mut center = lo;
    loop {
        let from = mz.partition_point(|&x| x < center - half);
        let to = mz.partition_point(|&x| x <= center + half);
        if to > from {
            let mut vals: Vec<f64> = ys[from..to].to_vec();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            anchors.push((center, quantile_sorted(&vals, quantile)));
        }
        if center >= hi {
            break;
        }
        center = (center + step).min(hi);
    }
    anchors
}

/// Monotone piecewise-cubic Hermite interpolation (Fritsch–Carlson slopes)
/// through `(x, y)` knots, evaluated at `xs`. Evaluation outside the knot
/// span clamps to the end values.
fn pchip_eval(knots: &[(f64, f64)], xs: &[f64]) -> Vec<f64> {
    let n = knots.len();
    if n == 1 {
        return vec![knots[0].1; xs.len()];
    }
    let h: Vec<f64> = (0..n - 1).map(|i| knots[i + 1].0 - knots[i].0).collect();
    let delta: Vec<f64> = (0..n - 1)
        .map(|i| (knots[i + 1].1 - knots[i].1) / h[i])
        .collect();

    let mut m = vec![0.0; n];
    if n == 2 {
        m[0] = delta[0];
        m[1] = delta[0];
    } else {
        // Interior slopes: zero at local extrema, otherwise the weighted
        // harmonic mean of the neighbouring secants.
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                m[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        m[0] = endpoint_slope(h[0], h[1], delta[0], delta[1]);
        m[n - 1] = endpoint_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    }

    xs.iter()
        .map(|&x| {
            if x <= knots[0].0 {
                return knots[0].1;
            }
            if x >= knots[n - 1].0 {
                return knots[n - 1].1;
            }
            let i = match knots.binary_search_by(|k| k.0.partial_cmp(&x).unwrap()) {
                Ok(i) => return knots[i].1,
                Err(i) => i - 1,
            };
            let t = (x - knots[i].0) / h[i];
            let t2 = t * t;
            let t3 = t2 * t;
            let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
            let h10 = t3 - 2.0 * t2 + t;
            let h01 = -2.0 * t3 + 3.0 * t2;
            let h11 = t3 - t2;
            h00 * knots[i].1 + h10 * h[i] * m[i] + h01 * knots[i + 1].1 + h11 * h[i] * m[i + 1]
        })
        .collect()
}

fn endpoint_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let mut m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        m = 0.0;
    } else if d0 * d1 < 0.0 && m.abs() > 3.0 * d0.abs() {
        m = 3.0 * d0;
    }
    m
}

/// Estimate the slowly varying background under the peaks.
pub fn estimate_baseline(
    spectrum: &Spectrum,
    window_da: f64,
    quantile: f64,
) -> Result<BaselineEstimate> {
    let (lo, hi) = spectrum.span();
    if !(window_da > 0.0) {
        return Err(Error::Config(format!(
            "baseline window must be positive, got {window_da}"
        )));
    }
    if window_da > hi - lo {
        return Err(Error::Config(format!(
            "baseline window {window_da} Da exceeds spectrum span {}",
            hi - lo
        )));
    }
    if !(quantile > 0.0 && quantile <= 0.5) {
        return Err(Error::Config(format!(
            "baseline quantile must lie in (0, 0.5], got {quantile}"
        )));
    }
    let anchors = baseline_anchors(spectrum, window_da, quantile);
    let mut baseline = pchip_eval(&anchors, spectrum.mz());
    for v in &mut baseline {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(BaselineEstimate {
        baseline,
        window_da,
        quantile,
    })
}

/// Subtract the baseline and cut off negative values.
pub fn correct_baseline(spectrum: &Spectrum, baseline: &BaselineEstimate) -> Result<Spectrum> {
    if baseline.baseline.len() != spectrum.len() {
        return Err(Error::Data(format!(
            "baseline length {} does not match spectrum length {}",
            baseline.baseline.len(),
            spectrum.len()
        )));
    }
    let corrected: Vec<f64> = spectrum
        .intensity()
        .iter()
        .zip(&baseline.baseline)
        .map(|(&y, &b)| (y - b).max(0.0))
        .collect();
    spectrum.with_intensity(corrected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{baseline_value, BaselineParams};

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn mean_of_single_spectrum_is_identity() {
        let s = Spectrum::new(vec![1.0, 2.0, 3.0], vec![5.0, 0.0, 2.0]).unwrap();
        let set = SpectrumSet::from_spectra(vec![s.clone()]).unwrap();
        assert_eq!(mean_spectrum(&set), s);
    }

    #[test]
    fn mean_of_two_spectra() {
        let mz = vec![1.0, 2.0];
        let set = SpectrumSet::new(mz, vec![vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(mean_spectrum(&set).intensity(), &[1.0, 1.0]);
    }

    #[test]
    fn mean_matches_naive_column_average() {
        // Oracle: plain per-column accumulation in a different loop order.
        let mz = grid(100.0, 200.0, 64);
        let mut rows = Vec::new();
        let mut state = 12345u64;
        for _ in 0..100 {
            let row: Vec<f64> = (0..64)
                .map(|_| {
                    // Small deterministic LCG; values in [0, 10).
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((state >> 33) % 10_000) as f64 / 1000.0
                })
                .collect();
            rows.push(row);
        }
        let set = SpectrumSet::new(mz, rows.clone()).unwrap();
        let mean = mean_spectrum(&set);
        for n in 0..64 {
            let naive: f64 = rows.iter().map(|r| r[n]).sum::<f64>() / rows.len() as f64;
            assert!((mean.intensity()[n] - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_is_permutation_invariant() {
        let mz = grid(0.0, 10.0, 16);
        let rows = vec![
            (0..16).map(|i| i as f64).collect::<Vec<_>>(),
            (0..16).map(|i| (i * i) as f64).collect(),
            (0..16).map(|i| (16 - i) as f64).collect(),
        ];
        let mut reversed = rows.clone();
        reversed.reverse();
        let a = mean_spectrum(&SpectrumSet::new(mz.clone(), rows).unwrap());
        let b = mean_spectrum(&SpectrumSet::new(mz, reversed).unwrap());
        for (x, y) in a.intensity().iter().zip(b.intensity()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_spectrum_baseline_is_flat() {
        let mz = grid(1000.0, 2000.0, 500);
        let y = vec![7.5; 500];
        let s = Spectrum::new(mz, y).unwrap();
        let est = estimate_baseline(&s, 100.0, 0.1).unwrap();
        for &b in &est.baseline {
            assert!((b - 7.5).abs() < 1e-6, "baseline {b}");
        }
    }

    #[test]
    fn recovers_two_exponential_background() {
        // Pure background, no peaks: the estimate should track the truth
        // within 5% RMS for a 200 Da window at quantile 0.1.
        let params = BaselineParams {
            b1: 100.0,
            b2: 3000.0,
            b3: 80.0,
            b4: 500.0,
        };
        let mz = grid(2000.0, 10000.0, 10_000);
        let y: Vec<f64> = mz.iter().map(|&x| baseline_value(&params, x).max(0.0)).collect();
        let s = Spectrum::new(mz.clone(), y.clone()).unwrap();
        let est = estimate_baseline(&s, 200.0, 0.1).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (b, yv) in est.baseline.iter().zip(&y) {
            num += (b - yv).powi(2);
            den += yv.powi(2);
        }
        let rel_rms = (num / den).sqrt();
        assert!(rel_rms < 0.05, "relative RMS {rel_rms}");
    }

    #[test]
    fn baseline_stays_under_peaks() {
        // Background plus sparse tall Gaussians: under each peak the
        // estimate must not exceed the local true baseline by more than 10%.
        let params = BaselineParams {
            b1: 100.0,
            b2: 3000.0,
            b3: 80.0,
            b4: 500.0,
        };
        let mz = grid(2000.0, 10000.0, 10_000);
        let truth: Vec<f64> = mz.iter().map(|&x| baseline_value(&params, x).max(0.0)).collect();
        let peak_mus = [2500.0, 4000.0, 5500.0, 7000.0, 9000.0];
        let y: Vec<f64> = mz
            .iter()
            .zip(&truth)
            .map(|(&x, &b)| {
                let peaks: f64 = peak_mus
                    .iter()
                    .map(|&mu| {
                        let sigma = 0.001 * mu;
                        500.0 * (-0.5 * ((x - mu) / sigma).powi(2)).exp()
                    })
                    .sum();
                b + peaks
            })
            .collect();
        let s = Spectrum::new(mz.clone(), y).unwrap();
        let est = estimate_baseline(&s, 200.0, 0.1).unwrap();
        for &mu in &peak_mus {
            let idx = s.nearest_index(mu);
            assert!(
                est.baseline[idx] <= truth[idx] * 1.10,
                "estimate {} exceeds truth {} at {mu}",
                est.baseline[idx],
                truth[idx]
            );
        }
    }

    #[test]
    fn anchors_monotone_in_quantile() {
        let params = BaselineParams {
            b1: 100.0,
            b2: 3000.0,
            b3: 80.0,
            b4: 500.0,
        };
        let mz = grid(2000.0, 6000.0, 2_000);
        let mut state = 99u64;
        let y: Vec<f64> = mz
            .iter()
            .map(|&x| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                baseline_value(&params, x).max(0.0) + ((state >> 40) % 100) as f64 / 50.0
            })
            .collect();
        let s = Spectrum::new(mz, y).unwrap();
        let low = baseline_anchors(&s, 200.0, 0.1);
        let high = baseline_anchors(&s, 200.0, 0.4);
        assert_eq!(low.len(), high.len());
        for (l, h) in low.iter().zip(&high) {
            assert!(h.1 >= l.1 - 1e-12, "anchor at {} not monotone", l.0);
        }
    }

    #[test]
    fn correct_baseline_edge_cases() {
        let s = Spectrum::new(vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 1.0]).unwrap();
        // Baseline equal to the spectrum zeroes it out.
        let full = BaselineEstimate {
            baseline: s.intensity().to_vec(),
            window_da: 1.0,
            quantile: 0.1,
        };
        assert_eq!(correct_baseline(&s, &full).unwrap().intensity(), &[0.0; 3]);
        // Zero baseline is the identity.
        let zero = BaselineEstimate {
            baseline: vec![0.0; 3],
            window_da: 1.0,
            quantile: 0.1,
        };
        assert_eq!(correct_baseline(&s, &zero).unwrap(), s);
        // Length mismatch is an error.
        let bad = BaselineEstimate {
            baseline: vec![0.0; 2],
            window_da: 1.0,
            quantile: 0.1,
        };
        assert!(correct_baseline(&s, &bad).is_err());
    }

    #[test]
    fn corrected_is_nonnegative_and_bounded() {
        let s = Spectrum::new(vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 0.0, 5.0, 1.0]).unwrap();
        let b = BaselineEstimate {
            baseline: vec![3.0, 0.5, 2.0, 0.0],
            window_da: 1.0,
            quantile: 0.1,
        };
        let out = correct_baseline(&s, &b).unwrap();
        for ((&y, &bv), &o) in s.intensity().iter().zip(&b.baseline).zip(out.intensity()) {
            assert!(o >= 0.0);
            if bv >= 0.0 {
                assert!(o <= y.max(0.0));
            }
        }
    }

    #[test]
    fn window_larger_than_span_is_an_error() {
        let s = Spectrum::new(vec![0.0, 1.0, 2.0], vec![1.0; 3]).unwrap();
        assert!(matches!(
            estimate_baseline(&s, 10.0, 0.1),
            Err(Error::Config(_))
        ));
    }
}
