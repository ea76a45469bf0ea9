//! Initial peak detection with FWHH estimation, the average coefficient of
//! variation, and the peak-quality score used to select clear peaks.

use crate::error::{Error, Result};
use crate::model::FWHH_PER_SIGMA;
use crate::spectrum::Spectrum;

/// Quality returned when a peak's neighbouring minima are both zero:
/// a finite stand-in for "isolated on empty background".
pub const QUALITY_CAP: f64 = 1e12;

/// A detected local maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Position in Da.
    pub position: f64,
    /// Height in counts (on the smoothed signal).
    pub height: f64,
    /// Full width at half height in Da.
    pub fwhh: f64,
    /// Ratio of the height to the larger of the two neighbouring minima.
    /// Zero until the list has been scored.
    pub quality: f64,
}

/// Peaks of one spectrum, sorted by position.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakList {
    peaks: Vec<Peak>,
    /// Identifier of the spectrum the peaks came from.
    pub source: String,
}

impl PeakList {
    pub fn new(peaks: Vec<Peak>, source: impl Into<String>) -> Result<Self> {
        for pair in peaks.windows(2) {
            if !(pair[1].position > pair[0].position) {
                return Err(Error::Data(format!(
                    "peak positions not strictly increasing near {}",
                    pair[0].position
                )));
            }
        }
        Ok(PeakList {
            peaks,
            source: source.into(),
        })
    }

    pub fn peaks(&self) -> &[Peak] {
        &self.peaks
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.position).collect()
    }
}

/// Robust noise scale: 1.4826 * MAD of the first differences, divided by
/// sqrt(2) because differencing doubles the variance of white noise.
fn noise_scale(intensity: &[f64]) -> f64 {
    let mut diffs: Vec<f64> = intensity.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.is_empty() {
        return 0.0;
    }
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = median_sorted(&diffs);
    let mut abs_dev: Vec<f64> = diffs.iter().map(|d| (d - median).abs()).collect();
    abs_dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    1.4826 * median_sorted(&abs_dev) / std::f64::consts::SQRT_2
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Gaussian-kernel smoothing on a possibly non-uniform grid. The kernel is
/// parameterised by its half-width at half maximum, truncated at 4 sigma,
/// and normalised per point (Nadaraya–Watson), so flat signals stay flat.
pub fn gaussian_smooth(mz: &[f64], intensity: &[f64], halfwidth_da: f64) -> Vec<f64> {
    let sigma = halfwidth_da / (2.0f64.ln() * 2.0).sqrt();
    let cutoff = 4.0 * sigma;
    let n = mz.len();
    let mut out = vec![0.0; n];
    let mut lo = 0usize;
    let mut hi = 0usize;
    for i in 0..n {
        let x = mz[i];
        while lo < n && mz[lo] < x - cutoff {
            lo += 1;
        }
        if hi < i {
            hi = i;
        }
        while hi < n && mz[hi] <= x + cutoff {
            hi += 1;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for j in lo..hi {
            let z = (mz[j] - x) / sigma;
            let w = (-0.5 * z * z).exp();
            num += w * intensity[j];
            den += w;
        }
        out[i] = num / den;
    }
    out
}

/// FWHH of the peak at index `i` of the smoothed signal. Half-height
/// crossings are located by linear interpolation; a side blocked by a
/// rising neighbour or the spectrum boundary is mirrored from the other
/// side, and when both sides are blocked the width falls back to the
/// curvature estimate FWHH = 2.355 * sqrt(h / |y''|).
fn estimate_fwhh(mz: &[f64], smoothed: &[f64], i: usize) -> f64 {
    let half = smoothed[i] / 2.0;
    let left = half_crossing(mz, smoothed, i, half, false);
    let right = half_crossing(mz, smoothed, i, half, true);
    match (left, right) {
        (Some(l), Some(r)) => l + r,
        (Some(l), None) => 2.0 * l,
        (None, Some(r)) => 2.0 * r,
        (None, None) => {
            let step_l = mz[i] - mz[i - 1];
            let step_r = mz[i + 1] - mz[i];
            let step = 0.5 * (step_l + step_r);
            let second = (smoothed[i + 1] - 2.0 * smoothed[i] + smoothed[i - 1]) / (step * step);
            // Strict maxima have negative curvature, but guard anyway.
            if second >= 0.0 {
                return FWHH_PER_SIGMA * step;
            }
            FWHH_PER_SIGMA * (smoothed[i] / -second).sqrt()
        }
    }
}

/// Distance from the apex to the half-height crossing on one side, or None
/// if the signal starts rising again (a neighbouring peak cuts the descent
/// off) or the boundary is reached first.
fn half_crossing(mz: &[f64], s: &[f64], apex: usize, half: f64, rightward: bool) -> Option<f64> {
    let n = s.len();
    let mut prev = apex;
    loop {
        let next = if rightward {
            if prev + 1 >= n {
                return None;
            }
            prev + 1
        } else {
            if prev == 0 {
                return None;
            }
            prev - 1
        };
        if s[next] <= half {
            // Interpolate between prev (above half) and next (at or below).
            let frac = if s[prev] == s[next] {
                0.0
            } else {
                (s[prev] - half) / (s[prev] - s[next])
            };
            let x = mz[prev] + frac * (mz[next] - mz[prev]);
            return Some((x - mz[apex]).abs());
        }
        if s[next] > s[prev] {
            return None; // rising again before the crossing
        }
        prev = next;
    }
}

/// Detect strict local maxima of the Gaussian-smoothed signal whose height
/// clears `min_snr` times the robust noise scale of the raw signal.
/// Quality scores are left at zero; see [`score_peaks`].
pub fn detect_peaks(spectrum: &Spectrum, smoothing_halfwidth_da: f64, min_snr: f64) -> PeakList {
    let mz = spectrum.mz();
    let smoothed = gaussian_smooth(mz, spectrum.intensity(), smoothing_halfwidth_da);
    let threshold = min_snr * noise_scale(spectrum.intensity());
    let mut peaks = Vec::new();
    for i in 1..mz.len() - 1 {
        let h = smoothed[i];
        if h > smoothed[i - 1] && h > smoothed[i + 1] && h > 0.0 && h >= threshold {
            peaks.push(Peak {
                position: mz[i],
                height: h,
                fwhh: estimate_fwhh(mz, &smoothed, i),
                quality: 0.0,
            });
        }
    }
    PeakList::new(peaks, "").expect("maxima indices are strictly increasing")
}

/// Mean of FWHH / position over all peaks. This ratio tracks the (FWHH
/// flavoured) coefficient of variation of the components; callers divide by
/// 2.355 where a sigma-based value is needed.
pub fn average_cv(list: &PeakList) -> Result<f64> {
    if list.is_empty() {
        return Err(Error::NoPeaks);
    }
    let sum: f64 = list.peaks().iter().map(|p| p.fwhh / p.position).sum();
    Ok(sum / list.len() as f64)
}

/// Quality of a peak: its height over the larger of the two lowest signal
/// values beside it. The search on each side extends `search_halfwidth_da`
/// but stops early at the given neighbouring peak positions. A side with
/// no points counts as zero; if both minima are zero the quality saturates
/// at [`QUALITY_CAP`].
pub fn peak_quality(
    spectrum: &Spectrum,
    peak: &Peak,
    search_halfwidth_da: f64,
    neighbors: (Option<f64>, Option<f64>),
) -> Result<f64> {
    let (lo, hi) = spectrum.span();
    if peak.position < lo || peak.position > hi {
        return Err(Error::Data(format!(
            "peak at {} outside spectrum range [{lo}, {hi}]",
            peak.position
        )));
    }
    let mz = spectrum.mz();
    let ys = spectrum.intensity();
    let apex = spectrum.nearest_index(peak.position);

    let left_bound = match neighbors.0 {
        Some(p) => (peak.position - search_halfwidth_da).max(p),
        None => peak.position - search_halfwidth_da,
    };
    let right_bound = match neighbors.1 {
        Some(p) => (peak.position + search_halfwidth_da).min(p),
        None => peak.position + search_halfwidth_da,
    };

    let from = mz.partition_point(|&x| x < left_bound).min(apex);
    let left_min = ys[from..apex]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let left_min = if left_min.is_finite() { left_min } else { 0.0 };

    let to = mz.partition_point(|&x| x <= right_bound);
    let right_min = ys[(apex + 1).min(to)..to]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let right_min = if right_min.is_finite() { right_min } else { 0.0 };

    let denom = left_min.max(right_min);
    if denom <= 0.0 {
        return Ok(QUALITY_CAP);
    }
    Ok((peak.height / denom).min(QUALITY_CAP))
}

/// Fill in quality scores for a whole list. The per-peak search half-width
/// is `search_mult` times the locally expected sigma (avg_cv / 2.355 *
/// position), and the search stops at adjacent detected peaks.
pub fn score_peaks(
    spectrum: &Spectrum,
    list: &PeakList,
    search_mult: f64,
    avg_cv: f64,
) -> Result<PeakList> {
    let peaks = list.peaks();
    let mut scored = Vec::with_capacity(peaks.len());
    for (i, p) in peaks.iter().enumerate() {
        let halfwidth = search_mult * (avg_cv / FWHH_PER_SIGMA) * p.position;
        let left = if i > 0 { Some(peaks[i - 1].position) } else { None };
        let right = peaks.get(i + 1).map(|q| q.position);
        let quality = peak_quality(spectrum, p, halfwidth, (left, right))?;
        scored.push(Peak { quality, ..*p });
    }
    PeakList::new(scored, list.source.clone())
}
