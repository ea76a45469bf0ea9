//! Signal partitioning: clear-peak selection, splitter-segment extraction
//! with warped-down borders, splitter extraction by the three-sigma rule,
//! splitter subtraction, and partitioning of the residual into segments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{render_components, GaussianComponent, MixtureModel};
use crate::peaks::{Peak, PeakList};
use crate::spectrum::Spectrum;

/// Peaks below the clear-peak quality threshold may still be accepted to
/// bound a growing gap, but never below this quality.
pub const FORCED_MIN_QUALITY: f64 = 1.2;

/// How a fragment of the signal is used downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    /// Fragment cut around a clear peak, fitted to extract a splitter.
    #[serde(rename = "splitter_segment")]
    SplitterSegment,
    /// Residual fragment between splitters, fitted as-is.
    #[serde(rename = "segment")]
    Plain,
}

/// A contiguous fragment of a spectrum, possibly augmented with synthetic
/// tapered tails (see [`warp_down`]). `n_min`/`n_max` are inclusive indices
/// into the parent spectrum; the arrays may extend past them after warping,
/// and `real_range` brackets the non-synthetic m/z values.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    n_min: usize,
    n_max: usize,
    mz: Vec<f64>,
    intensity: Vec<f64>,
    kind: SegmentKind,
    anchor: Option<f64>,
    real_lo: f64,
    real_hi: f64,
}

impl Segment {
    pub fn from_spectrum(
        spectrum: &Spectrum,
        n_min: usize,
        n_max: usize,
        kind: SegmentKind,
        anchor: Option<f64>,
    ) -> Result<Self> {
        if n_min > n_max || n_max >= spectrum.len() {
            return Err(Error::Data(format!(
                "segment bounds [{n_min}, {n_max}] invalid for spectrum of length {}",
                spectrum.len()
            )));
        }
        let mz = spectrum.mz()[n_min..=n_max].to_vec();
        let intensity = spectrum.intensity()[n_min..=n_max].to_vec();
        let real_lo = mz[0];
        let real_hi = *mz.last().unwrap();
        Ok(Segment {
            n_min,
            n_max,
            mz,
            intensity,
            kind,
            anchor,
            real_lo,
            real_hi,
        })
    }

    pub fn n_min(&self) -> usize {
        self.n_min
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn mz(&self) -> &[f64] {
        &self.mz
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn kind(&self) -> SegmentKind {
        self.kind
    }

    pub fn anchor(&self) -> Option<f64> {
        self.anchor
    }

    /// Total signal mass, synthetic tails included.
    pub fn mass(&self) -> f64 {
        self.intensity.iter().sum()
    }

    /// Bounds of the non-synthetic data.
    pub fn real_range(&self) -> (f64, f64) {
        (self.real_lo, self.real_hi)
    }

    pub fn is_warped(&self) -> bool {
        self.mz[0] < self.real_lo || *self.mz.last().unwrap() > self.real_hi
    }

    /// Width of the real data in Da.
    pub fn width_da(&self) -> f64 {
        self.real_hi - self.real_lo
    }

    pub fn center_mz(&self) -> f64 {
        0.5 * (self.real_lo + self.real_hi)
    }

    pub fn len(&self) -> usize {
        self.mz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mz.is_empty()
    }
}

/// The reliable sub-model extracted from a splitter-segment fit: the
/// components within three standard deviations of the clear peak, kept
/// with their fitted mixing proportions and the fit's scale so the
/// splitter renders in counts (w_k = scale * alpha_k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splitter {
    pub anchor: f64,
    pub components: Vec<GaussianComponent>,
    pub scale: f64,
}

impl Splitter {
    /// Splitter signal in counts on a grid.
    pub fn render(&self, mz: &[f64]) -> Vec<f64> {
        render_components(mz, &self.components, self.scale)
    }
}

/// Greedy left-to-right selection of clear (splitting) peaks.
///
/// Within each reachable window the highest-quality peak with quality at
/// least `min_quality` is accepted. Consecutive accepted peaks are kept at
/// least `min_gap` local expected FWHHs apart; when skipping a window would
/// stretch the gap past `max_gap` expected FWHHs, the best peak of the
/// window is accepted anyway provided its quality reaches
/// [`FORCED_MIN_QUALITY`]. The local expected FWHH at position p is
/// `avg_cv * p`.
pub fn pick_clear_peaks(
    list: &PeakList,
    min_quality: f64,
    min_gap: f64,
    max_gap: f64,
    avg_cv: f64,
) -> PeakList {
    let peaks = list.peaks();
    let expected_fwhh = |p: f64| avg_cv * p;
    let mut accepted: Vec<Peak> = Vec::new();
    let mut idx = 0;
    while idx < peaks.len() {
        let (start, horizon) = match accepted.last() {
            Some(prev) => (
                prev.position + min_gap * expected_fwhh(prev.position),
                prev.position + max_gap * expected_fwhh(prev.position),
            ),
            None => (peaks[idx].position, f64::INFINITY),
        };
        while idx < peaks.len() && peaks[idx].position < start {
            idx += 1;
        }
        if idx >= peaks.len() {
            break;
        }
        // Window of candidates: from the first admissible peak up to the
        // gap horizon. If even the first candidate lies past the horizon
        // the gap is already lost; re-anchor the window there.
        let w_anchor = peaks[idx].position;
        let w_end = if w_anchor > horizon {
            w_anchor + max_gap * expected_fwhh(w_anchor)
        } else {
            horizon.min(w_anchor + max_gap * expected_fwhh(w_anchor))
        };
        let mut end_idx = idx;
        while end_idx < peaks.len() && peaks[end_idx].position <= w_end {
            end_idx += 1;
        }
        let pool = &peaks[idx..end_idx];
        let pick = best_quality(pool, min_quality).or_else(|| best_quality(pool, FORCED_MIN_QUALITY));
        match pick {
            Some(p) => {
                let pos = p.position;
                accepted.push(*p);
                while idx < peaks.len() && peaks[idx].position <= pos {
                    idx += 1;
                }
            }
            None => idx = end_idx,
        }
    }
    PeakList::new(accepted, list.source.clone()).expect("accepted peaks stay ordered")
}

/// Highest-quality peak with quality >= `q_min`; leftmost wins ties.
fn best_quality(pool: &[Peak], q_min: f64) -> Option<&Peak> {
    let mut best: Option<&Peak> = None;
    for p in pool {
        if p.quality >= q_min && best.is_none_or(|b| p.quality > b.quality) {
            best = Some(p);
        }
    }
    best
}

/// Cut the fragment around a clear peak: `margin_mult` expected FWHHs
/// (avg_cv * anchor) on each side, clipped to the spectrum bounds. The
/// grid point nearest the anchor is always included.
pub fn extract_splitter_segment(
    spectrum: &Spectrum,
    anchor: f64,
    avg_cv: f64,
    margin_mult: f64,
) -> Result<Segment> {
    let (lo, hi) = spectrum.span();
    if anchor < lo || anchor > hi {
        return Err(Error::Data(format!(
            "anchor {anchor} outside spectrum range [{lo}, {hi}]"
        )));
    }
    let margin = margin_mult * avg_cv * anchor;
    let mz = spectrum.mz();
    let mut n_min = mz.partition_point(|&x| x < anchor - margin);
    let mut n_max = mz.partition_point(|&x| x <= anchor + margin);
    n_max = n_max.saturating_sub(1);
    let anchor_idx = spectrum.nearest_index(anchor);
    n_min = n_min.min(anchor_idx);
    n_max = n_max.max(anchor_idx).min(spectrum.len() - 1);
    Segment::from_spectrum(spectrum, n_min, n_max, SegmentKind::SplitterSegment, Some(anchor))
}

/// Augment a segment with synthetic tails so truncation does not distort
/// boundary components. Points are appended on both sides at the segment's
/// edge grid spacing over `taper_width`, with values
/// `border * exp(-((x - border_x) / (taper_width / 3))^2)`, which decay to
/// about 1.2e-4 of the border value at the taper width.
pub fn warp_down(segment: &Segment, taper_width: f64) -> Segment {
    if segment.len() < 2 || !(taper_width > 0.0) {
        return segment.clone();
    }
    let mz = segment.mz();
    let ys = segment.intensity();
    let scale = taper_width / 3.0;

    let left_step = mz[1] - mz[0];
    let right_step = mz[mz.len() - 1] - mz[mz.len() - 2];
    let n_left = (taper_width / left_step).ceil() as usize;
    let n_right = (taper_width / right_step).ceil() as usize;

    let mut new_mz = Vec::with_capacity(mz.len() + n_left + n_right);
    let mut new_y = Vec::with_capacity(new_mz.capacity());
    for i in (1..=n_left).rev() {
        let d = left_step * i as f64;
        new_mz.push(mz[0] - d);
        new_y.push(ys[0] * (-(d / scale).powi(2)).exp());
    }
    new_mz.extend_from_slice(mz);
    new_y.extend_from_slice(ys);
    for i in 1..=n_right {
        let d = right_step * i as f64;
        new_mz.push(mz[mz.len() - 1] + d);
        new_y.push(ys[ys.len() - 1] * (-(d / scale).powi(2)).exp());
    }

    Segment {
        n_min: segment.n_min,
        n_max: segment.n_max,
        mz: new_mz,
        intensity: new_y,
        kind: segment.kind,
        anchor: segment.anchor,
        real_lo: segment.real_lo,
        real_hi: segment.real_hi,
    }
}

/// Keep the components whose means lie within three of their own standard
/// deviations of the anchor and inside the non-synthetic range; their
/// fitted mixing proportions and the fit's scale are preserved so that
/// w_k = scale * alpha_k stays meaningful in counts.
pub fn extract_splitter(
    model: &MixtureModel,
    anchor: f64,
    real_range: (f64, f64),
) -> Result<Splitter> {
    let kept: Vec<GaussianComponent> = model
        .components()
        .iter()
        .filter(|c| {
            (c.mu - anchor).abs() < 3.0 * c.sigma && c.mu >= real_range.0 && c.mu <= real_range.1
        })
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(Error::SplitterRejected { anchor });
    }
    Ok(Splitter {
        anchor,
        components: kept,
        scale: model.scale(),
    })
}

/// Subtract the rendered splitter signals from the spectrum, clamping at
/// zero so downstream fits see a nonnegative signal.
pub fn subtract_splitters(spectrum: &Spectrum, splitters: &[Splitter]) -> Spectrum {
    let mut residual = spectrum.intensity().to_vec();
    for sp in splitters {
        let rendered = sp.render(spectrum.mz());
        for (r, v) in residual.iter_mut().zip(rendered) {
            *r -= v;
        }
    }
    for r in &mut residual {
        if *r < 0.0 {
            *r = 0.0;
        }
    }
    spectrum
        .with_intensity(residual)
        .expect("clamped residual is a valid spectrum")
}

/// Cut the residual at the splitter anchors and trim each cut down to its
/// supported core: leading/trailing runs below `floor_frac` of the cut's
/// maximum are dropped, and whole cuts are dropped when their mass share of
/// the residual falls below `10 * alpha_min` (they could not hold even a
/// handful of minimum-weight components).
pub fn partition_segments(
    residual: &Spectrum,
    splitters: &[Splitter],
    floor_frac: f64,
    alpha_min: f64,
) -> Vec<Segment> {
    let n = residual.len();
    let total_mass = residual.total_ion_current();
    let mut bounds = vec![0usize];
    let mut cuts: Vec<usize> = splitters
        .iter()
        .map(|sp| residual.nearest_index(sp.anchor))
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    for c in cuts {
        if c > 0 && c < n {
            bounds.push(c);
        }
    }
    bounds.push(n);
    bounds.dedup();

    let ys = residual.intensity();
    let mut segments = Vec::new();
    for w in bounds.windows(2) {
        let (from, to) = (w[0], w[1]); // half-open
        if from >= to {
            continue;
        }
        let max = ys[from..to].iter().cloned().fold(0.0, f64::max);
        if max <= 0.0 {
            continue;
        }
        let floor = floor_frac * max;
        let mut a = from;
        while a < to && ys[a] < floor {
            a += 1;
        }
        let mut b = to - 1;
        while b > a && ys[b] < floor {
            b -= 1;
        }
        let mass: f64 = ys[a..=b].iter().sum();
        if total_mass > 0.0 && mass < 10.0 * alpha_min * total_mass {
            continue;
        }
        segments.push(
            Segment::from_spectrum(residual, a, b, SegmentKind::Plain, None)
                .expect("trimmed bounds are valid"),
        );
    }
    segments
}
