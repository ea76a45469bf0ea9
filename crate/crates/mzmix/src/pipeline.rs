//! The decomposition pipeline: baseline correction, peak detection, clear
//! peaks, splitter-segment fits, splitter subtraction, segment fits,
//! aggregation and post-processing, with per-segment diagnostics.

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::em::{default_k_cap, select_model, EmConfig, FitResult};
use crate::error::{Error, Result};
use crate::evaluate::EvalReport;
use crate::model::{MixtureModel, FWHH_PER_SIGMA};
use crate::partition::{
    extract_splitter, extract_splitter_segment, partition_segments, pick_clear_peaks,
    subtract_splitters, warp_down, Segment, SegmentKind, Splitter,
};
use crate::peaks::{average_cv, detect_peaks, score_peaks, PeakList};
use crate::postprocess::{
    aggregate, filter_noise_components, merge_components, FilterStatus, MergePolicy,
};
use crate::preprocess::{correct_baseline, estimate_baseline};
use crate::spectrum::Spectrum;

/// Per-fit diagnostics of one segment (splitter-segment or plain).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDiagnostic {
    pub kind: SegmentKind,
    pub anchor: Option<f64>,
    pub n_min: usize,
    pub n_max: usize,
    pub k: usize,
    pub iters: usize,
    pub delta: f64,
    pub penalty: f64,
    pub k_removed: usize,
}

impl SegmentDiagnostic {
    fn from_fit(segment: &Segment, fit: &FitResult) -> Self {
        SegmentDiagnostic {
            kind: segment.kind(),
            anchor: segment.anchor(),
            n_min: segment.n_min(),
            n_max: segment.n_max(),
            k: fit.model.k(),
            iters: fit.iters,
            delta: fit.delta,
            penalty: fit.penalty,
            k_removed: fit.k_removed,
        }
    }
}

/// Whole-run diagnostics, serialized next to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub avg_cv: f64,
    pub n_peaks: usize,
    pub n_clear_peaks: usize,
    pub rejected_anchors: Vec<f64>,
    pub segments: Vec<SegmentDiagnostic>,
    pub aggregate_k: usize,
    pub final_k: usize,
    /// Scaled absolute error of the aggregate against the corrected signal.
    pub delta_aggregate: f64,
    /// Same, for the post-processed model.
    pub delta_final: f64,
    pub filter_applied: bool,
    pub filter_removed: usize,
    pub warnings: Vec<String>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub corrected: Spectrum,
    pub detected: PeakList,
    pub clear_peaks: PeakList,
    pub splitters: Vec<Splitter>,
    pub segments: Vec<Segment>,
    /// Whole-spectrum model before post-processing.
    pub aggregate: MixtureModel,
    /// Final model.
    pub model: MixtureModel,
    pub diagnostics: Diagnostics,
}

fn em_config(config: &PipelineConfig, avg_cv: f64) -> EmConfig {
    EmConfig {
        alpha_min: config.alpha_min,
        sigma_min_cv_mult: config.sigma_min_mult,
        max_iters: config.max_iters,
        rel_tol: config.rel_tol,
        avg_cv,
    }
}

/// Default smoothing half-width: max(3 grid steps, a quarter of the
/// expected FWHH at the spectrum centre).
pub fn default_smoothing_halfwidth(spectrum: &Spectrum, expected_cv: f64) -> f64 {
    let (lo, hi) = spectrum.span();
    let mean_step = (hi - lo) / (spectrum.len() - 1) as f64;
    let center = 0.5 * (lo + hi);
    (3.0 * mean_step).max(0.25 * expected_cv * center)
}

/// Baseline stage: estimate and subtract, or pass through when disabled.
pub fn stage_baseline(input: &Spectrum, config: &PipelineConfig) -> Result<Spectrum> {
    if !config.baseline_enabled {
        return Ok(input.clone());
    }
    let estimate = estimate_baseline(input, config.baseline_window, config.baseline_quantile)
        .map_err(|e| e.in_stage("baseline"))?;
    correct_baseline(input, &estimate).map_err(|e| e.in_stage("baseline"))
}

/// Detection stage: peaks with widths and quality scores, plus the average
/// FWHH-over-position ratio. An empty detection falls back to the
/// configured expected CV so downstream sizing still works.
pub fn stage_detect(corrected: &Spectrum, config: &PipelineConfig) -> Result<(PeakList, f64)> {
    let halfwidth = config
        .smoothing_halfwidth
        .unwrap_or_else(|| default_smoothing_halfwidth(corrected, config.expected_cv));
    let raw = detect_peaks(corrected, halfwidth, config.min_snr);
    if raw.is_empty() {
        return Ok((raw, config.expected_cv));
    }
    let avg_cv = average_cv(&raw).map_err(|e| e.in_stage("peak detection"))?;
    let scored = score_peaks(corrected, &raw, config.quality_search_mult, avg_cv)
        .map_err(|e| e.in_stage("peak detection"))?;
    Ok((scored, avg_cv))
}

/// Partition stage output: splitters with their fit diagnostics, anchors
/// that failed splitter extraction, the residual, and the plain segments.
#[derive(Debug, Clone)]
pub struct PartitionStage {
    pub avg_cv: f64,
    pub clear_peaks: PeakList,
    pub splitters: Vec<Splitter>,
    pub splitter_diagnostics: Vec<SegmentDiagnostic>,
    pub rejected_anchors: Vec<f64>,
    pub residual: Spectrum,
    pub segments: Vec<Segment>,
}

/// Order range tried for a splitter-segment: narrow fragments only need a
/// handful of components.
fn splitter_k_range(segment: &Segment, avg_cv: f64) -> std::ops::RangeInclusive<usize> {
    let expected_fwhh = avg_cv * segment.center_mz();
    let k_hi = if expected_fwhh > 0.0 {
        ((segment.width_da() / (2.0 * expected_fwhh)).ceil() as usize + 1).max(3)
    } else {
        3
    };
    1..=k_hi
}

/// Pick clear peaks, fit warped splitter-segments, extract splitters,
/// subtract them and partition the residual. Anchors whose splitter is
/// rejected are dropped and excluded from the partition (the single retry
/// pass: partitioning happens once, over the surviving splitters).
pub fn stage_partition(
    corrected: &Spectrum,
    detected: &PeakList,
    avg_cv: f64,
    config: &PipelineConfig,
) -> Result<PartitionStage> {
    let clear_peaks = pick_clear_peaks(
        detected,
        config.min_quality,
        config.min_gap,
        config.max_gap,
        avg_cv,
    );
    let em = em_config(config, avg_cv);
    let mut splitters = Vec::new();
    let mut splitter_diagnostics = Vec::new();
    let mut rejected_anchors = Vec::new();
    for peak in clear_peaks.peaks() {
        let anchor = peak.position;
        let segment = extract_splitter_segment(corrected, anchor, avg_cv, config.margin_mult)
            .map_err(|e| e.in_stage("splitter segment"))?;
        let taper = config.taper_mult * (avg_cv / FWHH_PER_SIGMA) * anchor;
        let warped = warp_down(&segment, taper);
        let fit = match select_model(&warped, splitter_k_range(&warped, avg_cv), config.epsilon, &em)
        {
            Ok(fit) => fit,
            Err(Error::Degenerate(_)) => {
                rejected_anchors.push(anchor);
                continue;
            }
            Err(e) => return Err(e.in_stage(&format!("splitter fit at {anchor}"))),
        };
        match extract_splitter(&fit.model, anchor, warped.real_range()) {
            Ok(splitter) => {
                splitter_diagnostics.push(SegmentDiagnostic::from_fit(&warped, &fit));
                splitters.push(splitter);
            }
            Err(Error::SplitterRejected { .. }) => rejected_anchors.push(anchor),
            Err(e) => return Err(e.in_stage(&format!("splitter extraction at {anchor}"))),
        }
    }
    let residual = subtract_splitters(corrected, &splitters);
    let segments = partition_segments(&residual, &splitters, config.floor_frac, config.alpha_min);
    Ok(PartitionStage {
        avg_cv,
        clear_peaks,
        splitters,
        splitter_diagnostics,
        rejected_anchors,
        residual,
        segments,
    })
}

/// Fit every plain segment and aggregate all components (splitter and
/// segment) into the whole-spectrum model.
pub fn stage_decompose(
    corrected: &Spectrum,
    splitters: &[Splitter],
    segments: &[Segment],
    avg_cv: f64,
    config: &PipelineConfig,
) -> Result<(MixtureModel, Vec<SegmentDiagnostic>)> {
    let em = em_config(config, avg_cv);
    let mut fits = Vec::new();
    let mut diagnostics = Vec::new();
    for segment in segments {
        let cap = if config.k_max_cap > 0 {
            config.k_max_cap
        } else {
            default_k_cap(segment.width_da(), segment.center_mz(), avg_cv)
        };
        let fit = select_model(segment, 1..=cap, config.epsilon, &em).map_err(|e| {
            e.in_stage(&format!(
                "segment fit [{}..{}]",
                segment.n_min(),
                segment.n_max()
            ))
        })?;
        diagnostics.push(SegmentDiagnostic::from_fit(segment, &fit));
        fits.push(fit);
    }
    if splitters.is_empty() && fits.is_empty() {
        return Err(Error::Degenerate("nothing to decompose: no signal".into()).in_stage("decompose"));
    }
    let model = aggregate(splitters, &fits, corrected).map_err(|e| e.in_stage("aggregate"))?;
    Ok((model, diagnostics))
}

/// Noise-component filtering and duplicate merging per config.
pub fn stage_postprocess(
    aggregate_model: &MixtureModel,
    config: &PipelineConfig,
) -> Result<(MixtureModel, bool, usize, Vec<String>)> {
    let mut model = aggregate_model.clone();
    let mut warnings = Vec::new();
    let mut filter_applied = false;
    let mut filter_removed = 0;
    if config.postprocess_enabled && config.filter_enabled {
        let (filtered, status) = filter_noise_components(&model)?;
        model = filtered;
        match status {
            FilterStatus::Applied { removed } => {
                filter_applied = true;
                filter_removed = removed;
            }
            FilterStatus::PassThrough { reason } => {
                warnings.push(format!("noise filter passed through: {reason}"));
            }
        }
    }
    if config.postprocess_enabled && config.merge_enabled {
        let policy = MergePolicy {
            mz_thr: config.mz_thr,
            sigma_thr: config.sigma_thr,
        };
        model = merge_components(&model, &policy)?;
    }
    Ok((model, filter_applied, filter_removed, warnings))
}

/// Scaled absolute error of a model against a spectrum over the full grid.
pub fn whole_spectrum_delta(spectrum: &Spectrum, model: &MixtureModel) -> f64 {
    let rendered = model
        .render_scaled(spectrum.mz(), 0..spectrum.len())
        .expect("full range is never empty");
    let tic = spectrum.total_ion_current();
    if tic <= 0.0 {
        return 0.0;
    }
    spectrum
        .intensity()
        .iter()
        .zip(&rendered)
        .map(|(y, r)| (y - r).abs())
        .sum::<f64>()
        / tic
}

/// Run the whole chain on a spectrum.
pub fn run_pipeline(input: &Spectrum, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let corrected = stage_baseline(input, config)?;
    let (detected, avg_cv) = stage_detect(&corrected, config)?;
    let partition = stage_partition(&corrected, &detected, avg_cv, config)?;
    let (aggregate_model, segment_diagnostics) = stage_decompose(
        &corrected,
        &partition.splitters,
        &partition.segments,
        avg_cv,
        config,
    )?;
    let (model, filter_applied, filter_removed, warnings) =
        stage_postprocess(&aggregate_model, config)?;

    let mut segments_diag = partition.splitter_diagnostics.clone();
    segments_diag.extend(segment_diagnostics);
    let diagnostics = Diagnostics {
        avg_cv,
        n_peaks: detected.len(),
        n_clear_peaks: partition.clear_peaks.len(),
        rejected_anchors: partition.rejected_anchors.clone(),
        segments: segments_diag,
        aggregate_k: aggregate_model.k(),
        final_k: model.k(),
        delta_aggregate: whole_spectrum_delta(&corrected, &aggregate_model),
        delta_final: whole_spectrum_delta(&corrected, &model),
        filter_applied,
        filter_removed,
        warnings,
    };
    Ok(PipelineOutput {
        corrected,
        detected,
        clear_peaks: partition.clear_peaks,
        splitters: partition.splitters,
        segments: partition.segments,
        aggregate: aggregate_model,
        model,
        diagnostics,
    })
}

/// Manifest emitted by the `partition` subcommand and consumed by
/// `decompose`, carrying everything the segment-fitting stage needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub avg_cv: f64,
    pub splitters: Vec<Splitter>,
    pub segments: Vec<SegmentRange>,
    pub rejected_anchors: Vec<f64>,
    /// Path of the residual spectrum CSV, relative to the manifest.
    pub residual_csv: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRange {
    pub n_min: usize,
    pub n_max: usize,
}

impl PartitionManifest {
    pub fn from_stage(stage: &PartitionStage, residual_csv: impl Into<String>) -> Self {
        PartitionManifest {
            avg_cv: stage.avg_cv,
            splitters: stage.splitters.clone(),
            segments: stage
                .segments
                .iter()
                .map(|s| SegmentRange {
                    n_min: s.n_min(),
                    n_max: s.n_max(),
                })
                .collect(),
            rejected_anchors: stage.rejected_anchors.clone(),
            residual_csv: residual_csv.into(),
        }
    }

    /// Rebuild the plain segments from the residual spectrum.
    pub fn segments_on(&self, residual: &Spectrum) -> Result<Vec<Segment>> {
        self.segments
            .iter()
            .map(|r| Segment::from_spectrum(residual, r.n_min, r.n_max, SegmentKind::Plain, None))
            .collect()
    }
}

/// Evaluation summary serialized by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationBundle {
    pub rel_tol: f64,
    pub report: EvalReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gaussian_pdf;

    fn fixture_spectrum(comps: &[(f64, f64, f64)], lo: f64, hi: f64, step: f64) -> Spectrum {
        let n = ((hi - lo) / step).round() as usize + 1;
        let mz: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
        let y: Vec<f64> = mz
            .iter()
            .map(|&x| {
                comps
                    .iter()
                    .map(|&(w, mu, s)| w * gaussian_pdf(x, mu, s))
                    .sum()
            })
            .collect();
        Spectrum::new(mz, y).unwrap()
    }

    fn no_baseline_config() -> PipelineConfig {
        PipelineConfig {
            baseline_enabled: false,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn pipeline_decomposes_well_separated_peaks() {
        // Five clean Gaussians with the configured CV shape.
        let comps: Vec<(f64, f64, f64)> = (0..5)
            .map(|i| {
                let mu = 3000.0 + 400.0 * i as f64;
                (2000.0, mu, 0.002 * mu / FWHH_PER_SIGMA)
            })
            .collect();
        let s = fixture_spectrum(&comps, 2800.0, 4800.0, 0.8);
        let out = run_pipeline(&s, &no_baseline_config()).unwrap();
        assert_eq!(out.model.k(), 5, "diagnostics: {:?}", out.diagnostics);
        for (found, (_, mu, _)) in out.model.components().iter().zip(&comps) {
            assert!(
                (found.mu - mu).abs() / mu < 0.003,
                "component at {} vs {mu}",
                found.mu
            );
        }
        assert!(out.diagnostics.delta_final < 0.05);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let comps = [(1500.0, 3100.0, 2.6), (900.0, 3400.0, 2.9)];
        let s = fixture_spectrum(&comps, 3000.0, 3500.0, 0.8);
        let config = no_baseline_config();
        let a = run_pipeline(&s, &config).unwrap();
        let b = run_pipeline(&s, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&a.model).unwrap(),
            serde_json::to_string(&b.model).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&a.diagnostics).unwrap(),
            serde_json::to_string(&b.diagnostics).unwrap()
        );
    }

    #[test]
    fn disabling_postprocess_never_shrinks_k() {
        let comps = [
            (1500.0, 3100.0, 2.6),
            (900.0, 3400.0, 2.9),
            (1200.0, 3700.0, 3.1),
        ];
        let s = fixture_spectrum(&comps, 3000.0, 3800.0, 0.8);
        let with = run_pipeline(&s, &no_baseline_config()).unwrap();
        let without = run_pipeline(
            &s,
            &PipelineConfig {
                postprocess_enabled: false,
                ..no_baseline_config()
            },
        )
        .unwrap();
        assert!(without.model.k() >= with.model.k());
        assert_eq!(without.model, without.aggregate);
    }

    #[test]
    fn staged_run_matches_run_pipeline() {
        let comps = [(1500.0, 3100.0, 2.6), (900.0, 3420.0, 2.9)];
        let s = fixture_spectrum(&comps, 3000.0, 3520.0, 0.8);
        let config = no_baseline_config();
        let whole = run_pipeline(&s, &config).unwrap();

        let corrected = stage_baseline(&s, &config).unwrap();
        let (detected, avg_cv) = stage_detect(&corrected, &config).unwrap();
        let part = stage_partition(&corrected, &detected, avg_cv, &config).unwrap();
        let (agg, _) =
            stage_decompose(&corrected, &part.splitters, &part.segments, avg_cv, &config).unwrap();
        let (model, _, _, _) = stage_postprocess(&agg, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&whole.model).unwrap(),
            serde_json::to_string(&model).unwrap()
        );
    }

    #[test]
    fn mass_is_conserved_on_clean_fixture() {
        let comps: Vec<(f64, f64, f64)> = (0..4)
            .map(|i| {
                let mu = 3000.0 + 300.0 * i as f64;
                (2500.0, mu, 0.002 * mu / FWHH_PER_SIGMA)
            })
            .collect();
        let s = fixture_spectrum(&comps, 2850.0, 4100.0, 0.8);
        let out = run_pipeline(&s, &no_baseline_config()).unwrap();
        // Rendering all splitters plus segment models reproduces the signal
        // mass; the aggregate delta bounds it.
        assert!(
            out.diagnostics.delta_aggregate < 0.05,
            "delta {}",
            out.diagnostics.delta_aggregate
        );
    }
}
