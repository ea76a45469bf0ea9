//! Matching detected peaks to ground truth within a relative tolerance and
//! the FDR / sensitivity / F1 performance indexes, plus parameter sweeps.

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pipeline::run_pipeline;
use crate::spectrum::Spectrum;

/// Detection-quality metrics of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_true: usize,
    pub n_detected: usize,
    pub n_matched_true: usize,
    pub n_false: usize,
    /// False discovery rate: false detections over all detections
    /// (zero when nothing was detected).
    pub fdr: f64,
    /// Sensitivity: matched truths over all truths.
    pub sensitivity: f64,
    /// Harmonic mean of (1 - FDR) and sensitivity.
    pub f1: f64,
}

/// One-to-one assignment between detected positions and true positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// (detected index, truth index) pairs.
    pub pairs: Vec<(usize, usize)>,
    pub n_detected: usize,
    pub n_true: usize,
}

/// Match detections to truths: a pair is admissible when
/// |d - t| <= rel_tol * t, and pairs are assigned greedily by ascending
/// relative distance, each side used at most once.
pub fn match_peaks(detected: &[f64], truth: &[f64], rel_tol: f64) -> Matching {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (j, &t) in truth.iter().enumerate() {
        let tol = rel_tol * t;
        for (i, &d) in detected.iter().enumerate() {
            if (d - t).abs() <= tol {
                candidates.push(((d - t).abs() / t, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.2.cmp(&b.2))
            .then(a.1.cmp(&b.1))
    });
    let mut det_used = vec![false; detected.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !det_used[i] && !truth_used[j] {
            det_used[i] = true;
            truth_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    Matching {
        pairs,
        n_detected: detected.len(),
        n_true: truth.len(),
    }
}

/// FDR, sensitivity and F1 from a matching.
pub fn compute_metrics(matching: &Matching) -> Result<EvalReport> {
    if matching.n_true == 0 {
        return Err(Error::Data("no ground truth to evaluate against".into()));
    }
    let n_matched = matching.pairs.len();
    let n_false = matching.n_detected - n_matched;
    let fdr = if matching.n_detected == 0 {
        0.0
    } else {
        n_false as f64 / matching.n_detected as f64
    };
    let sensitivity = n_matched as f64 / matching.n_true as f64;
    let precision = 1.0 - fdr;
    let f1 = if precision + sensitivity == 0.0 {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    Ok(EvalReport {
        n_true: matching.n_true,
        n_detected: matching.n_detected,
        n_matched_true: n_matched,
        n_false,
        fdr,
        sensitivity,
        f1,
    })
}

/// Convenience: match and score in one call.
pub fn evaluate_positions(detected: &[f64], truth: &[f64], rel_tol: f64) -> Result<EvalReport> {
    compute_metrics(&match_peaks(detected, truth, rel_tol))
}

/// Pipeline parameter a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    MzThr,
    SigmaThr,
    MinSnr,
    MinQuality,
    Epsilon,
}

impl SweepParam {
    pub fn apply(&self, config: &mut PipelineConfig, value: f64) {
        match self {
            SweepParam::MzThr => config.mz_thr = value,
            SweepParam::SigmaThr => config.sigma_thr = value,
            SweepParam::MinSnr => config.min_snr = value,
            SweepParam::MinQuality => config.min_quality = value,
            SweepParam::Epsilon => config.epsilon = value,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mz_thr" | "mz-thr" => Ok(SweepParam::MzThr),
            "sigma_thr" | "sigma-thr" => Ok(SweepParam::SigmaThr),
            "min_snr" | "min-snr" => Ok(SweepParam::MinSnr),
            "min_quality" | "min-quality" => Ok(SweepParam::MinQuality),
            "epsilon" => Ok(SweepParam::Epsilon),
            other => Err(Error::Config(format!("unknown sweep parameter {other}"))),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SweepParam::MzThr => "mz_thr",
            SweepParam::SigmaThr => "sigma_thr",
            SweepParam::MinSnr => "min_snr",
            SweepParam::MinQuality => "min_quality",
            SweepParam::Epsilon => "epsilon",
        };
        f.write_str(name)
    }
}

/// One grid point of a sweep. Failures are recorded, not propagated, so a
/// sweep always covers its whole grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Run the full decompose-and-detect pipeline per grid value on the given
/// (mean) spectrum and score the model's component means against the truth.
pub fn sweep_parameter(
    base: &PipelineConfig,
    param: SweepParam,
    values: &[f64],
    spectrum: &Spectrum,
    truth: &[f64],
    rel_tol: f64,
) -> Vec<SweepPoint> {
    values
        .iter()
        .map(|&value| {
            let mut config = base.clone();
            param.apply(&mut config, value);
            match run_pipeline(spectrum, &config) {
                Ok(out) => match evaluate_positions(&out.model.means(), truth, rel_tol) {
                    Ok(report) => SweepPoint {
                        value,
                        report: Some(report),
                        error: None,
                    },
                    Err(e) => SweepPoint {
                        value,
                        report: None,
                        error: Some(e.to_string()),
                    },
                },
                Err(e) => SweepPoint {
                    value,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Grid value with the highest F1 (first wins ties); None when every point
/// failed.
pub fn argmax_f1(points: &[SweepPoint]) -> Option<&SweepPoint> {
    let mut best: Option<&SweepPoint> = None;
    for p in points {
        let Some(report) = &p.report else { continue };
        let best_f1 = best.and_then(|b| b.report.as_ref()).map(|r| r.f1);
        if best_f1.is_none_or(|f| report.f1 > f) {
            best = Some(p);
        }
    }
    best
}
