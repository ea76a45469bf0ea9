//! Post-processing of the aggregated mixture: rejection of components that
//! model noise rather than peaks, and merging of near-duplicate components.

use crate::em::{dp_initialize_arrays, em_fit_arrays, EmConfig};
use crate::error::{Error, Result};
use crate::model::{GaussianComponent, MixtureModel};
use crate::partition::Splitter;
use crate::spectrum::Spectrum;

/// Thresholds for merging adjacent components. Means merge when their
/// distance is within `mz_thr` times the larger sigma; sigmas must agree
/// within `sigma_thr` relative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergePolicy {
    pub mz_thr: f64,
    pub sigma_thr: f64,
}

impl Default for MergePolicy {
    fn default() -> Self {
        MergePolicy {
            mz_thr: 0.3,
            sigma_thr: 0.05,
        }
    }
}

/// Combine all splitter components and segment fits into one whole-spectrum
/// model. Components enter with their count-scale weights w_k = s * alpha_k;
/// the aggregate's scale is the total weight, so the global mixing
/// proportions are w_k over that total.
pub fn aggregate(
    splitters: &[Splitter],
    segment_fits: &[crate::em::FitResult],
    spectrum: &Spectrum,
) -> Result<MixtureModel> {
    let mut weighted: Vec<(f64, f64, f64)> = Vec::new();
    for sp in splitters {
        for c in &sp.components {
            weighted.push((sp.scale * c.alpha, c.mu, c.sigma));
        }
    }
    for fit in segment_fits {
        let s = fit.model.scale();
        for c in fit.model.components() {
            weighted.push((s * c.alpha, c.mu, c.sigma));
        }
    }
    weighted.retain(|&(w, _, _)| w > 0.0);
    let total: f64 = weighted.iter().map(|&(w, _, _)| w).sum();
    if weighted.is_empty() || !(total > 0.0) {
        return Err(Error::Degenerate("no components to aggregate".into()));
    }
    let components: Vec<GaussianComponent> = weighted
        .into_iter()
        .map(|(w, mu, sigma)| GaussianComponent::new(w / total, mu, sigma))
        .collect();
    MixtureModel::new(components, total, spectrum.total_ion_current())
}

/// What the noise filter did.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterStatus {
    Applied { removed: usize },
    /// The two-class weight fit collapsed or could not be computed; the
    /// model passed through unchanged.
    PassThrough { reason: String },
}

/// Remove components whose weights belong to the lower class of a
/// two-component Gaussian mixture fitted to the log-weights, classified by
/// the maximum a posteriori rule. Models with fewer than four components
/// pass through, as does anything where the two classes collapse. The
/// largest-weight component is never removed.
pub fn filter_noise_components(model: &MixtureModel) -> Result<(MixtureModel, FilterStatus)> {
    if model.k() < 4 {
        return Ok((
            model.clone(),
            FilterStatus::PassThrough {
                reason: format!("only {} components", model.k()),
            },
        ));
    }
    // The scale multiplies every weight equally, so classifying log(alpha)
    // is the same as classifying log(w).
    let mut log_w: Vec<f64> = model.components().iter().map(|c| c.alpha.ln()).collect();

    // Unit-weight data for the EM kernel: sorted unique values with
    // multiplicities as counts.
    let mut sorted = log_w.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for v in sorted {
        if xs.last().is_some_and(|&last| last == v) {
            *ys.last_mut().unwrap() += 1.0;
        } else {
            xs.push(v);
            ys.push(1.0);
        }
    }

    let config = EmConfig {
        alpha_min: 1e-3,
        sigma_min_cv_mult: 0.0,
        max_iters: 300,
        rel_tol: 1e-9,
        avg_cv: 0.0,
    };
    let two_class = dp_initialize_arrays(&xs, &ys, 2, &config)
        .and_then(|init| em_fit_arrays(&xs, &ys, &init, &config));
    let fit = match two_class {
        Ok(fit) if fit.model.k() == 2 => fit,
        Ok(_) => {
            return Ok((
                model.clone(),
                FilterStatus::PassThrough {
                    reason: "weight classes collapsed to one".into(),
                },
            ))
        }
        Err(e) => {
            return Ok((
                model.clone(),
                FilterStatus::PassThrough {
                    reason: format!("weight fit failed: {e}"),
                },
            ))
        }
    };
    let lo = fit.model.components()[0];
    let hi = fit.model.components()[1];
    let pooled = (lo.alpha * lo.sigma * lo.sigma + hi.alpha * hi.sigma * hi.sigma).sqrt();
    if (hi.mu - lo.mu).abs() < 0.1 * pooled {
        return Ok((
            model.clone(),
            FilterStatus::PassThrough {
                reason: "weight classes collapsed".into(),
            },
        ));
    }

    let largest = model
        .components()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.alpha.partial_cmp(&b.1.alpha).unwrap())
        .map(|(i, _)| i)
        .unwrap();

    let mut kept: Vec<GaussianComponent> = Vec::new();
    let mut removed = 0;
    for (i, c) in model.components().iter().enumerate() {
        let x = log_w[i];
        let noise = lo.alpha * lo.pdf(x) > hi.alpha * hi.pdf(x);
        if noise && i != largest {
            removed += 1;
        } else {
            kept.push(*c);
        }
    }
    log_w.clear();

    let kept_alpha: f64 = kept.iter().map(|c| c.alpha).sum();
    let components: Vec<GaussianComponent> = kept
        .into_iter()
        .map(|c| GaussianComponent::new(c.alpha / kept_alpha, c.mu, c.sigma))
        .collect();
    // Rescale so the surviving w_k keep their count-scale values.
    let filtered = MixtureModel::new(components, model.scale() * kept_alpha, model.tic())?;
    Ok((filtered, FilterStatus::Applied { removed }))
}

/// Replace two components by the maximum-likelihood single Gaussian for
/// observations drawn from their two-component mixture: the weight adds,
/// and the first two moments are matched.
pub fn merge_pair(c1: &GaussianComponent, c2: &GaussianComponent) -> GaussianComponent {
    if c2.alpha == 0.0 {
        return *c1;
    }
    if c1.alpha == 0.0 {
        return *c2;
    }
    let alpha = c1.alpha + c2.alpha;
    let w1 = c1.alpha / alpha;
    let w2 = c2.alpha / alpha;
    let mu = w1 * c1.mu + w2 * c2.mu;
    let second = w1 * (c1.mu * c1.mu + c1.sigma * c1.sigma) + w2 * (c2.mu * c2.mu + c2.sigma * c2.sigma);
    let var = (second - mu * mu).max(0.0);
    GaussianComponent::new(alpha, mu, var.sqrt())
}

/// Single left-to-right pass over adjacent pairs of the (sorted) model,
/// merging wherever both thresholds pass; a merged component is
/// immediately re-tested against its next neighbour.
pub fn merge_components(model: &MixtureModel, policy: &MergePolicy) -> Result<MixtureModel> {
    let comps = model.components();
    let mut out: Vec<GaussianComponent> = vec![comps[0]];
    for next in &comps[1..] {
        let cur = out.last_mut().unwrap();
        let sigma_max = cur.sigma.max(next.sigma);
        let mergeable = (cur.mu - next.mu).abs() <= policy.mz_thr * sigma_max
            && (cur.sigma - next.sigma).abs() / sigma_max <= policy.sigma_thr;
        if mergeable {
            *cur = merge_pair(cur, next);
        } else {
            out.push(*next);
        }
    }
    MixtureModel::new(out, model.scale(), model.tic())
}
