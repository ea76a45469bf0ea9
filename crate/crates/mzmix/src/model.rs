//! Gaussian mixture models of spectral signals and the scaling identities
//! that convert between probability densities and ion counts.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::Spectrum;

/// sqrt(2*pi)
pub(crate) const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Full width at half height of a Gaussian divided by its standard
/// deviation: 2*sqrt(2*ln 2), commonly quoted as 2.355.
pub const FWHH_PER_SIGMA: f64 = 2.354_820_045_030_949_4;

/// Normal probability density.
#[inline]
pub fn gaussian_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * SQRT_2PI)
}

/// One Gaussian component of a mixture: mixing proportion, mean (Da) and
/// standard deviation (Da).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub alpha: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianComponent {
    pub fn new(alpha: f64, mu: f64, sigma: f64) -> Self {
        GaussianComponent { alpha, mu, sigma }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        gaussian_pdf(x, self.mu, self.sigma)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidModel(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidModel(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidModel("non-finite mean".into()));
        }
        Ok(())
    }
}

/// Sort components canonically: by mean ascending, ties broken by the
/// smaller standard deviation first.
pub fn sort_components(components: &mut [GaussianComponent]) {
    components.sort_by(|a, b| {
        a.mu.partial_cmp(&b.mu)
            .unwrap()
            .then(a.sigma.partial_cmp(&b.sigma).unwrap())
    });
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureModelRepr {
    scale: f64,
    tic: f64,
    components: Vec<GaussianComponent>,
}

/// A Gaussian mixture model of a spectral signal.
///
/// `components` are canonically sorted and their mixing proportions sum to 1.
/// `scale` is the local scale factor s (counts * Da) that converts the
/// probability density to counts; `tic` is the total ion current of the
/// signal the model was fitted to. Local weights w_k = s * alpha_k are
/// derived, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureModelRepr")]
pub struct MixtureModel {
    scale: f64,
    tic: f64,
    components: Vec<GaussianComponent>,
}

impl TryFrom<MixtureModelRepr> for MixtureModel {
    type Error = Error;

    fn try_from(repr: MixtureModelRepr) -> Result<Self> {
        MixtureModel::new(repr.components, repr.scale, repr.tic)
    }
}

/// Tolerance on the mixing-proportion normalization invariant.
pub const ALPHA_SUM_TOL: f64 = 1e-9;

impl MixtureModel {
    pub fn new(mut components: Vec<GaussianComponent>, scale: f64, tic: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidModel("model needs K >= 1 components".into()));
        }
        for c in &components {
            c.validate()?;
        }
        let total: f64 = components.iter().map(|c| c.alpha).sum();
        if (total - 1.0).abs() > ALPHA_SUM_TOL {
            return Err(Error::InvalidModel(format!(
                "mixing proportions sum to {total}, expected 1"
            )));
        }
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::InvalidModel(format!("bad scale {scale}")));
        }
        if !(tic >= 0.0) || !tic.is_finite() {
            return Err(Error::InvalidModel(format!("bad tic {tic}")));
        }
        sort_components(&mut components);
        Ok(MixtureModel {
            scale,
            tic,
            components,
        })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Number of components K.
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn tic(&self) -> f64 {
        self.tic
    }

    /// Local component weights w_k = s * alpha_k, in counts.
    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| self.scale * c.alpha).collect()
    }

    /// Component means, the model's peak positions.
    pub fn means(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.mu).collect()
    }

    /// Mixture probability density at `x`.
    pub fn density(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.alpha * c.pdf(x)).sum()
    }

    /// Locally scaled model signal over `range` of the grid:
    /// y_hat_n = sum_k w_k f_k(x_n).
    pub fn render_scaled(&self, mz: &[f64], range: Range<usize>) -> Result<Vec<f64>> {
        if range.is_empty() || range.end > mz.len() {
            return Err(Error::EmptyRange);
        }
        Ok(render_components(
            &mz[range],
            &self.components,
            self.scale,
        ))
    }

    /// Globally scaled model per bin: y_hat_n = tic * delta_n * f(x_n).
    /// Kept for completeness; the pipeline works with local scales.
    pub fn render_global(&self, spectrum: &Spectrum) -> Vec<f64> {
        let widths = spectrum.bin_widths();
        spectrum
            .mz()
            .iter()
            .zip(widths.delta())
            .map(|(&x, &d)| self.tic * d * self.density(x))
            .collect()
    }

    /// Local scale factor over `range` of the spectrum:
    /// s = sum_n y_n / sum_n sum_k alpha_k f_k(x_n).
    pub fn local_scale(&self, spectrum: &Spectrum, range: Range<usize>) -> Result<f64> {
        if range.is_empty() || range.end > spectrum.len() {
            return Err(Error::EmptyRange);
        }
        scale_over(
            &spectrum.mz()[range.clone()],
            &spectrum.intensity()[range],
            &self.components,
        )
    }

    /// Same model with a different scale factor.
    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        MixtureModel::new(self.components.clone(), scale, self.tic)
    }
}

/// Render `scale * sum_k alpha_k f_k` on a grid.
pub fn render_components(mz: &[f64], components: &[GaussianComponent], scale: f64) -> Vec<f64> {
    mz.iter()
        .map(|&x| {
            scale
                * components
                    .iter()
                    .map(|c| c.alpha * c.pdf(x))
                    .sum::<f64>()
        })
        .collect()
}

/// Scale factor from raw grid slices; shared by the EM kernel, which works
/// on segments before a full model exists.
pub fn scale_over(xs: &[f64], ys: &[f64], components: &[GaussianComponent]) -> Result<f64> {
    let numer: f64 = ys.iter().sum();
    let denom: f64 = xs
        .iter()
        .map(|&x| {
            components
                .iter()
                .map(|c| c.alpha * c.pdf(x))
                .sum::<f64>()
        })
        .sum();
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::Degenerate(
            "model carries no density mass over the range".into(),
        ));
    }
    Ok(numer / denom)
}
