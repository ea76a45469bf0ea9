//! Synthetic-spectrum generator with full ground truth.
//!
//! Datasets are built in two stages. First a component catalog is sampled:
//! each component has a mass (uniform over the grid range), a prevalence
//! (Beta(1, 0.2)), and an abundance (100 counts plus a log-normal with
//! log-scale parameters mean 5, variance 1). Then each sample realizes the
//! catalog: a Bernoulli trial per component decides presence, the intensity
//! is log-normal with natural-scale mean equal to the abundance and
//! variance 1.45 * sqrt(abundance), and the position is jittered normally
//! with sigma = 0.001 * mass. Realized components render as Gaussians whose
//! FWHH is a fixed fraction (the peak-shape CV) of their position, on top
//! of a two-exponential baseline and ARMA(1, 6) noise, clamped at zero.
//!
//! All randomness flows from one seed: the catalog uses stream 0 of a
//! counter-mode generator and sample m uses stream m + 1, so samples are
//! independent and the whole dataset is reproducible bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{gaussian_pdf, FWHH_PER_SIGMA};
use crate::spectrum::{Spectrum, SpectrumSet};

/// A catalog entry: one protein/peptide species of the simulated population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueComponent {
    /// Species mass in Da.
    pub mass: f64,
    /// Fraction of samples containing the species, in (0, 1].
    pub prevalence: f64,
    /// Mean peak intensity across samples that contain the species.
    pub abundance: f64,
}

/// One realized peak of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizedPeak {
    /// Index into the catalog.
    pub component: usize,
    /// Jittered position in Da.
    pub position: f64,
    /// Drawn intensity (peak area) in counts * Da.
    pub intensity: f64,
}

/// Parameters of the two-exponential baseline
/// y_B(x) = b1 * exp(-x / b2) - b3 * exp(-x / b4).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            b1: 100.0,
            b2: 3000.0,
            b3: 80.0,
            b4: 500.0,
        }
    }
}

/// Baseline value at m/z `x`.
pub fn baseline_value(params: &BaselineParams, x: f64) -> f64 {
    params.b1 * (-x / params.b2).exp() - params.b3 * (-x / params.b4).exp()
}

/// ARMA noise settings: one AR term and six MA terms by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub innovation_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            enabled: true,
            ar: vec![0.3],
            ma: vec![0.4, 0.3, 0.2, 0.1, 0.05, 0.02],
            innovation_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBaselineConfig {
    pub enabled: bool,
    pub params: BaselineParams,
}

impl Default for SimBaselineConfig {
    fn default() -> Self {
        SimBaselineConfig {
            enabled: true,
            params: BaselineParams::default(),
        }
    }
}

/// Full simulator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_components: usize,
    /// Number of samples M.
    pub n_samples: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub seed: u64,
    /// Peak-shape coefficient of variation: FWHH = cv * position.
    pub peak_cv: f64,
    pub noise: NoiseConfig,
    pub baseline: SimBaselineConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_components: 100,
            n_samples: 100,
            grid_min: 2000.0,
            grid_max: 10000.0,
            grid_points: 10_000,
            seed: 42,
            peak_cv: 0.002,
            noise: NoiseConfig::default(),
            baseline: SimBaselineConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::Config("n_components must be >= 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be >= 1".into()));
        }
        if !(self.grid_max > self.grid_min) || self.grid_points < 2 {
            return Err(Error::Config("grid must be increasing with >= 2 points".into()));
        }
        if !(self.peak_cv > 0.0) {
            return Err(Error::Config("peak_cv must be positive".into()));
        }
        if self.noise.innovation_std < 0.0 {
            return Err(Error::Config("innovation_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = self.grid_points;
        (0..n)
            .map(|i| {
                self.grid_min + (self.grid_max - self.grid_min) * i as f64 / (n - 1) as f64
            })
            .collect()
    }

    /// Generator for the catalog (stream 0) or sample m (stream m + 1).
    fn rng_for_stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Catalog plus every sample's realized peaks: the ground truth emitted
/// next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub catalog: Vec<TrueComponent>,
    pub samples: Vec<Vec<RealizedPeak>>,
}

impl TruthManifest {
    /// Catalog masses, the positions detections are matched against.
    pub fn true_positions(&self) -> Vec<f64> {
        self.catalog.iter().map(|c| c.mass).collect()
    }
}

/// Draw the component catalog.
pub fn sample_catalog<R: Rng>(config: &SimConfig, rng: &mut R) -> Vec<TrueComponent> {
    let prevalence_dist = Beta::new(1.0f64, 0.2).expect("valid beta parameters");
    let abundance_dist = LogNormal::new(5.0f64, 1.0).expect("valid log-normal parameters");
    (0..config.n_components)
        .map(|_| TrueComponent {
            mass: rng.random_range(config.grid_min..config.grid_max),
            prevalence: prevalence_dist.sample(rng).clamp(f64::MIN_POSITIVE, 1.0),
            abundance: 100.0 + abundance_dist.sample(rng),
        })
        .collect()
}

/// Log-normal with the given natural-scale mean and variance.
fn lognormal_from_moments(mean: f64, var: f64) -> LogNormal<f64> {
    let sigma2 = (1.0 + var / (mean * mean)).ln();
    LogNormal::new(mean.ln() - sigma2 / 2.0, sigma2.sqrt()).expect("valid moments")
}

/// ARMA(p, q) noise: x_t = sum_i ar_i x_{t-i} + e_t + sum_j ma_j e_{t-j}
/// with Gaussian innovations. A short burn-in is discarded so the output
/// starts near stationarity. Zero innovation std yields exactly zero.
pub fn arma_noise<R: Rng>(
    len: usize,
    ar: &[f64],
    ma: &[f64],
    innovation_std: f64,
    rng: &mut R,
) -> Vec<f64> {
    if innovation_std == 0.0 {
        return vec![0.0; len];
    }
    let normal = Normal::new(0.0, innovation_std).expect("valid std");
    let burn = 100 + ar.len() + ma.len();
    let mut history_x = vec![0.0; ar.len().max(1)];
    let mut history_e = vec![0.0; ma.len().max(1)];
    let mut out = Vec::with_capacity(len);
    for t in 0..burn + len {
        let e = normal.sample(rng);
        let mut x = e;
        for (i, &a) in ar.iter().enumerate() {
            x += a * history_x[i];
        }
        for (j, &b) in ma.iter().enumerate() {
            x += b * history_e[j];
        }
        if !history_x.is_empty() {
            history_x.rotate_right(1);
            history_x[0] = x;
        }
        if !history_e.is_empty() {
            history_e.rotate_right(1);
            history_e[0] = e;
        }
        if t >= burn {
            out.push(x);
        }
    }
    out
}

/// Span (in sigmas) past which rendered peaks are truncated.
const PEAK_RENDER_SPAN: f64 = 10.0;

/// Realize one sample of the catalog: presence, intensity and position per
/// component, rendered onto the grid with baseline and noise per config.
pub fn realize_sample<R: Rng>(
    catalog: &[TrueComponent],
    config: &SimConfig,
    rng: &mut R,
) -> (Spectrum, Vec<RealizedPeak>) {
    let mz = config.grid();
    let mut y = vec![0.0; mz.len()];
    let mut realized = Vec::new();
    for (idx, comp) in catalog.iter().enumerate() {
        if rng.random::<f64>() >= comp.prevalence {
            continue;
        }
        let pe = comp.abundance;
        let intensity = lognormal_from_moments(pe, 1.45 * pe.sqrt()).sample(rng);
        let position = Normal::new(comp.mass, 0.001 * comp.mass)
            .expect("valid sigma")
            .sample(rng);
        realized.push(RealizedPeak {
            component: idx,
            position,
            intensity,
        });
        let sigma = config.peak_cv * position / FWHH_PER_SIGMA;
        let lo = mz.partition_point(|&x| x < position - PEAK_RENDER_SPAN * sigma);
        let hi = mz.partition_point(|&x| x <= position + PEAK_RENDER_SPAN * sigma);
        for (v, &x) in y[lo..hi].iter_mut().zip(&mz[lo..hi]) {
            *v += intensity * gaussian_pdf(x, position, sigma);
        }
    }
    if config.baseline.enabled {
        for (v, &x) in y.iter_mut().zip(&mz) {
            *v += baseline_value(&config.baseline.params, x);
        }
    }
    if config.noise.enabled {
        let noise = arma_noise(
            mz.len(),
            &config.noise.ar,
            &config.noise.ma,
            config.noise.innovation_std,
            rng,
        );
        for (v, e) in y.iter_mut().zip(noise) {
            *v += e;
        }
    }
    for v in &mut y {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let spectrum = Spectrum::new(mz, y).expect("generated spectrum is valid");
    (spectrum, realized)
}

/// Generate a full dataset: M samples over the shared grid plus the truth
/// manifest. Deterministic given the config (including the seed).
pub fn generate_dataset(config: &SimConfig) -> Result<(SpectrumSet, TruthManifest)> {
    config.validate()?;
    let mut catalog_rng = config.rng_for_stream(0);
    let catalog = sample_catalog(config, &mut catalog_rng);
    let mut spectra = Vec::with_capacity(config.n_samples);
    let mut samples = Vec::with_capacity(config.n_samples);
    for m in 0..config.n_samples {
        let mut rng = config.rng_for_stream(m as u64 + 1);
        let (spectrum, realized) = realize_sample(&catalog, config, &mut rng);
        spectra.push(spectrum);
        samples.push(realized);
    }
    let set = SpectrumSet::from_spectra(spectra)?;
    Ok((set, TruthManifest { catalog, samples }))
}
