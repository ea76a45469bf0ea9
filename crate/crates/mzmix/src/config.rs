//! Pipeline configuration: every tunable of the stages, loadable from a
//! flat key/value file with strict (unknown keys rejected) parsing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All tunables of the decomposition pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Estimate and subtract the baseline before anything else.
    pub baseline_enabled: bool,
    /// Baseline estimation window in Da.
    pub baseline_window: f64,
    /// Quantile of the sliding window used as the baseline level.
    pub baseline_quantile: f64,
    /// Prior peak-shape coefficient of variation (FWHH / position), used
    /// only for the default smoothing width before peaks are measured.
    pub expected_cv: f64,
    /// Smoothing half-width in Da for peak detection. `None` selects
    /// max(3 grid steps, 0.25 * expected FWHH at the spectrum centre).
    pub smoothing_halfwidth: Option<f64>,
    /// Minimum peak height in robust noise-scale units.
    pub min_snr: f64,
    /// Quality threshold for clear peaks.
    pub min_quality: f64,
    /// Minimum spacing of clear peaks in local expected FWHHs.
    pub min_gap: f64,
    /// Gap length (in local expected FWHHs) past which lower-quality peaks
    /// are accepted to bound the gap.
    pub max_gap: f64,
    /// Quality valley search half-width in local expected sigmas.
    pub quality_search_mult: f64,
    /// Splitter-segment margin in local expected FWHHs on each side.
    pub margin_mult: f64,
    /// Warp-down taper width in local expected sigmas.
    pub taper_mult: f64,
    /// Segments are trimmed below this fraction of their maximum.
    pub floor_frac: f64,
    /// Per-component penalty of the model-order index.
    pub epsilon: f64,
    /// Minimum mixing proportion before a component is removed.
    pub alpha_min: f64,
    /// Multiplier of the mass-proportional sigma floor.
    pub sigma_min_mult: f64,
    /// EM iteration cap per fit.
    pub max_iters: usize,
    /// Relative convergence tolerance of the EM objective.
    pub rel_tol: f64,
    /// Hard cap on the component count tried per segment; 0 derives the
    /// cap from the segment width.
    pub k_max_cap: usize,
    /// Mean-merging threshold in units of the larger sigma.
    pub mz_thr: f64,
    /// Relative sigma agreement required for a merge.
    pub sigma_thr: f64,
    pub filter_enabled: bool,
    pub merge_enabled: bool,
    pub postprocess_enabled: bool,
    /// Seed for anything stochastic launched from this config.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            baseline_enabled: true,
            baseline_window: 200.0,
            baseline_quantile: 0.10,
            expected_cv: 0.002,
            smoothing_halfwidth: None,
            min_snr: 3.0,
            min_quality: 2.0,
            min_gap: 5.0,
            max_gap: 50.0,
            quality_search_mult: 20.0,
            margin_mult: 6.0,
            taper_mult: 3.0,
            floor_frac: 0.01,
            epsilon: 0.002,
            alpha_min: 1e-3,
            sigma_min_mult: 0.5,
            max_iters: 500,
            rel_tol: 1e-6,
            k_max_cap: 0,
            mz_thr: 0.3,
            sigma_thr: 0.05,
            filter_enabled: true,
            merge_enabled: true,
            postprocess_enabled: true,
            seed: 42,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.baseline_window > 0.0) {
            return Err(Error::Config("baseline_window must be positive".into()));
        }
        if !(self.baseline_quantile > 0.0 && self.baseline_quantile <= 0.5) {
            return Err(Error::Config("baseline_quantile must lie in (0, 0.5]".into()));
        }
        if !(self.expected_cv > 0.0) {
            return Err(Error::Config("expected_cv must be positive".into()));
        }
        if let Some(hw) = self.smoothing_halfwidth {
            if !(hw > 0.0) {
                return Err(Error::Config("smoothing_halfwidth must be positive".into()));
            }
        }
        if self.min_snr < 0.0 {
            return Err(Error::Config("min_snr must be >= 0".into()));
        }
        if !(self.min_quality >= 1.0) {
            return Err(Error::Config("min_quality must be >= 1".into()));
        }
        if !(self.min_gap >= 0.0 && self.max_gap > self.min_gap) {
            return Err(Error::Config("need 0 <= min_gap < max_gap".into()));
        }
        if !(self.margin_mult > 0.0) || !(self.taper_mult >= 0.0) {
            return Err(Error::Config("margin_mult / taper_mult out of range".into()));
        }
        if !(self.floor_frac >= 0.0 && self.floor_frac < 1.0) {
            return Err(Error::Config("floor_frac must lie in [0, 1)".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be >= 0".into()));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min < 0.1) {
            return Err(Error::Config("alpha_min must lie in (0, 0.1)".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if self.mz_thr < 0.0 || self.sigma_thr < 0.0 {
            return Err(Error::Config("merge thresholds must be >= 0".into()));
        }
        Ok(())
    }

    /// Parse a flat `key = value` file (one pair per line, `#` comments).
    /// Unknown keys are rejected.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut config = PipelineConfig::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.as_ref().display(),
                    line_no + 1
                )));
            };
            config.set_key(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Set one field from its textual form. `smoothing_halfwidth` accepts
    /// `auto` for the derived default.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn f64_of(key: &str, value: &str) -> Result<f64> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: not a number: `{value}`")))
        }
        fn usize_of(key: &str, value: &str) -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: not a count: `{value}`")))
        }
        fn bool_of(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("{key}: not a bool: `{value}`"))),
            }
        }
        match key {
            "baseline_enabled" => self.baseline_enabled = bool_of(key, value)?,
            "baseline_window" => self.baseline_window = f64_of(key, value)?,
            "baseline_quantile" => self.baseline_quantile = f64_of(key, value)?,
            "expected_cv" => self.expected_cv = f64_of(key, value)?,
            "smoothing_halfwidth" => {
                self.smoothing_halfwidth = if value == "auto" {
                    None
                } else {
                    Some(f64_of(key, value)?)
                }
            }
            "min_snr" => self.min_snr = f64_of(key, value)?,
            "min_quality" => self.min_quality = f64_of(key, value)?,
            "min_gap" => self.min_gap = f64_of(key, value)?,
            "max_gap" => self.max_gap = f64_of(key, value)?,
            "quality_search_mult" => self.quality_search_mult = f64_of(key, value)?,
            "margin_mult" => self.margin_mult = f64_of(key, value)?,
            "taper_mult" => self.taper_mult = f64_of(key, value)?,
            "floor_frac" => self.floor_frac = f64_of(key, value)?,
            "epsilon" => self.epsilon = f64_of(key, value)?,
            "alpha_min" => self.alpha_min = f64_of(key, value)?,
            "sigma_min_mult" => self.sigma_min_mult = f64_of(key, value)?,
            "max_iters" => self.max_iters = usize_of(key, value)?,
            "rel_tol" => self.rel_tol = f64_of(key, value)?,
            "k_max_cap" => self.k_max_cap = usize_of(key, value)?,
            "mz_thr" => self.mz_thr = f64_of(key, value)?,
            "sigma_thr" => self.sigma_thr = f64_of(key, value)?,
            "filter_enabled" => self.filter_enabled = bool_of(key, value)?,
            "merge_enabled" => self.merge_enabled = bool_of(key, value)?,
            "postprocess_enabled" => self.postprocess_enabled = bool_of(key, value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: not an integer: `{value}`")))?
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn file_round_trip_with_overrides() {
        let dir = std::env::temp_dir().join("mzmix-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pipeline.conf");
        std::fs::write(
            &path,
            "# tuning\nmz_thr = 0.2\nmax_iters = 123\nsmoothing_halfwidth = auto\nfilter_enabled = false\n",
        )
        .unwrap();
        let config = PipelineConfig::from_file(&path).unwrap();
        assert_eq!(config.mz_thr, 0.2);
        assert_eq!(config.max_iters, 123);
        assert_eq!(config.smoothing_halfwidth, None);
        assert!(!config.filter_enabled);
        // Untouched keys keep their defaults.
        assert_eq!(config.epsilon, PipelineConfig::default().epsilon);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = std::env::temp_dir().join("mzmix-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.conf");
        std::fs::write(&path, "no_such_knob = 1\n").unwrap();
        assert!(matches!(
            PipelineConfig::from_file(&path),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        let config = PipelineConfig {
            baseline_quantile: 0.9,
            ..PipelineConfig::default()
        };
        assert!(config.validate().is_err());
        let config = PipelineConfig {
            alpha_min: 0.5,
            ..PipelineConfig::default()
        };
        assert!(config.validate().is_err());
    }
}
