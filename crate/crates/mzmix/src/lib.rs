//! Gaussian mixture decomposition of proteomic mass spectra.
//!
//! The library models a whole baseline-corrected spectrum as a scaled
//! Gaussian mixture. Fitting the mixture in one shot is impractical for
//! signals with hundreds of components, so the signal is first partitioned:
//! high-quality ("clear") peaks anchor narrow splitter-segments that are
//! fitted in isolation; the reliable core of each fit (the splitter) is
//! subtracted from the signal, and the remaining fragments (segments) are
//! fitted independently. All component sets are then aggregated into one
//! whole-spectrum model and post-processed (noise-component filtering and
//! merging of near-duplicates).
//!
//! The crate also ships a synthetic-spectrum simulator with full ground
//! truth and an FDR / sensitivity / F1 evaluation harness, so the
//! decomposition quality can be measured end to end.
//!
//! Entry points:
//! - [`pipeline::run_pipeline`] drives the whole chain on a spectrum.
//! - [`simulate::generate_dataset`] produces benchmark data with truth.
//! - [`evaluate::match_peaks`] / [`evaluate::compute_metrics`] score any
//!   detector's output against the truth.

// Validation uses `!(x > 0.0)` so that NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod em;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod model;
pub mod partition;
pub mod peaks;
pub mod pipeline;
pub mod plot;
pub mod postprocess;
pub mod preprocess;
pub mod simulate;
pub mod spectrum;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use model::{GaussianComponent, MixtureModel, FWHH_PER_SIGMA};
pub use spectrum::{BinWidths, Spectrum, SpectrumSet};
