//! Spectral signal containers: the m/z grid, ion counts, and bin widths.

use crate::error::{Error, Result};

/// A single mass spectrum: an m/z grid paired with nonnegative ion counts.
///
/// Immutable after construction. The grid is strictly increasing, both
/// arrays have the same length, and that length is at least 2 so bin
/// widths are always derivable.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    mz: Vec<f64>,
    intensity: Vec<f64>,
}

impl Spectrum {
    pub fn new(mz: Vec<f64>, intensity: Vec<f64>) -> Result<Self> {
        if mz.len() != intensity.len() {
            return Err(Error::InvalidSpectrum(format!(
                "mz length {} != intensity length {}",
                mz.len(),
                intensity.len()
            )));
        }
        if mz.len() < 2 {
            return Err(Error::InvalidSpectrum(format!(
                "need at least 2 points, got {}",
                mz.len()
            )));
        }
        for pair in mz.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(Error::InvalidSpectrum(format!(
                    "m/z grid not strictly increasing near {}",
                    pair[0]
                )));
            }
        }
        if mz.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpectrum("non-finite m/z value".into()));
        }
        for (n, &y) in intensity.iter().enumerate() {
            if !y.is_finite() || y < 0.0 {
                return Err(Error::InvalidSpectrum(format!(
                    "intensity[{n}] = {y} is negative or non-finite"
                )));
            }
        }
        Ok(Spectrum { mz, intensity })
    }

    pub fn len(&self) -> usize {
        self.mz.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees N >= 2
    }

    pub fn mz(&self) -> &[f64] {
        &self.mz
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    /// First and last m/z value of the grid.
    pub fn span(&self) -> (f64, f64) {
        (self.mz[0], *self.mz.last().unwrap())
    }

    /// Total ion current: the sum of all counts.
    pub fn total_ion_current(&self) -> f64 {
        self.intensity.iter().sum()
    }

    /// Index of the grid point closest to `x` (ties resolve to the lower index).
    pub fn nearest_index(&self, x: f64) -> usize {
        match self.mz.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.mz.len() => self.mz.len() - 1,
            Err(i) => {
                if x - self.mz[i - 1] <= self.mz[i] - x {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// Same grid, new counts.
    pub fn with_intensity(&self, intensity: Vec<f64>) -> Result<Self> {
        Spectrum::new(self.mz.clone(), intensity)
    }

    pub fn bin_widths(&self) -> BinWidths {
        let n = self.mz.len();
        let mut delta = Vec::with_capacity(n);
        delta.push(self.mz[1] - self.mz[0]);
        for i in 1..n - 1 {
            delta.push((self.mz[i + 1] - self.mz[i - 1]) / 2.0);
        }
        delta.push(self.mz[n - 1] - self.mz[n - 2]);
        BinWidths { delta }
    }
}

/// Widths of the intervals the counts were registered over, centered on the
/// grid points. Interior widths are half the distance between the two
/// neighbours; the boundary points use the one-sided neighbour difference.
#[derive(Debug, Clone, PartialEq)]
pub struct BinWidths {
    delta: Vec<f64>,
}

impl BinWidths {
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }
}

/// A set of spectra registered over one shared m/z grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSet {
    mz: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl SpectrumSet {
    pub fn new(mz: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidSpectrum("spectrum set needs M >= 1 rows".into()));
        }
        // Validate the grid and every row through the single-spectrum rules.
        for row in &rows {
            Spectrum::new(mz.clone(), row.clone())?;
        }
        Ok(SpectrumSet { mz, rows })
    }

    /// Build from already-validated spectra sharing one grid.
    pub fn from_spectra(spectra: Vec<Spectrum>) -> Result<Self> {
        let first = spectra
            .first()
            .ok_or_else(|| Error::InvalidSpectrum("spectrum set needs M >= 1 rows".into()))?;
        let mz = first.mz().to_vec();
        for s in &spectra {
            if s.mz() != mz.as_slice() {
                return Err(Error::InvalidSpectrum(
                    "spectra do not share one m/z grid".into(),
                ));
            }
        }
        let rows = spectra.into_iter().map(|s| s.intensity).collect();
        Ok(SpectrumSet { mz, rows })
    }

    pub fn mz(&self) -> &[f64] {
        &self.mz
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Number of spectra M.
    pub fn n_spectra(&self) -> usize {
        self.rows.len()
    }

    /// Number of grid points N.
    pub fn n_points(&self) -> usize {
        self.mz.len()
    }

    pub fn spectrum(&self, m: usize) -> Result<Spectrum> {
        let row = self
            .rows
            .get(m)
            .ok_or_else(|| Error::Data(format!("no spectrum {m} in set of {}", self.rows.len())))?;
        Spectrum::new(self.mz.clone(), row.clone())
    }
}
