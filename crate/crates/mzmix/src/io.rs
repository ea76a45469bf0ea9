//! File formats: spectrum and peak-list CSV, model and truth JSON.
//!
//! CSV values are written with the shortest round-trippable float
//! representation, so write-then-read reproduces the numbers bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::MixtureModel;
use crate::peaks::{Peak, PeakList};
use crate::pipeline::PartitionManifest;
use crate::simulate::TruthManifest;
use crate::spectrum::Spectrum;

fn parse_field(path: &Path, line_no: usize, field: &str) -> Result<f64> {
    field.trim().parse().map_err(|_| {
        Error::Data(format!(
            "{}:{}: not a number: `{field}`",
            path.display(),
            line_no + 1
        ))
    })
}

fn numeric_rows(path: &Path, text: &str, want_cols: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        // An optional header: skip the first line when it does not parse.
        if line_no == 0 && fields[0].trim().parse::<f64>().is_err() {
            continue;
        }
        if fields.len() < want_cols {
            return Err(Error::Data(format!(
                "{}:{}: expected {want_cols} columns, got {}",
                path.display(),
                line_no + 1,
                fields.len()
            )));
        }
        let mut row = Vec::with_capacity(want_cols);
        for field in fields.iter().take(want_cols) {
            row.push(parse_field(path, line_no, field)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Two-column `mz,intensity` CSV, header optional.
pub fn read_spectrum_csv(path: impl AsRef<Path>) -> Result<Spectrum> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let rows = numeric_rows(path, &text, 2)?;
    let (mz, intensity) = rows.into_iter().map(|r| (r[0], r[1])).unzip();
    Spectrum::new(mz, intensity)
}

pub fn write_spectrum_csv(path: impl AsRef<Path>, spectrum: &Spectrum) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(b"mz,intensity\n")?;
    for (x, y) in spectrum.mz().iter().zip(spectrum.intensity()) {
        writeln!(out, "{x},{y}")?;
    }
    out.flush()?;
    Ok(())
}

/// Four-column `position,height,fwhh,quality` CSV, header optional.
pub fn read_peaklist_csv(path: impl AsRef<Path>) -> Result<PeakList> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let rows = numeric_rows(path, &text, 4)?;
    let peaks = rows
        .into_iter()
        .map(|r| Peak {
            position: r[0],
            height: r[1],
            fwhh: r[2],
            quality: r[3],
        })
        .collect();
    PeakList::new(peaks, path.display().to_string())
}

pub fn write_peaklist_csv(path: impl AsRef<Path>, list: &PeakList) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(b"position,height,fwhh,quality\n")?;
    for p in list.peaks() {
        writeln!(out, "{},{},{},{}", p.position, p.height, p.fwhh, p.quality)?;
    }
    out.flush()?;
    Ok(())
}

/// First column of any CSV as positions: accepts external detectors'
/// outputs as long as the position comes first.
pub fn read_positions_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let rows = numeric_rows(path, &text, 1)?;
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

pub fn read_model_json(path: impl AsRef<Path>) -> Result<MixtureModel> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_model_json(path: impl AsRef<Path>, model: &MixtureModel) -> Result<()> {
    write_json(path, model)
}

pub fn read_truth_json(path: impl AsRef<Path>) -> Result<TruthManifest> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_partition_manifest(path: impl AsRef<Path>) -> Result<PartitionManifest> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
