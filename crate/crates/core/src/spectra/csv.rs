//! Two-column `wavenumber,intensity` files, one spectrum per file.
//!
//! A header row is optional on read and always written. Values are
//! written in shortest round-trip form, so a write/read cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{SpectraError, Spectrum};

pub const CSV_HEADER: &str = "wavenumber,intensity";

pub fn write_csv_string(spectrum: &Spectrum) -> String {
    let mut out = String::with_capacity(spectrum.len() * 32);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (w, i) in spectrum.wavenumbers().iter().zip(spectrum.intensities()) {
        let _ = writeln!(out, "{w},{i}");
    }
    out
}

pub fn write_csv(path: &Path, spectrum: &Spectrum) -> Result<(), SpectraError> {
    fs::write(path, write_csv_string(spectrum)).map_err(|source| SpectraError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<Spectrum, SpectraError> {
    let text = fs::read_to_string(path).map_err(|source| SpectraError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv_str(&text, &path.display().to_string())
}

/// Parses CSV text; `origin` names the source in error messages. Row
/// numbers in errors are 1-based line numbers.
pub fn read_csv_str(text: &str, origin: &str) -> Result<Spectrum, SpectraError> {
    let parse_err = |row: usize, message: String| SpectraError::Parse {
        path: origin.to_string(),
        row,
        message,
    };
    let mut wavenumbers = Vec::new();
    let mut intensities = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (cells.next(), cells.next(), cells.next()) else {
            return Err(parse_err(row, format!("expected 2 columns in {line:?}")));
        };
        let parsed = (a.parse::<f64>(), b.parse::<f64>());
        let (w, i) = match parsed {
            (Ok(w), Ok(i)) => (w, i),
            _ if wavenumbers.is_empty() && row == 1 && a.parse::<f64>().is_err() && b.parse::<f64>().is_err() => continue,
            (Err(_), _) => return Err(parse_err(row, format!("non-numeric wavenumber {a:?}"))),
            (_, Err(_)) => return Err(parse_err(row, format!("non-numeric intensity {b:?}"))),
        };
        if !w.is_finite() || !i.is_finite() {
            return Err(parse_err(row, "non-finite value".into()));
        }
        if let Some(&prev) = wavenumbers.last() {
            if w <= prev {
                return Err(parse_err(row, format!("wavenumber {w} not greater than previous {prev}")));
            }
        }
        wavenumbers.push(w);
        intensities.push(i);
    }
    if wavenumbers.is_empty() {
        return Err(SpectraError::NoRows { path: origin.to_string() });
    }
    Spectrum::new(wavenumbers, intensities)
}
