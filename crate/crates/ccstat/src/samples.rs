//! Sample sets on disk.
//!
//! Both formats hold a header `(N_s, dim)` followed by the samples row-major,
//! one sample after another.
//!
//! * CSV (`.csv`): the first record is `N_s,dim`, then one record per sample.
//! * Binary (any other extension): two little-endian `u64` (`N_s`, `dim`),
//!   then `N_s * dim` little-endian IEEE-754 `f64`.

use std::fs;
use std::path::Path;

use ccstat_core::sampling::SampleSet;
use nalgebra::DVector;

use crate::error::{io_err, Error, Result};

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn save(path: &Path, set: &SampleSet) -> Result<()> {
    if is_csv(path) {
        save_csv(path, set)
    } else {
        save_binary(path, set)
    }
}

pub fn load(path: &Path) -> Result<SampleSet> {
    if is_csv(path) {
        load_csv(path)
    } else {
        load_binary(path)
    }
}

fn bad(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.into(),
        message: message.into(),
    }
}

pub fn save_csv(path: &Path, set: &SampleSet) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record([set.len().to_string(), set.dim().to_string()])
        .map_err(csv_err)?;
    for s in set.iter() {
        w.write_record(s.iter().map(f64::to_string)).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_csv(path: &Path) -> Result<SampleSet> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| bad(path, "empty file"))?
        .map_err(csv_err)?;
    let field = |i: usize| -> Result<usize> {
        header
            .get(i)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(path, "header must be `N_s,dim`"))
    };
    let (count, dim) = (field(0)?, field(1)?);
    let mut samples = Vec::with_capacity(count);
    for (line, rec) in records.enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != dim {
            return Err(bad(
                path,
                format!("sample {line} has {} values, expected {dim}", rec.len()),
            ));
        }
        let values = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(path, format!("sample {line}: {e}")))?;
        samples.push(DVector::from_vec(values));
    }
    if samples.len() != count {
        return Err(bad(
            path,
            format!("header promises {count} samples, found {}", samples.len()),
        ));
    }
    Ok(SampleSet::new(samples)?)
}

pub fn save_binary(path: &Path, set: &SampleSet) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + 8 * set.len() * set.dim());
    bytes.extend_from_slice(&(set.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(set.dim() as u64).to_le_bytes());
    for s in set.iter() {
        for v in s.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_binary(path: &Path) -> Result<SampleSet> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 16 {
        return Err(bad(path, "shorter than the 16-byte header"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let (count, dim) = (word(0) as usize, word(8) as usize);
    let expected = count
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(16));
    if expected != Some(bytes.len()) {
        return Err(bad(
            path,
            format!(
                "header says {count} x {dim} samples but the file has {} bytes",
                bytes.len()
            ),
        ));
    }
    let samples = bytes[16..]
        .chunks_exact(8 * dim.max(1))
        .take(count)
        .map(|chunk| {
            DVector::from_iterator(
                dim,
                chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))),
            )
        })
        .collect();
    Ok(SampleSet::new(samples)?)
}
