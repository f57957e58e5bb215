//! Packet and measurement file formats.
//!
//! Binary layout (little-endian): the magic bytes `MBCS`, `u32` rows,
//! `u32` columns, then `rows * cols` `f64` values in row-major order.
//! CSV layout: one row per line, comma-separated columns, optionally preceded
//! by a single header line.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_finite, SensingData, SensingKind, SensingMatrix};

pub const MAGIC: &[u8; 4] = b"MBCS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Binary,
    Csv,
}

impl FileFormat {
    /// `.csv` selects CSV; everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Binary,
        }
    }
}

pub fn encode_matrix(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.nrows())
        .map_err(|_| Error::InvalidDimensions(format!("{} rows exceed u32", m.nrows())))?;
    let cols = u32::try_from(m.ncols())
        .map_err(|_| Error::InvalidDimensions(format!("{} columns exceed u32", m.ncols())))?;
    let mut buf = Vec::with_capacity(12 + 8 * m.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            buf.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing MBCS header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| Error::Format(format!("header dims {rows}x{cols} overflow")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header {rows}x{cols} needs {expected}",
            bytes.len()
        )));
    }
    Ok(row_major(rows, cols, &bytes[12..]))
}

fn row_major(rows: usize, cols: usize, payload: &[u8]) -> DMatrix<f64> {
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn parse_csv(text: &str, header: bool) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Format(format!(
                    "CSV row {} has {} columns, expected {c}",
                    rows + 1,
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Format(format!("CSV row {}: cannot parse {field:?}", rows + 1)))?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Format("CSV input is empty".into()))?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn format_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&m[(r, c)].to_string());
        }
        out.push('\n');
    }
    out
}

/// Reads a matrix file. Files starting with the `MBCS` magic are decoded as
/// binary regardless of extension; everything else is parsed as CSV.
pub fn read_matrix(path: &Path, csv_header: bool) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let m = if bytes.starts_with(MAGIC) {
        decode_matrix(&bytes)?
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format(format!("{} is neither MBCS binary nor UTF-8 CSV", path.display())))?;
        parse_csv(&text, csv_header)?
    };
    check_finite(&m)?;
    Ok(m)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, format: FileFormat) -> Result<()> {
    let bytes = match format {
        FileFormat::Binary => encode_matrix(m)?,
        FileFormat::Csv => format_csv(m).into_bytes(),
    };
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Serialized description of a sensing matrix. The matrix is regenerable
/// from `(kind, rows, cols, seed)`; `pairs` lists the 1 positions explicitly
/// for audit when the matrix is a two-ones matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingMatrixRecord {
    pub kind: SensingKind,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<Vec<f64>>>,
}

impl SensingMatrixRecord {
    /// `explicit_dense` additionally dumps Gaussian entries row by row.
    pub fn from_matrix(phi: &SensingMatrix, explicit_dense: bool) -> Self {
        let (pairs, entries) = match phi.data() {
            SensingData::TwoOnes(p) => (Some(p.clone()), None),
            SensingData::Dense(m) if explicit_dense => (
                None,
                Some(
                    (0..m.nrows())
                        .map(|r| m.row(r).iter().copied().collect())
                        .collect(),
                ),
            ),
            SensingData::Dense(_) => (None, None),
        };
        Self {
            kind: phi.kind(),
            rows: phi.rows(),
            cols: phi.cols(),
            seed: phi.seed(),
            pairs,
            entries,
        }
    }

    /// Regenerates the matrix from its seed and checks any explicit pairs.
    pub fn regenerate(&self) -> Result<SensingMatrix> {
        let phi = match self.kind {
            SensingKind::BernoulliTwoOnes => {
                crate::sensing::generate_bernoulli(self.rows, self.cols, self.seed)?
            }
            SensingKind::Gaussian => crate::sensing::generate_gaussian(self.rows, self.cols, self.seed)?,
        };
        if let (Some(listed), Some(actual)) = (&self.pairs, phi.pairs()) {
            if listed.as_slice() != actual {
                return Err(Error::Format(
                    "listed index pairs do not match the matrix regenerated from the seed".into(),
                ));
            }
        }
        Ok(phi)
    }
}
