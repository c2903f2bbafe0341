//! Readers and writers for the `fvecs`, `bvecs` and `ivecs` formats used by
//! the SIFT/BIGANN distributions.
//!
//! Every record is a little-endian `i32` dimension followed by that many
//! components: `f32` (fvecs), `u8` (bvecs) or `i32` (ivecs).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::dataset::Dataset;
use crate::error::{format_err, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecFormat {
    Fvecs,
    Bvecs,
    Ivecs,
}

impl VecFormat {
    fn component_size(self) -> usize {
        match self {
            VecFormat::Bvecs => 1,
            VecFormat::Fvecs | VecFormat::Ivecs => 4,
        }
    }

    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

impl FromStr for VecFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fvecs" => Ok(VecFormat::Fvecs),
            "bvecs" => Ok(VecFormat::Bvecs),
            "ivecs" => Ok(VecFormat::Ivecs),
            other => Err(invalid(format!("unknown vector format {other:?}"))),
        }
    }
}

/// Row-major matrix of `i32`, the payload of an ivecs file (e.g. kNN ids).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMatrix {
    pub cols: usize,
    pub data: Vec<i32>,
}

impl IdMatrix {
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.cols).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[i32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Walks the records of a vecs buffer, checking that every dimension field
/// matches the first one. Returns `(d, payload offsets)`.
fn scan_records(bytes: &[u8], format: VecFormat) -> Result<(usize, usize)> {
    if bytes.is_empty() {
        return Err(format_err(0, "empty file"));
    }
    let first = read_dim(bytes, 0)?;
    if first == 0 {
        return Err(format_err(0, "zero dimension"));
    }
    let record = 4 + first * format.component_size();
    let mut offset = 0usize;
    let mut count = 0usize;
    while offset < bytes.len() {
        let d = read_dim(bytes, offset)?;
        if d != first {
            return Err(format_err(
                offset as u64,
                format!("inconsistent dimension {d}, first record has {first}"),
            ));
        }
        if offset + record > bytes.len() {
            return Err(format_err(
                offset as u64,
                format!(
                    "truncated record: need {record} bytes, {} remain",
                    bytes.len() - offset
                ),
            ));
        }
        offset += record;
        count += 1;
    }
    Ok((first, count))
}

fn read_dim(bytes: &[u8], offset: usize) -> Result<usize> {
    let Some(raw) = bytes.get(offset..offset + 4) else {
        return Err(format_err(offset as u64, "truncated dimension field"));
    };
    let d = i32::from_le_bytes(raw.try_into().expect("4 bytes"));
    if d < 0 {
        return Err(format_err(offset as u64, format!("negative dimension {d}")));
    }
    Ok(d as usize)
}

/// Decodes an fvecs or bvecs buffer into a dataset.
pub fn decode_vectors(bytes: &[u8], format: VecFormat) -> Result<Dataset> {
    if format == VecFormat::Ivecs {
        return Err(invalid("ivecs holds ids; use decode_ivecs"));
    }
    let (d, n) = scan_records(bytes, format)?;
    let size = format.component_size();
    let mut data = Vec::with_capacity(n * d);
    for rec in bytes.chunks_exact(4 + d * size) {
        let payload = &rec[4..];
        match format {
            VecFormat::Fvecs => data.extend(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))),
            ),
            VecFormat::Bvecs => data.extend(payload.iter().map(|&b| f32::from(b))),
            VecFormat::Ivecs => unreachable!(),
        }
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        let offset = (pos / d) * (4 + d * 4) + 4 + (pos % d) * 4;
        return Err(format_err(offset as u64, "non-finite component"));
    }
    Dataset::new(d, data)
}

pub fn decode_ivecs(bytes: &[u8]) -> Result<IdMatrix> {
    let (d, n) = scan_records(bytes, VecFormat::Ivecs)?;
    let mut data = Vec::with_capacity(n * d);
    for rec in bytes.chunks_exact(4 + d * 4) {
        data.extend(
            rec[4..]
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes"))),
        );
    }
    Ok(IdMatrix { cols: d, data })
}

/// Encodes a dataset as fvecs or bvecs. bvecs requires every component to
/// be an integer in `[0, 255]`.
pub fn encode_vectors(dataset: &Dataset, format: VecFormat) -> Result<Vec<u8>> {
    let d = dataset.dim();
    let mut out = Vec::with_capacity(dataset.len() * (4 + d * format.component_size()));
    for (i, row) in dataset.rows().enumerate() {
        out.extend_from_slice(&(d as i32).to_le_bytes());
        match format {
            VecFormat::Fvecs => {
                for v in row {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            VecFormat::Bvecs => {
                for (j, &v) in row.iter().enumerate() {
                    if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                        return Err(invalid(format!(
                            "row {i} component {j} = {v} is not representable as a byte"
                        )));
                    }
                    out.push(v as u8);
                }
            }
            VecFormat::Ivecs => return Err(invalid("ivecs holds ids; use encode_ivecs")),
        }
    }
    Ok(out)
}

pub fn encode_ivecs(ids: &IdMatrix) -> Result<Vec<u8>> {
    if ids.cols == 0 || ids.data.is_empty() {
        return Err(invalid("ivecs matrix must be non-empty"));
    }
    let mut out = Vec::with_capacity(ids.rows() * (4 + ids.cols * 4));
    for row in ids.data.chunks_exact(ids.cols) {
        out.extend_from_slice(&(ids.cols as i32).to_le_bytes());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_vectors(path: impl AsRef<Path>, format: VecFormat) -> Result<Dataset> {
    decode_vectors(&fs::read(path)?, format)
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<IdMatrix> {
    decode_ivecs(&fs::read(path)?)
}

pub fn write_vectors(dataset: &Dataset, path: impl AsRef<Path>, format: VecFormat) -> Result<()> {
    let bytes = encode_vectors(dataset, format)?;
    write_all(path.as_ref(), &bytes)
}

pub fn write_ivecs(ids: &IdMatrix, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_ivecs(ids)?;
    write_all(path.as_ref(), &bytes)
}

pub(crate) fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}
