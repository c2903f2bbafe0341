//! Model file: magic `LIRM`, a format version, the meta block, the input
//! normalizers, then the parameter vector. Every number is little-endian.
//!
//! ```text
//! "LIRM" | version u32 | d u32 | B u32 | sigma_train f32
//! | nq u32 | nq x u32 | ni u32 | ni x u32 | nh u32 | nh x u32
//! | query mean d x f32 | query std d x f32 | dist mean B x f32 | dist std B x f32
//! | P u64 | P x f32
//! ```

use std::path::Path;

use super::{Architecture, ModelMeta, ProbingModel, Standardizer};
use crate::codec::write_all;
use crate::error::{format_err, Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"LIRM";
pub const MODEL_VERSION: u32 = 1;

pub fn encode_model(model: &ProbingModel<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.num_params() * 4);
    let meta = model.meta();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.dim as u32).to_le_bytes());
    out.extend_from_slice(&(meta.partitions as u32).to_le_bytes());
    out.extend_from_slice(&meta.sigma_train.to_le_bytes());
    for widths in [&meta.arch.query_widths, &meta.arch.dist_widths, &meta.arch.head_hidden] {
        out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
        for &w in widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
    }
    let (qn, dn) = model.normalizers();
    for v in qn.mean.iter().chain(&qn.std).chain(&dn.mean).chain(&dn.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(model.num_params() as u64).to_le_bytes());
    for v in model.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(format_err(self.pos as u64, format!("truncated: need {n} more bytes")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let at = self.pos;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| format_err(at as u64, "length overflow"))?)?;
        let vals: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(format_err((at + 4 * i) as u64, "non-finite value"));
        }
        Ok(vals)
    }

    fn widths(&mut self) -> Result<Vec<usize>> {
        let at = self.pos;
        let n = self.u32()? as usize;
        if n > 64 {
            return Err(format_err(at as u64, format!("implausible layer count {n}")));
        }
        (0..n).map(|_| self.u32().map(|w| w as usize)).collect()
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ProbingModel<f32>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MODEL_MAGIC {
        return Err(format_err(0, "bad magic, not a model file"));
    }
    let version = c.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let dim = c.u32()? as usize;
    let partitions = c.u32()? as usize;
    let sigma_train = f32::from_le_bytes(c.take(4)?.try_into().unwrap());
    let arch = Architecture {
        query_widths: c.widths()?,
        dist_widths: c.widths()?,
        head_hidden: c.widths()?,
    };
    let mut model = ProbingModel::<f32>::zeroed(ModelMeta {
        dim,
        partitions,
        arch,
        sigma_train,
    })
    .map_err(|e| format_err(8, e.to_string()))?;

    let qn = Standardizer {
        mean: c.f32s(dim)?,
        std: c.f32s(dim)?,
    };
    let dn = Standardizer {
        mean: c.f32s(partitions)?,
        std: c.f32s(partitions)?,
    };
    let at = c.pos;
    model
        .set_normalizers(qn, dn)
        .map_err(|e| format_err(at as u64, e.to_string()))?;

    let at = c.pos;
    let count = c.u64()?;
    if count != model.num_params() as u64 {
        return Err(format_err(
            at as u64,
            format!("{count} parameters stored, architecture needs {}", model.num_params()),
        ));
    }
    let params = c.f32s(count as usize)?;
    if c.pos != bytes.len() {
        return Err(format_err(c.pos as u64, "trailing bytes after parameters"));
    }
    model.params_mut().copy_from_slice(&params);
    Ok(model)
}

pub fn save_model(model: &ProbingModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_all(path.as_ref(), &encode_model(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ProbingModel<f32>> {
    decode_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ProbingModel<f32> {
        ProbingModel::new(
            ModelMeta {
                dim: 2,
                partitions: 3,
                arch: Architecture {
                    query_widths: vec![2],
                    dist_widths: vec![1],
                    head_hidden: vec![],
                },
                sigma_train: 0.5,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_outputs() {
        let model = small();
        let back = decode_model(&encode_model(&model)).unwrap();
        assert_eq!(back, model);
        let (q, i) = ([0.3f32, -1.0], [1.0f32, 2.0, 0.5]);
        let a = model.forward(&q, &i).unwrap();
        let b = back.forward(&q, &i).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn golden_header_bytes() {
        let bytes = encode_model(&small());
        assert_eq!(&bytes[..4], b"LIRM");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &0.5f32.to_le_bytes());
        // One query layer of width 2, one distance layer of width 1, no
        // hidden head layers.
        assert_eq!(&bytes[20..40], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
        // Normalizers: 2 + 2 + 3 + 3 floats, then the u64 parameter count.
        let params = (2 * 2 + 2) + (3 + 1) + (3 * 3 + 3);
        assert_eq!(&bytes[80..88], &(params as u64).to_le_bytes());
        assert_eq!(bytes.len(), 88 + params * 4);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_model(&small());
        for cut in [0, 3, 10, 50, bytes.len() - 1] {
            assert!(decode_model(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(&extra).is_err());
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(decode_model(&bad_version), Err(Error::Version { found: 9, .. })));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(decode_model(&bad_magic).is_err());
    }
}
