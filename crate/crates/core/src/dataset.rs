//! Dense row-major vector storage and the squared-L2 kernel.

use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

/// Immutable `n x d` matrix of `f32` rows. Row `i` has id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    data: Vec<f32>,
}

impl Dataset {
    /// Wraps a flat buffer. Rejects empty data, `dim == 0`, ragged lengths
    /// and non-finite values.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if data.is_empty() {
            return Err(invalid("dataset must contain at least one row"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "buffer of {} floats is not a multiple of d={dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    /// Always false for a constructed dataset; present for API symmetry.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn select(&self, ids: &[u32]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            if id as usize >= self.len() {
                return Err(Error::UnknownId(id));
            }
            data.extend_from_slice(self.row(id as usize));
        }
        Self::new(self.dim, data)
    }

    /// Splits off the last `tail` rows, e.g. to hold out queries drawn from
    /// the same distribution as the base set.
    pub fn split_tail(mut self, tail: usize) -> Result<(Self, Self)> {
        let n = self.len();
        if tail == 0 || tail >= n {
            return Err(invalid(format!("cannot split {tail} rows off {n}")));
        }
        let rest = self.data.split_off((n - tail) * self.dim);
        let dim = self.dim;
        Ok((Self::new(dim, self.data)?, Self::new(dim, rest)?))
    }

    /// 64-bit content hash over `(n, d, data)`; stable across platforms.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update((self.len() as u64).to_le_bytes());
        hasher.update((self.dim as u64).to_le_bytes());
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }
}

/// Squared Euclidean distance, accumulated in `f64`.
///
/// Panics on a length mismatch: mixing dimensionalities is a caller bug.
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    l2_sq_f64(a, b) as f32
}

#[inline]
pub(crate) fn l2_sq_f64(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "l2_sq: dimension mismatch");
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for lane in 0..4 {
            let t = f64::from(x[lane] - y[lane]);
            acc[lane] += t * t;
        }
    }
    let mut tail = 0.0f64;
    for (x, y) in ra.iter().zip(rb) {
        let t = f64::from(x - y);
        tail += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Indices of `values` sorted ascending, ties to the lower index.
pub fn argsort(values: &[f32]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    order.sort_by(|&a, &b| {
        values[a as usize]
            .total_cmp(&values[b as usize])
            .then(a.cmp(&b))
    });
    order
}

/// Indices of `values` sorted descending, ties to the lower index.
pub fn argsort_desc(values: &[f32]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    order.sort_by(|&a, &b| {
        values[b as usize]
            .total_cmp(&values[a as usize])
            .then(a.cmp(&b))
    });
    order
}
