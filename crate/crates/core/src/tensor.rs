//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] is an immutable value once an operation hands it back. The
//! operations here (matrix product, reductions, binary serialization) are
//! what the rest of the crate builds on.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::fsutil;

/// Magic bytes opening every serialized tensor.
pub const TENSOR_MAGIC: &[u8; 8] = b"UQTENSOR";

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    /// Builds a tensor, checking that `shape` matches the payload length.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(UqError::Dimension(format!(
                "shape {shape:?} contains a zero-sized dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(UqError::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Stacks equal-length rows into an `[rows, cols]` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| UqError::EmptyInput("no rows".into()))?;
        let cols = first.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(UqError::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Size of the leading dimension (the batch axis for activations).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of elements per leading-axis slice.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// Gathers the given leading-axis slices into a new tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(UqError::EmptyInput("no rows selected".into()));
        }
        let w = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            if i >= self.rows() {
                return Err(UqError::Dimension(format!(
                    "row {i} out of range for {} rows",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }

    /// Concatenates along the leading axis.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| UqError::EmptyInput("nothing to concatenate".into()))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(UqError::Dimension(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Tensor::new(shape, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Writes the binary container: magic, u32 rank, u32 dims, f64 payload,
    /// all little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.shape.len() + 8 * self.data.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| UqError::Parse { offset: 0, detail: e.to_string() })?;
        Tensor::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |offset: usize, what: &str| UqError::Parse {
            offset: offset as u64,
            detail: format!("truncated tensor: missing {what}"),
        };
        if bytes.len() < 8 {
            return Err(truncated(bytes.len(), "magic"));
        }
        if &bytes[..8] != TENSOR_MAGIC {
            return Err(UqError::Parse {
                offset: 0,
                detail: "bad magic, expected UQTENSOR".into(),
            });
        }
        let read_u32 = |at: usize| -> Option<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };
        let rank = read_u32(8).ok_or_else(|| truncated(8, "rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut at = 12;
        for _ in 0..rank {
            let d = read_u32(at).ok_or_else(|| truncated(at, "dimension"))?;
            shape.push(d as usize);
            at += 4;
        }
        let len: usize = shape.iter().product();
        let need = at + len * 8;
        if bytes.len() < need {
            return Err(truncated(bytes.len(), "payload"));
        }
        if bytes.len() > need {
            return Err(UqError::Parse {
                offset: need as u64,
                detail: "trailing bytes after payload".into(),
            });
        }
        let data = bytes[at..need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| UqError::Parse {
            offset: 8,
            detail: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| UqError::io(path, e))?;
        Tensor::from_bytes(&bytes)
    }
}

/// Matrix product of `[m, k]` and `[k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(UqError::Dimension(format!(
            "cannot multiply {:?} by {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    linalg::gemm(m, k, n, &a.data, false, &b.data, false, &mut out, 0.0);
    Tensor::new(vec![m, n], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    /// Index of the largest element; the lowest index wins exact ties.
    Argmax,
    /// Population variance (divides by N).
    Variance,
}

/// Reduces over the whole tensor (to a scalar) or along one axis.
pub fn reduce(t: &Tensor, op: ReduceOp, axis: Option<usize>) -> Result<Tensor> {
    if t.is_empty() {
        return Err(UqError::EmptyInput("cannot reduce an empty tensor".into()));
    }
    match axis {
        None => Ok(Tensor::scalar(reduce_slice(
            t.data.iter().copied(),
            t.len(),
            op,
        ))),
        Some(ax) => {
            if ax >= t.rank() {
                return Err(UqError::Dimension(format!(
                    "axis {ax} out of range for shape {:?}",
                    t.shape
                )));
            }
            let outer: usize = t.shape[..ax].iter().product();
            let len = t.shape[ax];
            let inner: usize = t.shape[ax + 1..].iter().product();
            let mut out = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let it = (0..len).map(|j| t.data[base + j * inner]);
                    out.push(reduce_slice(it, len, op));
                }
            }
            let mut shape = t.shape.clone();
            shape.remove(ax);
            Ok(Tensor { shape, data: out })
        }
    }
}

fn reduce_slice(values: impl Iterator<Item = f64> + Clone, n: usize, op: ReduceOp) -> f64 {
    match op {
        ReduceOp::Sum => values.sum(),
        ReduceOp::Mean => values.sum::<f64>() / n as f64,
        ReduceOp::Max => values.fold(f64::NEG_INFINITY, f64::max),
        ReduceOp::Argmax => argmax_iter(values) as f64,
        ReduceOp::Variance => {
            // shifting by the first element keeps constant inputs exactly zero
            let shift = values.clone().next().unwrap_or(0.0);
            let mean = values.clone().map(|v| v - shift).sum::<f64>() / n as f64;
            values.map(|v| (v - shift - mean) * (v - shift - mean)).sum::<f64>() / n as f64
        }
    }
}

fn argmax_iter(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v || i == 0 {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Argmax of a slice, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    argmax_iter(values.iter().copied())
}

/// Population variance of a slice.
pub fn population_variance(values: &[f64]) -> f64 {
    reduce_slice(values.iter().copied(), values.len(), ReduceOp::Variance)
}

pub(crate) mod linalg {
    /// `c = a·b + beta·c` for row-major `a: [m,k]`, `b: [k,n]`, with either
    /// operand optionally read transposed from its stored layout.
    #[allow(clippy::too_many_arguments)]
    pub fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        a_t: bool,
        b: &[f64],
        b_t: bool,
        c: &mut [f64],
        beta: f64,
    ) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(c.len(), m * n);
        if m == 0 || n == 0 {
            return;
        }
        if k == 0 {
            c.iter_mut().for_each(|v| *v *= beta);
            return;
        }
        // Stored a is [m,k] (or [k,m] when transposed); likewise b.
        let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}
