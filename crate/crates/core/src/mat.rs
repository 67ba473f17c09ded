//! Small matrix helpers shared across modules.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Row-major on-disk form of a dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixData {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter().copied());
        }
        MatrixData {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl TryFrom<MatrixData> for DMatrix<f64> {
    type Error = String;

    fn try_from(m: MatrixData) -> Result<Self, Self::Error> {
        if m.rows * m.cols != m.data.len() {
            return Err(format!(
                "matrix declares {}x{} but holds {} entries",
                m.rows,
                m.cols,
                m.data.len()
            ));
        }
        Ok(DMatrix::from_row_slice(m.rows, m.cols, &m.data))
    }
}

/// `#[serde(with = "crate::mat::dmatrix")]` adapter.
pub mod dmatrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixData::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let data = MatrixData::deserialize(d)?;
        DMatrix::try_from(data).map_err(serde::de::Error::custom)
    }
}

/// Per-dimension affine scaling `x̃ = (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    /// Fits a z-score scaler over the columns of `data` (dimensions × samples).
    /// Zero-variance dimensions get unit scale.
    pub fn fit(data: &DMatrix<f64>) -> Self {
        let n = data.ncols().max(1) as f64;
        let mut mean = Vec::with_capacity(data.nrows());
        let mut scale = Vec::with_capacity(data.nrows());
        for row in data.row_iter() {
            let m = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(m);
            scale.push(if sd > f64::EPSILON * m.abs().max(1.0) { sd } else { 1.0 });
        }
        Scaler { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Scaler {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = (x[i] - self.mean[i]) / self.scale[i];
        }
    }

    pub fn invert(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = x[i] * self.scale[i] + self.mean[i];
        }
    }

    /// Scales every column of `data` in place.
    pub fn apply_columns(&self, data: &mut DMatrix<f64>) {
        for mut col in data.column_iter_mut() {
            for i in 0..col.len() {
                col[i] = (col[i] - self.mean[i]) / self.scale[i];
            }
        }
    }
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Selects a subset of columns.
pub(crate) fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Shortest round-trip decimal for `v`, switching to exponent form for very
/// small or very large magnitudes.
pub(crate) fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}
