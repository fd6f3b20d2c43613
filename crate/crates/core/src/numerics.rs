//! Dense column-major matrices, vector helpers, a numerically stable softmax
//! and the seeded random number source.
//!
//! Matrices are stored column-major because every context matrix in the model
//! is a bank of memory slots addressed by column: `S_:i` is a contiguous slice.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `rows x cols` matrix of `f64`, column-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatRepr", into = "MatRepr")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Serialized form: row-major nested arrays, which is what a human expects
/// to read in a checkpoint.
#[derive(Serialize, Deserialize)]
struct MatRepr {
    rows: usize,
    cols: usize,
    data: Vec<Vec<f64>>,
}

impl From<Mat> for MatRepr {
    fn from(m: Mat) -> Self {
        let data = (0..m.rows)
            .map(|r| (0..m.cols).map(|c| m.get(r, c)).collect())
            .collect();
        MatRepr {
            rows: m.rows,
            cols: m.cols,
            data,
        }
    }
}

impl TryFrom<MatRepr> for Mat {
    type Error = Error;

    fn try_from(repr: MatRepr) -> Result<Self> {
        if repr.data.len() != repr.rows || repr.data.iter().any(|r| r.len() != repr.cols) {
            return Err(Error::dim(
                "matrix",
                format!(
                    "declared {}x{} does not match stored rows",
                    repr.rows, repr.cols
                ),
            ));
        }
        Ok(Mat::from_fn(repr.rows, repr.cols, |r, c| repr.data[r][c]))
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    /// Builds a matrix from column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "from_col_major",
                format!("{} entries for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Stacks equal-length vectors as columns.
    pub fn from_columns<C: AsRef<[f64]>>(rows: usize, columns: &[C]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, col) in columns.iter().enumerate() {
            let col = col.as_ref();
            if col.len() != rows {
                return Err(Error::dim(
                    "from_columns",
                    format!("column {j} has length {}, expected {rows}", col.len()),
                ));
            }
            data.extend_from_slice(col);
        }
        Ok(Mat {
            rows,
            cols: columns.len(),
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] = v;
    }

    #[inline]
    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero; a 0-row matrix still has `cols` empty columns
        (0..self.cols).map(move |c| self.col(c))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self * w`, i.e. the weighted sum of columns.
    pub fn mul_vec(&self, w: &[f64]) -> Result<Vec<f64>> {
        weighted_sum(w, self)
    }

    /// `selfᵀ * v`: the inner product of `v` with every column.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::dim(
                "tr_mul_vec",
                format!("vector of length {} against {} rows", v.len(), self.rows),
            ));
        }
        Ok(self.columns().map(|c| dot(c, v)).collect())
    }

    /// `self * other`.
    pub fn mul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "mul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for (k, &b) in other.col(j).iter().enumerate() {
                if b != 0.0 {
                    axpy(b, self.col(k), dst);
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * other`.
    pub fn tr_mul(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows {
            return Err(Error::dim(
                "tr_mul",
                format!("{:?}ᵀ x {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Mat::from_fn(self.cols, other.cols, |i, j| {
            dot(self.col(i), other.col(j))
        }))
    }

    /// `self * otherᵀ`.
    pub fn mul_tr(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.cols {
            return Err(Error::dim(
                "mul_tr",
                format!("{:?} x {:?}ᵀ", self.shape(), other.shape()),
            ));
        }
        let mut out = Mat::zeros(self.rows, other.rows);
        for k in 0..self.cols {
            let a = self.col(k);
            let b = other.col(k);
            for (j, &bj) in b.iter().enumerate() {
                if bj != 0.0 {
                    axpy(bj, a, out.col_mut(j));
                }
            }
        }
        Ok(out)
    }

    /// Multiplies column `j` by `w[j]`.
    pub fn scale_columns(&self, w: &[f64]) -> Result<Mat> {
        if w.len() != self.cols {
            return Err(Error::dim(
                "scale_columns",
                format!("{} weights for {} columns", w.len(), self.cols),
            ));
        }
        let mut out = self.clone();
        for (j, &wj) in w.iter().enumerate() {
            out.col_mut(j).iter_mut().for_each(|x| *x *= wj);
        }
        Ok(out)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Mat) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                "add_scaled",
                format!("{:?} += {:?}", self.shape(), other.shape()),
            ));
        }
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    /// Rank-one update `self += alpha * x yᵀ`.
    pub fn add_outer(&mut self, alpha: f64, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (j, &yj) in y.iter().enumerate() {
            let s = alpha * yj;
            if s != 0.0 {
                axpy(s, x, self.col_mut(j));
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    /// Row-major nested vectors, for export.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c)).collect())
            .collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Softmax over all entries, computed with the max subtracted first.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::dim("softmax", "empty input"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    Ok(out)
}

/// Vector-Jacobian product of softmax: given `s = softmax(x)` and `ds`,
/// returns `(diag(s) - s sᵀ) ds`.
pub fn softmax_backward(s: &[f64], ds: &[f64]) -> Vec<f64> {
    let inner = dot(s, ds);
    s.iter()
        .zip(ds)
        .map(|(si, dsi)| si * (dsi - inner))
        .collect()
}

/// `Σ_i weights_i · M_:i`.
pub fn weighted_sum(weights: &[f64], m: &Mat) -> Result<Vec<f64>> {
    if weights.len() != m.cols() {
        return Err(Error::dim(
            "weighted_sum",
            format!("{} weights for {} columns", weights.len(), m.cols()),
        ));
    }
    let mut out = vec![0.0; m.rows()];
    for (w, col) in weights.iter().zip(m.columns()) {
        axpy(*w, col, &mut out);
    }
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Deterministic generator used everywhere randomness is needed.
pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed for a named stream.
///
/// The label is folded with FNV-1a and mixed with the parent seed through
/// SplitMix64, so `derive_seed(s, "init")` and `derive_seed(s, "shuffle")`
/// are unrelated streams while both depend only on `s`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(seed ^ splitmix64(h))
}

/// ChaCha8 generator for `(seed, label)`.
pub fn rng_for(seed: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, label))
}
