//! Dense row-major f64 matrix with the handful of operations the rest of the
//! library needs. Everything is f64: the loss landscape near convergence is
//! flat enough that f32 gradient checks against central differences fail.

use crate::error::{Error, Result};

/// Norms below this are treated as zero when normalizing rows.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    /// Builds from a flat row-major buffer. Rejects length mismatches and
    /// non-finite entries; every matrix in the system is finite by construction.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "buffer of {} values cannot fill {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("matrix literal contains NaN or Inf"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("ragged row list"));
        }
        Matrix::from_vec(r, c, rows.concat())
    }

    pub fn scalar(value: f64) -> Self {
        Matrix { rows: 1, cols: 1, data: vec![value] }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single entry of a 1x1 matrix.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::contract(format!(
                "expected 1x1 scalar, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "add {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    /// self (m x k) times other (k x n).
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &other.data[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Ok(Matrix { rows: m, cols: n, data: out })
    }

    /// self (m x d) times otherᵀ where other is (n x d). Row-by-row dot
    /// products, which is the cache-friendly orientation for cosine scores.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_nt {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, d, n) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * d..(i + 1) * d];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                let brow = &other.data[j * d..(j + 1) * d];
                let mut acc = 0.0;
                for (&a, &b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                orow[j] = acc;
            }
        }
        Ok(Matrix { rows: m, cols: n, data: out })
    }

    /// selfᵀ (k x m) times other (m x n); used by matmul backward.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "matmul_tn {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; k * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let brow = &other.data[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                let orow = &mut out[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Ok(Matrix { rows: k, cols: n, data: out })
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Horizontal concatenation: [self | other], row counts must match.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "hconcat {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix { rows: self.rows, cols, data })
    }

    /// Vertical concatenation: self stacked above other.
    pub fn vconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "vconcat {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix { rows: self.rows + other.rows, cols: self.cols, data })
    }

    /// New matrix made of the given rows of self, in the given order
    /// (duplicates allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(Error::index(format!(
                    "row {} of a {}-row matrix",
                    i, self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix { rows: idx.len(), cols: self.cols, data })
    }
}

/// Rescales every row to unit L2 norm. Rows with norm below `NORM_EPS` are
/// returned unchanged, so the zero vector stays zero instead of becoming NaN.
pub fn l2_normalize_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm >= NORM_EPS {
            for v in row {
                *v /= norm;
            }
        }
    }
    out
}

/// Pairwise cosine similarities: entry (i, j) = cos(a.row(i), b.row(j)),
/// clamped to [-1, 1]. Zero-norm rows yield similarity 0 against everything.
pub fn cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::shape(format!(
            "cosine between {}-dim and {}-dim rows",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = l2_normalize_rows(a).matmul_nt(&l2_normalize_rows(b))?;
    for v in out.data_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(out)
}

/// Softmax cross-entropy over temperature-scaled score rows, averaged over
/// rows. Returns the loss and the row-wise softmax probabilities (the latter
/// feeds the tape backward pass). Uses the max-shift trick for stability.
pub(crate) fn softmax_xent_forward(
    scores: &Matrix,
    labels: &[usize],
    temperature: f64,
) -> Result<(f64, Matrix)> {
    if scores.rows() == 0 || scores.cols() == 0 {
        return Err(Error::contract("softmax cross-entropy over an empty score matrix"));
    }
    if labels.len() != scores.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} score rows",
            labels.len(),
            scores.rows()
        )));
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::contract("temperature must be positive and finite"));
    }
    let (n, c) = scores.shape();
    let mut probs = Matrix::zeros(n, c);
    let mut total = 0.0;
    for i in 0..n {
        let label = labels[i];
        if label >= c {
            return Err(Error::index(format!("label {} with {} candidate classes", label, c)));
        }
        let row = scores.row(i);
        let mut maxv = f64::NEG_INFINITY;
        for &v in row {
            maxv = maxv.max(temperature * v);
        }
        let mut z = 0.0;
        {
            let prow = probs.row_mut(i);
            for (j, &v) in row.iter().enumerate() {
                let e = (temperature * v - maxv).exp();
                prow[j] = e;
                z += e;
            }
            for p in prow.iter_mut() {
                *p /= z;
            }
        }
        total += -(temperature * row[label] - maxv - z.ln());
    }
    Ok((total / n as f64, probs))
}

/// Mean cross-entropy between softmax(temperature * scores) rows and labels.
pub fn softmax_cross_entropy(scores: &Matrix, labels: &[usize], temperature: f64) -> Result<f64> {
    softmax_xent_forward(scores, labels, temperature).map(|(loss, _)| loss)
}
