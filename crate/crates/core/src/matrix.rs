//! Dense row-major matrices and the handful of 2-D filtering primitives the
//! pyramid, the gradient tape and the SSIM family are built from.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            for r in 0..self.rows {
                write!(f, "\n  {:?}", self.row(r))?;
            }
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidConfig(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidConfig("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Outer product `col ⊗ row`.
    pub fn outer(col: &[f64], row: &[f64]) -> Self {
        Self::from_fn(col.len(), row.len(), |r, c| col[r] * row[c])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination; panics on shape mismatch.
    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

/// Mirror index without edge repetition (`-1 -> 1`, `n -> n-2`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// `table[offset][i]` is the source index for output `i` and kernel tap `offset`.
fn reflect_table(n: usize, taps: usize) -> Vec<Vec<usize>> {
    let half = (taps / 2) as isize;
    (0..taps)
        .map(|t| {
            (0..n)
                .map(|i| reflect_index(i as isize + t as isize - half, n))
                .collect()
        })
        .collect()
}

/// Correlates `input` with an odd-sized `kernel` under mirror boundaries:
/// `out[r][c] = Σ k[a][b] · in[r + a - kh/2][c + b - kw/2]`.
pub fn filter2d(input: &Matrix, kernel: &Matrix) -> Matrix {
    let (rows, cols) = input.shape();
    let (kh, kw) = kernel.shape();
    debug_assert!(kh % 2 == 1 && kw % 2 == 1);
    let rt = reflect_table(rows, kh);
    let ct = reflect_table(cols, kw);
    let mut out = Matrix::zeros(rows, cols);
    for a in 0..kh {
        for b in 0..kw {
            let k = kernel.get(a, b);
            if k == 0.0 {
                continue;
            }
            let cidx = &ct[b];
            for r in 0..rows {
                let src = input.row(rt[a][r]);
                let dst = &mut out.data[r * cols..(r + 1) * cols];
                for (d, &ci) in dst.iter_mut().zip(cidx) {
                    *d += k * src[ci];
                }
            }
        }
    }
    out
}

/// Adjoint of [`filter2d`] with respect to its input.
pub fn filter2d_input_adjoint(grad_out: &Matrix, kernel: &Matrix) -> Matrix {
    let (rows, cols) = grad_out.shape();
    let (kh, kw) = kernel.shape();
    let rt = reflect_table(rows, kh);
    let ct = reflect_table(cols, kw);
    let mut grad_in = Matrix::zeros(rows, cols);
    for a in 0..kh {
        for b in 0..kw {
            let k = kernel.get(a, b);
            if k == 0.0 {
                continue;
            }
            let cidx = &ct[b];
            for r in 0..rows {
                let g = grad_out.row(r);
                let base = rt[a][r] * cols;
                for (&gv, &ci) in g.iter().zip(cidx) {
                    grad_in.data[base + ci] += k * gv;
                }
            }
        }
    }
    grad_in
}

/// Adjoint of [`filter2d`] with respect to its kernel.
pub fn filter2d_kernel_adjoint(grad_out: &Matrix, input: &Matrix, kh: usize, kw: usize) -> Matrix {
    let (rows, cols) = input.shape();
    let rt = reflect_table(rows, kh);
    let ct = reflect_table(cols, kw);
    let mut grad_k = Matrix::zeros(kh, kw);
    for a in 0..kh {
        for b in 0..kw {
            let cidx = &ct[b];
            let mut acc = 0.0;
            for r in 0..rows {
                let src = input.row(rt[a][r]);
                let g = grad_out.row(r);
                for (&gv, &ci) in g.iter().zip(cidx) {
                    acc += gv * src[ci];
                }
            }
            grad_k.set(a, b, acc);
        }
    }
    grad_k
}

/// Keeps even-indexed rows and columns; output is `ceil(n / 2)` per axis.
pub fn downsample2(input: &Matrix) -> Matrix {
    let rows = input.rows().div_ceil(2);
    let cols = input.cols().div_ceil(2);
    Matrix::from_fn(rows, cols, |r, c| input.get(2 * r, 2 * c))
}

pub fn downsample2_adjoint(grad_out: &Matrix, rows: usize, cols: usize) -> Matrix {
    let mut g = Matrix::zeros(rows, cols);
    for r in 0..grad_out.rows() {
        for c in 0..grad_out.cols() {
            g.set(2 * r, 2 * c, grad_out.get(r, c));
        }
    }
    g
}

/// Zero-stuffs `input` into a `rows x cols` grid with gain 4.
pub fn zero_stuff(input: &Matrix, rows: usize, cols: usize) -> Matrix {
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..input.rows() {
        for c in 0..input.cols() {
            out.set(2 * r, 2 * c, 4.0 * input.get(r, c));
        }
    }
    out
}

pub fn zero_stuff_adjoint(grad_out: &Matrix, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |r, c| 4.0 * grad_out.get(2 * r, 2 * c))
}

/// Valid-region correlation (no padding); output is `(h - kh + 1) x (w - kw + 1)`.
pub fn filter2d_valid(input: &Matrix, kernel: &Matrix) -> Matrix {
    let (rows, cols) = input.shape();
    let (kh, kw) = kernel.shape();
    let orows = rows + 1 - kh;
    let ocols = cols + 1 - kw;
    let mut out = Matrix::zeros(orows, ocols);
    for a in 0..kh {
        for b in 0..kw {
            let k = kernel.get(a, b);
            if k == 0.0 {
                continue;
            }
            for r in 0..orows {
                let src = &input.row(r + a)[b..b + ocols];
                let dst = &mut out.data[r * ocols..(r + 1) * ocols];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += k * s;
                }
            }
        }
    }
    out
}

/// Separable valid-region filtering with the same 1-D taps on both axes.
pub fn separable_valid(input: &Matrix, taps: &[f64]) -> Matrix {
    let n = taps.len();
    let (rows, cols) = input.shape();
    let ocols = cols + 1 - n;
    let mut horiz = Matrix::zeros(rows, ocols);
    for r in 0..rows {
        let src = input.row(r);
        for c in 0..ocols {
            horiz.data[r * ocols + c] = taps.iter().zip(&src[c..c + n]).map(|(t, s)| t * s).sum();
        }
    }
    let orows = rows + 1 - n;
    let mut out = Matrix::zeros(orows, ocols);
    for (t, &k) in taps.iter().enumerate() {
        for r in 0..orows {
            let src = horiz.row(r + t);
            let dst = &mut out.data[r * ocols..(r + 1) * ocols];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |r, c| (r * 7 + c * 3) as f64 * 0.1 - 1.0)
    }

    #[test]
    fn reflect_index_mirrors_without_repeat() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(-3, 2), 1);
        assert_eq!(reflect_index(7, 1), 0);
    }

    #[test]
    fn filter_with_delta_is_identity() {
        let x = ramp(6, 9);
        let mut k = Matrix::zeros(5, 5);
        k.set(2, 2, 1.0);
        assert_eq!(filter2d(&x, &k), x);
    }

    #[test]
    fn filter_adjoints_satisfy_inner_product_identity() {
        let x = ramp(4, 7);
        let g = Matrix::from_fn(4, 7, |r, c| ((r * 13 + c * 5) % 11) as f64 - 5.0);
        let k = Matrix::from_fn(5, 5, |r, c| 0.1 * r as f64 - 0.05 * c as f64);
        let lhs: f64 = filter2d(&x, &k)
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let rhs_in: f64 = filter2d_input_adjoint(&g, &k)
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let rhs_k: f64 = filter2d_kernel_adjoint(&g, &x, 5, 5)
            .as_slice()
            .iter()
            .zip(k.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs_in).abs() < 1e-10);
        assert!((lhs - rhs_k).abs() < 1e-10);
    }

    #[test]
    fn down_and_stuff_shapes() {
        let x = ramp(7, 4);
        let d = downsample2(&x);
        assert_eq!(d.shape(), (4, 2));
        assert_eq!(d.get(3, 1), x.get(6, 2));
        let u = zero_stuff(&d, 7, 4);
        assert_eq!(u.get(6, 2), 4.0 * x.get(6, 2));
        assert_eq!(u.get(5, 2), 0.0);
    }

    #[test]
    fn separable_matches_full_outer_kernel() {
        let x = ramp(12, 15);
        let taps = [0.2, 0.5, 0.3];
        let full = filter2d_valid(&x, &Matrix::outer(&taps, &taps));
        let sep = separable_valid(&x, &taps);
        assert!(full.max_abs_diff(&sep) < 1e-12);
    }
}
