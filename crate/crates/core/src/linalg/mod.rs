//! Dense real matrices and the handful of kernels the rest of the crate
//! needs. Everything is `f64`, row-major.

mod eigen;
mod expm;
mod factor;
mod poly;

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

pub use eigen::{eigenvalues_small, Complex};
pub use expm::{expm, expm_frechet};
pub use factor::{
    cholesky, gram_schmidt_triangular, householder_r, lu_solve, singular_values, solve_lower,
    symmetric_eigenvalues, GramSchmidt,
};
pub use poly::{polymat_power, polymat_powers, Poly, PolyMat};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {pos}")));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    op: "from_rows",
                    left: (r, c),
                    right: (1, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Mat::from_vec(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Mat::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        matmul(self, other)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "matvec",
                left: self.shape(),
                right: (x.len(), 1),
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn scaled(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Mat) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op: "axpy",
                left: self.shape(),
                right: other.shape(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Mat, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, x) in sums.iter_mut().zip(self.row(i)) {
                *s += x.abs();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius inner product `⟨self, other⟩ = Σ aᵢⱼ bᵢⱼ`.
    pub fn dot(&self, other: &Mat) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// `‖selfᵀ self − I‖_F`
    pub fn orthogonality_error(&self) -> f64 {
        let gram = matmul(&self.transpose(), self).expect("square gram");
        let mut err = 0.0;
        for i in 0..gram.rows {
            for j in 0..gram.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = gram[(i, j)] - target;
                err += d * d;
            }
        }
        err.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_strictly_lower(&self) -> bool {
        (0..self.rows).all(|i| (i..self.cols).all(|j| self[(i, j)] == 0.0))
    }

    /// `(self - selfᵀ) / 2`
    pub fn skew_part(&self) -> Mat {
        let t = self.transpose();
        Mat::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self[(i, j)] - t[(i, j)])
        })
    }

    /// Integer power by repeated multiplication (`t ≥ 0`).
    pub fn pow(&self, t: usize) -> Result<Mat> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                op: "pow",
                rows: self.rows,
                cols: self.cols,
            });
        }
        let mut acc = Mat::identity(self.rows);
        for _ in 0..t {
            acc = matmul(&acc, self)?;
        }
        Ok(acc)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Matrix product `a · b`.
///
/// Backed by `matrixmultiply`'s packed kernels. The blocking and summation
/// order depend only on the shapes, so repeated calls on the same machine are
/// bit-identical.
pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Mat::zeros(a.rows, b.cols);
    gemm_into(1.0, a, b, 0.0, &mut c);
    Ok(c)
}

/// `c ← alpha·a·b + beta·c` without shape checks beyond debug assertions.
pub(crate) fn gemm_into(alpha: f64, a: &Mat, b: &Mat, beta: f64, c: &mut Mat) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(c.shape(), (a.rows, b.cols));
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for x in c.data.iter_mut() {
            *x *= beta;
        }
        return;
    }
    // SAFETY: the pointers cover `rows*cols` contiguous row-major elements
    // and the shapes were checked above; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.cols as isize,
            1,
            b.data.as_ptr(),
            b.cols as isize,
            1,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// `a · bᵀ` without materialising the transpose.
pub(crate) fn matmul_bt(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.cols, b.cols);
    let mut c = Mat::zeros(a.rows, b.rows);
    if a.rows == 0 || b.rows == 0 || a.cols == 0 {
        return c;
    }
    // SAFETY: `b` is read through swapped strides as its transpose.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.rows,
            1.0,
            a.data.as_ptr(),
            a.cols as isize,
            1,
            b.data.as_ptr(),
            1,
            b.cols as isize,
            0.0,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    c
}

/// `aᵀ · b` without materialising the transpose.
pub(crate) fn matmul_at(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.rows, b.rows);
    let mut c = Mat::zeros(a.cols, b.cols);
    if a.cols == 0 || b.cols == 0 || a.rows == 0 {
        return c;
    }
    // SAFETY: `a` is read through swapped strides as its transpose.
    unsafe {
        matrixmultiply::dgemm(
            a.cols,
            a.rows,
            b.cols,
            1.0,
            a.data.as_ptr(),
            1,
            a.cols as isize,
            b.data.as_ptr(),
            b.cols as isize,
            1,
            0.0,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    c
}
