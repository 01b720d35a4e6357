//! Small dense real and complex linear algebra.
//!
//! Problems here are tiny (tens of unknowns), so everything is dense with
//! partial-pivoting elimination.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `y = A^T x`
    pub fn mul_t_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (yj, &aij) in y.iter_mut().zip(self.row(i)) {
                *yj += aij * xi;
            }
        }
        y
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Fails with [`Error::Singular`] when a pivot is exactly zero or
    /// non-finite.
    pub fn factor(a: &DenseMatrix<T>) -> Result<Self> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (piv, pmax) = (col..n)
                .map(|r| (r, lu[r * n + col].abs()))
                .fold((col, -T::one()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if !(pmax > T::zero()) || !pmax.is_finite() {
                return Err(Error::Singular);
            }
            if piv != col {
                for j in 0..n {
                    lu.swap(col * n + j, piv * n + j);
                }
                perm.swap(col, piv);
            }
            let d = lu[col * n + col];
            for r in col + 1..n {
                let f = lu[r * n + col] / d;
                lu[r * n + col] = f;
                if f != T::zero() {
                    for j in col + 1..n {
                        let v = lu[col * n + j];
                        lu[r * n + j] -= f * v;
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }
}

/// Solves `A x = b` once.
pub fn solve_dense<T: Scalar>(a: &DenseMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    Ok(Lu::factor(a)?.solve(b))
}

/// Column-major dense complex matrix. Columns are the natural unit here
/// (one column per user), so `col(k)` is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn from_columns(rows: usize, columns: &[Vec<Complex<T>>]) -> Self {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            assert_eq!(c.len(), rows, "column length");
            data.extend_from_slice(c);
        }
        Self {
            rows,
            cols: columns.len(),
            data,
        }
    }

    /// Builds from separate real/imaginary row-major `rows x cols` tables.
    pub fn from_parts(re: &[Vec<T>], im: &[Vec<T>]) -> Option<Self> {
        let rows = re.len();
        if im.len() != rows || rows == 0 {
            return None;
        }
        let cols = re[0].len();
        if re.iter().chain(im).any(|r| r.len() != cols) {
            return None;
        }
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = Complex::new(re[i][j], im[i][j]);
            }
        }
        Some(m)
    }

    /// Row-major real and imaginary tables.
    pub fn to_parts(&self) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let re = (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].re).collect())
            .collect();
        let im = (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].im).collect())
            .collect();
        (re, im)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, j: usize) -> &[Complex<T>] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [Complex<T>] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_norm(&self, j: usize) -> T {
        cnorm(self.col(j))
    }

    /// Returns a matrix whose columns are `self.col(order[0]), self.col(order[1]), ...`.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        let cols: Vec<Vec<Complex<T>>> = order.iter().map(|&j| self.col(j).to_vec()).collect();
        Self::from_columns(self.rows, &cols)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex<T>> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[j * self.rows + i]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for CMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[j * self.rows + i]
    }
}

/// Hermitian inner product `a^H b`.
pub fn cdot_h<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    let mut acc = Complex::new(T::zero(), T::zero());
    for (x, y) in a.iter().zip(b) {
        acc += x.conj() * y;
    }
    acc
}

pub fn cnorm<T: Scalar>(a: &[Complex<T>]) -> T {
    a.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
}

/// Solves the square complex system `A X = B` (B given column by column).
/// A pivot below `rel_tol * max|A|` is reported as rank deficiency.
pub fn csolve<T: Scalar>(
    a: &CMatrix<T>,
    b: &[Vec<Complex<T>>],
    rel_tol: T,
) -> Result<Vec<Vec<Complex<T>>>> {
    let n = a.rows();
    assert_eq!(a.cols(), n, "square system");
    let scale = a.iter().map(|z| z.norm()).fold(T::zero(), T::max);
    if !(scale > T::zero()) {
        return Err(Error::Singular);
    }
    // Augmented row-major copy.
    let nrhs = b.len();
    let width = n + nrhs;
    let mut m = vec![Complex::new(T::zero(), T::zero()); n * width];
    for i in 0..n {
        for j in 0..n {
            m[i * width + j] = a[(i, j)];
        }
        for (r, col) in b.iter().enumerate() {
            m[i * width + n + r] = col[i];
        }
    }
    for c in 0..n {
        let (piv, pmax) = (c..n)
            .map(|r| (r, m[r * width + c].norm()))
            .fold((c, -T::one()), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(pmax > rel_tol * scale) {
            return Err(Error::Singular);
        }
        if piv != c {
            for j in 0..width {
                m.swap(c * width + j, piv * width + j);
            }
        }
        let d = m[c * width + c];
        for r in 0..n {
            if r == c {
                continue;
            }
            let f = m[r * width + c] / d;
            if f.norm_sqr() == T::zero() {
                continue;
            }
            for j in c..width {
                let v = m[c * width + j];
                m[r * width + j] -= f * v;
            }
        }
    }
    Ok((0..nrhs)
        .map(|r| (0..n).map(|i| m[i * width + n + r] / m[i * width + i]).collect())
        .collect())
}
