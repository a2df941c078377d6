use std::fmt;
use std::ops::{Deref, DerefMut, Index, IndexMut};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Below this many multiply-adds a product is not worth splitting across workers.
const PAR_FLOP_THRESHOLD: usize = 1 << 20;
/// Products with at most this many lhs rows and a row-major rhs skip the packed kernel.
const SKINNY_ROWS: usize = 16;

/// Dense real vector. Entries are finite whenever constructed through [`DenseVector::new`].
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector<T>(Vec<T>);

impl<T: Scalar> DenseVector<T> {
    pub fn new(data: Vec<T>) -> Result<Self> {
        if data.iter().all(|x| x.is_finite()) {
            Ok(Self(data))
        } else {
            Err(Error::NonFinite("DenseVector::new"))
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> T) -> Self {
        Self((0..len).map(f).collect())
    }

    pub fn from_slice(s: &[T]) -> Self {
        Self(s.to_vec())
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn norm(&self) -> T {
        norm2(&self.0)
    }

    pub fn norm_sq(&self) -> T {
        dot(&self.0, &self.0)
    }

    pub fn dot(&self, other: &[T]) -> T {
        dot(&self.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> DenseVector<U> {
        DenseVector(self.0.iter().map(|x| U::lit(x.as_f64())).collect())
    }
}

impl<T> Deref for DenseVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for DenseVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T: fmt::Debug> fmt::Debug for DenseVector<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Dense row-major real matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for DenseMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[r * self.cols..(r + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("DenseMatrix::from_vec", rows * cols, data.len()));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("DenseMatrix::from_vec"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "DenseMatrix::from_rows",
                    cols,
                    format!("{} (row {i})", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_diag(d: &[T]) -> Self {
        Self::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { T::zero() })
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
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

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        self.transpose_into(&mut out);
        out
    }

    /// Blocked transpose into a preallocated `cols x rows` buffer.
    pub fn transpose_into(&self, out: &mut Self) {
        assert_eq!(out.shape(), (self.cols, self.rows));
        const B: usize = 32;
        let (r, c) = (self.rows, self.cols);
        for ib in (0..r).step_by(B) {
            for jb in (0..c).step_by(B) {
                for i in ib..(ib + B).min(r) {
                    for j in jb..(jb + B).min(c) {
                        out.data[j * r + i] = self.data[i * c + j];
                    }
                }
            }
        }
    }

    pub fn frobenius(&self) -> T {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Schur) product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, op)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// `(S + S^T) / 2`; requires a square matrix.
    pub fn symmetrized(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::shape("symmetrized", "square", format!("{:?}", self.shape())));
        }
        let half = T::lit(0.5);
        Ok(Self::from_fn(self.rows, self.cols, |i, j| {
            half * (self[(i, j)] + self[(j, i)])
        }))
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", format!("inner dim {}", self.cols), other.rows));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm_rows(
            self,
            MatRef {
                data: &other.data,
                rs: other.cols as isize,
                cs: 1,
            },
            other.cols,
            &mut out,
        );
        Ok(out)
    }

    /// `self * other^T` (both operands read along rows).
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        let mut out = Self::zeros(self.rows, other.rows);
        self.matmul_nt_into(other, &mut out)?;
        Ok(out)
    }

    pub fn matmul_nt_into(&self, other: &Self, out: &mut Self) -> Result<()> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_nt",
                format!("inner dim {}", self.cols),
                other.cols,
            ));
        }
        if out.shape() != (self.rows, other.rows) {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?}", (self.rows, other.rows)),
                format!("{:?}", out.shape()),
            ));
        }
        gemm_rows(
            self,
            MatRef {
                data: &other.data,
                rs: 1,
                cs: other.cols as isize,
            },
            other.rows,
            out,
        );
        Ok(())
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        self.transpose().matmul(other)
    }

    /// `self * self^T`.
    pub fn gram(&self) -> Self {
        let mut g = self.matmul_nt(self).expect("gram shapes agree");
        // exact symmetry; the two triangles can differ in the last bit
        for i in 0..g.rows {
            for j in 0..i {
                let v = g[(i, j)];
                g[(j, i)] = v;
            }
        }
        g
    }

    pub fn matvec(&self, x: &[T]) -> Result<DenseVector<T>> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec", self.cols, x.len()));
        }
        let mut y = vec![T::zero(); self.rows];
        self.matvec_into(x, &mut y);
        Ok(DenseVector(y))
    }

    /// `y = self * x` without shape checks beyond debug assertions.
    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        let cols = self.cols;
        let body = |(i, yi): (usize, &mut T)| {
            *yi = dot(&self.data[i * cols..(i + 1) * cols], x);
        };
        if self.data.len() >= PAR_FLOP_THRESHOLD && rayon::current_num_threads() > 1 {
            y.par_iter_mut().enumerate().for_each(body);
        } else {
            y.iter_mut().enumerate().for_each(body);
        }
    }

    pub fn matvec_t(&self, x: &[T]) -> Result<DenseVector<T>> {
        if x.len() != self.rows {
            return Err(Error::shape("matvec_t", self.rows, x.len()));
        }
        let mut y = vec![T::zero(); self.cols];
        self.matvec_t_into(x, &mut y);
        Ok(DenseVector(y))
    }

    /// `y = self^T * x`, accumulated row by row in index order.
    pub fn matvec_t_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        y.iter_mut().for_each(|v| *v = T::zero());
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (yj, &a) in y.iter_mut().zip(self.row(i)) {
                *yj += xi * a;
            }
        }
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Strided view of the right-hand GEMM operand (`k x n`).
struct MatRef<'a, T> {
    data: &'a [T],
    rs: isize,
    cs: isize,
}

/// `out = lhs * rhs`, splitting output rows across the current rayon pool.
///
/// Every output element is produced by the same micro-kernel with the same
/// summation order no matter how the rows are chunked, so the result does not
/// depend on the worker count.
fn gemm_rows<T: Scalar>(lhs: &DenseMatrix<T>, rhs: MatRef<'_, T>, n: usize, out: &mut DenseMatrix<T>) {
    let (m, k) = lhs.shape();
    debug_assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.data.iter_mut().for_each(|x| *x = T::zero());
        return;
    }
    if m <= SKINNY_ROWS && rhs.cs == 1 && rhs.rs == n as isize {
        skinny_nn(lhs, &rhs.data[..k * n], n, out);
        return;
    }
    let workers = rayon::current_num_threads();
    let run = |row0: usize, chunk: &mut [T]| {
        let rows = chunk.len() / n;
        // SAFETY: `lhs` rows row0..row0+rows are in bounds, `rhs` is a valid
        // k x n view by construction, and `chunk` is an exclusive rows x n block.
        unsafe {
            T::gemm(
                rows,
                k,
                n,
                T::one(),
                lhs.data.as_ptr().add(row0 * k),
                k as isize,
                1,
                rhs.data.as_ptr(),
                rhs.rs,
                rhs.cs,
                T::zero(),
                chunk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };
    if workers > 1 && m * k * n >= PAR_FLOP_THRESHOLD && m > 1 {
        let rows_per = m.div_ceil(workers);
        out.data
            .par_chunks_mut(rows_per * n)
            .enumerate()
            .for_each(|(c, chunk)| run(c * rows_per, chunk));
    } else {
        run(0, &mut out.data);
    }
}

/// `out = lhs * rhs` for a few lhs rows and a row-major `rhs`, streaming
/// `rhs` once in blocks of four rows.
fn skinny_nn<T: Scalar>(lhs: &DenseMatrix<T>, rhs: &[T], n: usize, out: &mut DenseMatrix<T>) {
    let (m, k) = lhs.shape();
    out.data.iter_mut().for_each(|x| *x = T::zero());
    let mut p = 0;
    while p + 4 <= k {
        let r0 = &rhs[p * n..(p + 1) * n];
        let r1 = &rhs[(p + 1) * n..(p + 2) * n];
        let r2 = &rhs[(p + 2) * n..(p + 3) * n];
        let r3 = &rhs[(p + 3) * n..(p + 4) * n];
        for i in 0..m {
            let l = &lhs.data[i * k + p..i * k + p + 4];
            let (c0, c1, c2, c3) = (l[0], l[1], l[2], l[3]);
            let o = &mut out.data[i * n..(i + 1) * n];
            for j in 0..n {
                o[j] += (c0 * r0[j] + c1 * r1[j]) + (c2 * r2[j] + c3 * r3[j]);
            }
        }
        p += 4;
    }
    for p in p..k {
        let r = &rhs[p * n..(p + 1) * n];
        for i in 0..m {
            let c = lhs.data[i * k + p];
            let o = &mut out.data[i * n..(i + 1) * n];
            for j in 0..n {
                o[j] += c * r[j];
            }
        }
    }
}

/// Inner product with a fixed 4-way accumulation order.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

#[inline]
pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Euclidean distance between two equal-length slices.
#[inline]
pub fn dist2<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |s, v| s + v)
        .sqrt()
}
