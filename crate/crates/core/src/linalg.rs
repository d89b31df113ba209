//! Dense vectors and matrices plus the handful of reductions every other
//! module needs (norms, signs, moving averages, cosines).
//!
//! Vectors are plain slices. [`Matrix`] is row-major; for a weight matrix the
//! rows are neuron weight vectors and the column count is the fan-in.

use crate::error::{out_of_range, Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
pub fn sum_sq<F: Scalar>(v: &[F]) -> F {
    v.iter().map(|&x| x * x).sum()
}

/// Euclidean norm. Errors on an empty vector.
pub fn l2_norm<F: Scalar>(v: &[F]) -> Result<F> {
    if v.is_empty() {
        return Err(Error::Empty("l2_norm"));
    }
    Ok(norm(v))
}

/// Euclidean norm without the emptiness check (empty slice gives 0).
#[inline]
pub fn norm<F: Scalar>(v: &[F]) -> F {
    sum_sq(v).sqrt()
}

/// Elementwise sign with `sign(0) = 0`.
#[inline]
pub fn sign<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

pub fn signv<F: Scalar>(v: &[F]) -> Vec<F> {
    v.iter().map(|&x| sign(x)).collect()
}

fn check_beta<F: Scalar>(beta: F) -> Result<()> {
    if !(beta >= F::zero() && beta < F::one()) {
        return Err(out_of_range("beta", beta.to_f64_lossless(), "[0, 1)"));
    }
    Ok(())
}

/// Exponential moving average `beta * prev + (1 - beta) * x`.
pub fn ema<F: Scalar>(prev: F, x: F, beta: F) -> Result<F> {
    check_beta(beta)?;
    Ok(beta * prev + (F::one() - beta) * x)
}

/// In-place vector form of [`ema`]: `acc <- beta * acc + (1 - beta) * x`.
pub fn ema_inplace<F: Scalar>(acc: &mut [F], x: &[F], beta: F) -> Result<()> {
    check_beta(beta)?;
    if acc.len() != x.len() {
        return Err(Error::ShapeMismatch {
            what: "ema operands".into(),
            expected: acc.len(),
            got: x.len(),
        });
    }
    let keep = F::one() - beta;
    for (a, &g) in acc.iter_mut().zip(x) {
        *a = beta * *a + keep * g;
    }
    Ok(())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_between<F: Scalar>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            what: "cosine operands".into(),
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == F::zero() || nb == F::zero() {
        return Err(Error::ZeroNorm("cosine_between"));
    }
    let c = dot(a, b) / (na * nb);
    Ok(c.max(-F::one()).min(F::one()))
}

pub fn all_finite<F: Scalar>(v: &[F]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                what: format!("{rows}x{cols} matrix data"),
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { F::one() } else { F::zero() })
    }

    pub fn diag(values: &[F]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |r, c| if r == c { values[r] } else { F::zero() })
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: &[F], b: &[F]) -> Self {
        Self::from_fn(a.len(), b.len(), |r, c| a[r] * b[c])
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
    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[F]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Copy of rows `lo..hi`.
    pub fn row_range(&self, lo: usize, hi: usize) -> Self {
        assert!(lo <= hi && hi <= self.rows, "row range {lo}..{hi} out of {} rows", self.rows);
        Self {
            rows: hi - lo,
            cols: self.cols,
            data: self.data[lo * self.cols..hi * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn frobenius_sq(&self) -> F {
        sum_sq(&self.data)
    }

    pub fn scale(&self, k: F) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * k).collect(),
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix<F>) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                what: "matmul inner dimension".into(),
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == F::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * otherᵀ`, i.e. row-by-row dot products.
    pub fn matmul_t(&self, other: &Matrix<F>) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                what: "matmul_t shared dimension".into(),
                expected: self.cols,
                got: other.cols,
            });
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[F]) -> Result<Vec<F>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch {
                what: "matvec operand".into(),
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    /// `selfᵀ * v`.
    pub fn t_matvec(&self, v: &[F]) -> Result<Vec<F>> {
        if v.len() != self.rows {
            return Err(Error::ShapeMismatch {
                what: "t_matvec operand".into(),
                expected: self.rows,
                got: v.len(),
            });
        }
        let mut out = vec![F::zero(); self.cols];
        for (r, &k) in self.row_iter().zip(v) {
            for (o, &x) in out.iter_mut().zip(r) {
                *o += k * x;
            }
        }
        Ok(out)
    }
}
