use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::SizeMismatch {
                expected: rows * cols,
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("matrix entry {v}")));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == m), "ragged rows");
        Self {
            rows: n,
            cols: m,
            values: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let row = &other.values[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.values[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `self · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::SizeMismatch {
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok(self
            .values
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Solves `self · x = b` by Gaussian elimination with partial pivoting.
    /// Returns `None` when the system is numerically singular.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let n = self.rows;
        if !self.is_square() || b.len() != n {
            return None;
        }
        let mut a = self.values.clone();
        let mut x = b.to_vec();
        let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
            if a[pivot * n + col].abs() <= 1e-14 * scale {
                return None;
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(pivot * n + k, col * n + k);
                }
                x.swap(pivot, col);
            }
            let p = a[col * n + col];
            for row in col + 1..n {
                let factor = a[row * n + col] / p;
                if factor == 0.0 {
                    continue;
                }
                for k in col..n {
                    a[row * n + k] -= factor * a[col * n + k];
                }
                x[row] -= factor * x[col];
            }
        }
        for row in (0..n).rev() {
            let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
            x[row] = (x[row] - tail) / a[row * n + row];
        }
        Some(x)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.values[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.values[i * self.cols + j]
    }
}

/// Taylor terms kept after scaling the argument to 1-norm at most 1/2.
const EXPM_TAYLOR_ORDER: usize = 20;

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The argument is scaled by `2^-s` so that its 1-norm is at most 1/2, the
/// series is summed to order 20 (truncation error below `0.5^21 / 21!`), and
/// the result is squared `s` times.
pub fn matrix_exponential(m: &DenseMatrix) -> Result<DenseMatrix> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if m.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("matrix_exponential argument".into()));
    }
    let n = m.rows();
    let norm = m.norm_one();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m.scale(0.5_f64.powi(squarings));

    // Horner form: I + A(I + A/2(I + A/3(...)))
    let mut result = DenseMatrix::identity(n);
    for k in (1..=EXPM_TAYLOR_ORDER).rev() {
        let mut next = scaled.matmul(&result)?.scale(1.0 / k as f64);
        for i in 0..n {
            next[(i, i)] += 1.0;
        }
        result = next;
    }
    for _ in 0..squarings {
        result = result.matmul(&result)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain Taylor series without scaling; used as an oracle for moderate norms.
    fn taylor_oracle(m: &DenseMatrix, terms: usize) -> DenseMatrix {
        let n = m.rows();
        let mut term = DenseMatrix::identity(n);
        let mut sum = DenseMatrix::identity(n);
        for k in 1..terms {
            term = term.matmul(m).unwrap().scale(1.0 / k as f64);
            sum = sum.add(&term).unwrap();
        }
        sum
    }

    fn rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let e = matrix_exponential(&DenseMatrix::zeros(4, 4)).unwrap();
        assert_eq!(e, DenseMatrix::identity(4));
    }

    #[test]
    fn expm_of_diagonal() {
        let e = matrix_exponential(&DenseMatrix::diagonal(&[1.0, 2.0])).unwrap();
        assert!((e[(0, 0)] - 1f64.exp()).abs() < 1e-14);
        assert!((e[(1, 1)] - 2f64.exp()).abs() < 1e-13);
        assert_eq!(e[(0, 1)], 0.0);
        assert_eq!(e[(1, 0)], 0.0);
    }

    #[test]
    fn expm_of_swap_matrix() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let e = matrix_exponential(&m).unwrap();
        let oracle = taylor_oracle(&m, 60);
        assert!(rel_err(&e, &oracle) < 1e-14);
        assert!((e[(0, 0)] - 1f64.cosh()).abs() < 1e-14);
        assert!((e[(0, 1)] - 1f64.sinh()).abs() < 1e-14);
        assert!((e.trace() - 3.086161269630488).abs() < 1e-12);
    }

    #[test]
    fn expm_matches_taylor_oracle_up_to_norm_ten() {
        let mut state = 0x2545_f491_4f6c_dd1d_u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for n in [2, 3, 5, 8] {
            let raw: Vec<f64> = (0..n * n).map(|_| next()).collect();
            let m = DenseMatrix::from_row_major(n, n, raw).unwrap();
            for target in [0.1, 1.0, 4.0, 10.0] {
                let scaled = m.scale(target / m.norm_one());
                let e = matrix_exponential(&scaled).unwrap();
                let oracle = taylor_oracle(&scaled, 200);
                assert!(rel_err(&e, &oracle) < 1e-10, "n={n} norm={target}");
            }
        }
    }

    #[test]
    fn expm_of_nilpotent_equals_finite_sum() {
        let m = DenseMatrix::from_rows(&[
            vec![0.0, 0.7, -1.3, 2.0],
            vec![0.0, 0.0, 0.4, 0.9],
            vec![0.0, 0.0, 0.0, -0.6],
            vec![0.0, 0.0, 0.0, 0.0],
        ]);
        let exact = taylor_oracle(&m, 4);
        let e = matrix_exponential(&m).unwrap();
        let diff = e.sub(&exact).unwrap();
        assert!(diff.values().iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn expm_rejects_non_square() {
        assert!(matches!(
            matrix_exponential(&DenseMatrix::zeros(2, 3)),
            Err(Error::NonSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn solve_small_system() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]]);
        let x = a.solve(&[5.0, 3.0, 6.0]).unwrap();
        let back = a.mul_vec(&x).unwrap();
        for (b, e) in back.iter().zip([5.0, 3.0, 6.0]) {
            assert!((b - e).abs() < 1e-12);
        }
        assert!(DenseMatrix::zeros(2, 2).solve(&[1.0, 1.0]).is_none());
    }
}
