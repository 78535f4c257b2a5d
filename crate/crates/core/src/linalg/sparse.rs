use nalgebra::{DMatrix, DVector};

/// Coordinate-format sparse matrix. Duplicate entries are summed wherever the
/// matrix is consumed.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, ..Default::default() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols, "({r},{c}) out of {}x{}", self.nrows, self.ncols);
        if v != 0.0 {
            self.rows.push(r);
            self.cols.push(c);
            self.vals.push(v);
        }
    }

    /// Adds a dense block with its top-left corner at `(r0, c0)`.
    pub fn push_block(&mut self, r0: usize, c0: usize, block: &DMatrix<f64>, scale: f64) {
        for j in 0..block.ncols() {
            for i in 0..block.nrows() {
                self.push(r0 + i, c0 + j, scale * block[(i, j)]);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    /// `y += A x`
    pub fn mul_add(&self, x: &[f64], y: &mut [f64]) {
        for (r, c, v) in self.iter() {
            y[r] += v * x[c];
        }
    }

    /// `y += Aᵀ x`
    pub fn tr_mul_add(&self, x: &[f64], y: &mut [f64]) {
        for (r, c, v) in self.iter() {
            y[c] += v * x[r];
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows);
        self.mul_add(x, y.as_mut_slice());
        y
    }

    pub fn tr_mul_vec(&self, x: &[f64]) -> DVector<f64> {
        let mut y = DVector::zeros(self.ncols);
        self.tr_mul_add(x, y.as_mut_slice());
        y
    }

    /// Dense product `A X`.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.nrows, x.ncols());
        for (r, c, v) in self.iter() {
            for k in 0..x.ncols() {
                y[(r, k)] += v * x[(c, k)];
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Self::new(m.nrows(), m.ncols());
        t.push_block(0, 0, m, 1.0);
        t
    }

    /// Appends `scale * other` shifted by `(r0, c0)`.
    pub fn extend_shifted(&mut self, other: &Triplets, r0: usize, c0: usize, scale: f64) {
        for (r, c, v) in other.iter() {
            self.push(r0 + r, c0 + c, scale * v);
        }
    }

    /// Appends the transpose of `scale * other` shifted by `(r0, c0)`.
    pub fn extend_transposed(&mut self, other: &Triplets, r0: usize, c0: usize, scale: f64) {
        for (r, c, v) in other.iter() {
            self.push(r0 + c, c0 + r, scale * v);
        }
    }

    /// Row scaling `diag(d) A`.
    pub fn scale_rows(&mut self, d: &[f64]) {
        for (r, v) in self.rows.iter().zip(self.vals.iter_mut()) {
            *v *= d[*r];
        }
    }

    pub fn retain(&mut self, mut keep: impl FnMut(usize, usize) -> bool) {
        let mut k = 0;
        for i in 0..self.vals.len() {
            if keep(self.rows[i], self.cols[i]) {
                self.rows[k] = self.rows[i];
                self.cols[k] = self.cols[i];
                self.vals[k] = self.vals[i];
                k += 1;
            }
        }
        self.rows.truncate(k);
        self.cols.truncate(k);
        self.vals.truncate(k);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_dense() {
        let mut t = Triplets::new(3, 2);
        t.push(0, 0, 1.0);
        t.push(2, 1, -2.0);
        t.push(2, 1, 0.5);
        t.push(1, 0, 3.0);
        let d = t.to_dense();
        let x = [0.3, -1.2];
        assert!((t.mul_vec(&x) - &d * DVector::from_column_slice(&x)).norm() < 1e-15);
        let y = [1.0, 2.0, 3.0];
        assert!((t.tr_mul_vec(&y) - d.transpose() * DVector::from_column_slice(&y)).norm() < 1e-15);
    }
}
