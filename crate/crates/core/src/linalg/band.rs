/// LU factorization with partial pivoting restricted to the band of the input.
///
/// Storage is a dense row-major `n × n` buffer; only entries within the lower
/// bandwidth `kl` and the fill-extended upper bandwidth `kl + ku` are touched.
/// With `kl = ku = n - 1` this is ordinary dense LU.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

/// Pivot breakdown at the given elimination step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingularPivot(pub usize);

const PIVOT_RTOL: f64 = 1e-14;

impl BandLu {
    /// Factors the matrix given as (row, col, value) entries; duplicates sum.
    pub fn factor(
        n: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, SingularPivot> {
        let mut a = vec![0.0; n * n];
        let mut kl = 0usize;
        let mut ku = 0usize;
        for (r, c, v) in entries {
            if v == 0.0 {
                continue;
            }
            a[r * n + c] += v;
            if r > c {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        }
        let mut lu = Self { n, kl, ku, a, piv: vec![0; n] };
        lu.eliminate()?;
        Ok(lu)
    }

    /// Factors a dense matrix (row-major access through the closure).
    pub fn factor_dense(n: usize, get: impl Fn(usize, usize) -> f64) -> Result<Self, SingularPivot> {
        Self::factor(n, (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (i, j, get(i, j))))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn eliminate(&mut self) -> Result<(), SingularPivot> {
        let n = self.n;
        let scale = self.a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let uw = self.kl + self.ku;
        for k in 0..n {
            let imax = (k + self.kl).min(n.saturating_sub(1));
            let jmax = (k + uw).min(n - 1);
            let mut p = k;
            let mut best = self.a[k * n + k].abs();
            for i in k + 1..=imax {
                let v = self.a[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > PIVOT_RTOL * scale) {
                return Err(SingularPivot(k));
            }
            self.piv[k] = p;
            if p != k {
                for j in k..=jmax {
                    self.a.swap(k * n + j, p * n + j);
                }
            }
            let (head, tail) = self.a.split_at_mut((k + 1) * n);
            let row_k = &head[k * n..k * n + n];
            let pivot = row_k[k];
            for i in k + 1..=imax {
                let row_i = &mut tail[(i - k - 1) * n..(i - k) * n];
                let l = row_i[k] / pivot;
                if l == 0.0 {
                    continue;
                }
                row_i[k] = l;
                for j in k + 1..=jmax {
                    row_i[j] -= l * row_k[j];
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                let imax = (k + self.kl).min(n - 1);
                for i in k + 1..=imax {
                    b[i] -= self.a[i * n + k] * bk;
                }
            }
        }
        let uw = self.kl + self.ku;
        for k in (0..n).rev() {
            let row = &self.a[k * n..k * n + n];
            let jmax = (k + uw).min(n - 1);
            let mut s = b[k];
            for j in k + 1..=jmax {
                s -= row[j] * b[j];
            }
            b[k] = s / row[k];
        }
    }

    /// Smallest and largest absolute diagonal entries of `U`; a cheap
    /// conditioning proxy.
    pub fn pivot_range(&self) -> (f64, f64) {
        let n = self.n;
        (0..n).map(|k| self.a[k * n + k].abs()).fold((f64::INFINITY, 0.0), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn matches_dense_solve_with_pivoting() {
        // tridiagonal with a zero leading diagonal forces a pivot swap
        let n = 7;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = if i == 0 { 0.0 } else { 2.0 + i as f64 * 0.1 };
            if i + 1 < n {
                m[(i, i + 1)] = 1.0;
                m[(i + 1, i)] = -0.7;
            }
        }
        let lu = BandLu::factor_dense(n, |i, j| m[(i, j)]).unwrap();
        assert_eq!(lu.bandwidths(), (1, 1));
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let mut x = b.clone();
        lu.solve_in_place(x.as_mut_slice());
        assert!((&m * x - b).amax() < 1e-13);
    }

    #[test]
    fn detects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(BandLu::factor_dense(2, |i, j| m[(i, j)]).is_err());
    }
}
