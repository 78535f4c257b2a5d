//! Factorization of primal-dual Newton matrices.
//!
//! The unknowns are split as `[w, λ | μ]`. The `μ`-block of the Jacobian is
//! `diag(h)`, which is nonzero on interior iterates, so `Δμ` is eliminated
//! first and the condensed `[w, λ]` system is factored with one of the
//! structure-aware back ends below.

use nalgebra::{DMatrix, DVector};

use super::band::BandLu;

/// Sparsity strategy for the condensed `[w, λ]` system, expressed in
/// condensed indices (`0..n_w` primal, `n_w..n_w + n_f` equality multipliers).
#[derive(Clone, Debug, Default)]
pub enum KktStructure {
    /// Natural ordering, no structure assumed.
    #[default]
    Dense,
    /// Symmetric permutation after which the matrix is banded. `order[k]` is
    /// the index placed at position `k`.
    Banded { order: Vec<usize> },
    /// Block-diagonal with a dense coupling border (arrowhead form).
    Bordered { blocks: Vec<Vec<usize>>, border: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum FactorError {
    Singular,
    Structure(String),
}

#[derive(Clone, Debug)]
pub struct KktFactor {
    n_r: usize,
    diag: Vec<f64>,
    upper: Vec<Vec<(usize, f64)>>,
    lower: Vec<Vec<(usize, f64)>>,
    inner: Inner,
    regularized: bool,
}

#[derive(Clone, Debug)]
enum Inner {
    Band { lu: BandLu, pos: Vec<usize> },
    Bordered(BorderedLu),
}

impl KktFactor {
    /// Factors the `(n_r + n_m)`-square matrix given by `entries`, where the
    /// trailing `n_m` unknowns form a diagonal block. `reg > 0` shifts the
    /// condensed diagonal by `+reg` on the first `n_primal` entries and `-reg`
    /// on the rest.
    pub fn factor(
        n_r: usize,
        n_m: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
        structure: &KktStructure,
        n_primal: usize,
        reg: f64,
    ) -> Result<Self, FactorError> {
        let mut diag = vec![0.0; n_m];
        let mut upper: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_m];
        let mut lower: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_m];
        let mut reduced = Vec::new();
        for (r, c, v) in entries {
            if v == 0.0 {
                continue;
            }
            match (r < n_r, c < n_r) {
                (true, true) => reduced.push((r, c, v)),
                (true, false) => upper[c - n_r].push((r, v)),
                (false, true) => lower[r - n_r].push((c, v)),
                (false, false) => {
                    if r != c {
                        return Err(FactorError::Structure(format!(
                            "off-diagonal entry ({r},{c}) in the condensed block"
                        )));
                    }
                    diag[r - n_r] += v;
                }
            }
        }
        for i in 0..n_m {
            let d = diag[i];
            if d == 0.0 || !d.is_finite() {
                return Err(FactorError::Singular);
            }
            for &(r, a) in &upper[i] {
                for &(c, b) in &lower[i] {
                    reduced.push((r, c, -a * b / d));
                }
            }
        }
        if reg > 0.0 {
            for i in 0..n_r {
                reduced.push((i, i, if i < n_primal { reg } else { -reg }));
            }
        }
        let inner = match structure {
            KktStructure::Dense => {
                let lu = BandLu::factor(n_r, reduced).map_err(|_| FactorError::Singular)?;
                Inner::Band { lu, pos: (0..n_r).collect() }
            }
            KktStructure::Banded { order } => {
                if order.len() != n_r {
                    return Err(FactorError::Structure(format!(
                        "ordering has {} entries, expected {n_r}",
                        order.len()
                    )));
                }
                let mut pos = vec![usize::MAX; n_r];
                for (k, &i) in order.iter().enumerate() {
                    pos[i] = k;
                }
                if pos.contains(&usize::MAX) {
                    return Err(FactorError::Structure("ordering is not a permutation".into()));
                }
                let lu = BandLu::factor(n_r, reduced.into_iter().map(|(r, c, v)| (pos[r], pos[c], v)))
                    .map_err(|_| FactorError::Singular)?;
                Inner::Band { lu, pos }
            }
            KktStructure::Bordered { blocks, border } => {
                Inner::Bordered(BorderedLu::factor(n_r, &reduced, blocks, border)?)
            }
        };
        Ok(Self { n_r, diag, upper, lower, inner, regularized: reg > 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.n_r + self.diag.len()
    }

    pub fn regularized(&self) -> bool {
        self.regularized
    }

    /// Solves `J x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n_r = self.n_r;
        let (br, bm) = b.split_at_mut(n_r);
        for (i, col) in self.upper.iter().enumerate() {
            let t = bm[i] / self.diag[i];
            if t != 0.0 {
                for &(r, a) in col {
                    br[r] -= a * t;
                }
            }
        }
        match &self.inner {
            Inner::Band { lu, pos } => {
                let mut tmp = vec![0.0; n_r];
                for i in 0..n_r {
                    tmp[pos[i]] = br[i];
                }
                lu.solve_in_place(&mut tmp);
                for i in 0..n_r {
                    br[i] = tmp[pos[i]];
                }
            }
            Inner::Bordered(b) => b.solve_in_place(br),
        }
        for (i, row) in self.lower.iter().enumerate() {
            let mut s = bm[i];
            for &(c, v) in row {
                s -= v * br[c];
            }
            bm[i] = s / self.diag[i];
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    /// Column-wise solve of `J X = B`.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        x
    }
}

#[derive(Clone, Debug)]
struct BlockFactor {
    idx: Vec<usize>,
    lu: BandLu,
    /// Border-row coupling `E_k` (|C| × b).
    e: DMatrix<f64>,
    /// `D_k⁻¹ F_k` (b × |C|).
    x: DMatrix<f64>,
}

#[derive(Clone, Debug)]
struct BorderedLu {
    blocks: Vec<BlockFactor>,
    border: Vec<usize>,
    schur: BandLu,
}

#[derive(Clone, Copy)]
enum Slot {
    Unset,
    Block(usize, usize),
    Border(usize),
}

impl BorderedLu {
    fn factor(
        n: usize,
        entries: &[(usize, usize, f64)],
        blocks: &[Vec<usize>],
        border: &[usize],
    ) -> Result<Self, FactorError> {
        let mut slot = vec![Slot::Unset; n];
        for (k, b) in blocks.iter().enumerate() {
            for (l, &i) in b.iter().enumerate() {
                slot[i] = Slot::Block(k, l);
            }
        }
        for (l, &i) in border.iter().enumerate() {
            slot[i] = Slot::Border(l);
        }
        if slot.iter().any(|s| matches!(s, Slot::Unset)) {
            return Err(FactorError::Structure("bordered structure does not cover all unknowns".into()));
        }
        let nc = border.len();
        let mut d: Vec<DMatrix<f64>> = blocks.iter().map(|b| DMatrix::zeros(b.len(), b.len())).collect();
        let mut f: Vec<DMatrix<f64>> = blocks.iter().map(|b| DMatrix::zeros(b.len(), nc)).collect();
        let mut e: Vec<DMatrix<f64>> = blocks.iter().map(|b| DMatrix::zeros(nc, b.len())).collect();
        let mut s = DMatrix::<f64>::zeros(nc, nc);
        for &(r, c, v) in entries {
            match (slot[r], slot[c]) {
                (Slot::Block(k, i), Slot::Block(l, j)) => {
                    if k != l {
                        return Err(FactorError::Structure(format!("entry ({r},{c}) couples two blocks")));
                    }
                    d[k][(i, j)] += v;
                }
                (Slot::Block(k, i), Slot::Border(j)) => f[k][(i, j)] += v,
                (Slot::Border(i), Slot::Block(k, j)) => e[k][(i, j)] += v,
                (Slot::Border(i), Slot::Border(j)) => s[(i, j)] += v,
                _ => unreachable!(),
            }
        }
        let mut out = Vec::with_capacity(blocks.len());
        for (((idx, dk), fk), ek) in blocks.iter().zip(d).zip(f).zip(e) {
            let lu = BandLu::factor_dense(dk.nrows(), |i, j| dk[(i, j)]).map_err(|_| FactorError::Singular)?;
            let mut xk = fk;
            for mut col in xk.column_iter_mut() {
                lu.solve_in_place(col.as_mut_slice());
            }
            s -= &ek * &xk;
            out.push(BlockFactor { idx: idx.clone(), lu, e: ek, x: xk });
        }
        let schur = BandLu::factor_dense(nc, |i, j| s[(i, j)]).map_err(|_| FactorError::Singular)?;
        Ok(Self { blocks: out, border: border.to_vec(), schur })
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let mut rc: Vec<f64> = self.border.iter().map(|&i| b[i]).collect();
        let mut ys = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let mut y: Vec<f64> = blk.idx.iter().map(|&i| b[i]).collect();
            blk.lu.solve_in_place(&mut y);
            for i in 0..rc.len() {
                let mut acc = 0.0;
                for (j, yj) in y.iter().enumerate() {
                    acc += blk.e[(i, j)] * yj;
                }
                rc[i] -= acc;
            }
            ys.push(y);
        }
        self.schur.solve_in_place(&mut rc);
        for (&i, &v) in self.border.iter().zip(&rc) {
            b[i] = v;
        }
        for (blk, y) in self.blocks.iter().zip(ys) {
            for (l, &i) in blk.idx.iter().enumerate() {
                let mut v = y[l];
                for (j, xc) in rc.iter().enumerate() {
                    v -= blk.x[(l, j)] * xc;
                }
                b[i] = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_kkt(n_r: usize, n_m: usize, seed: u64) -> DMatrix<f64> {
        // deterministic pseudo-random fill
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let n = n_r + n_m;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n_r {
            for j in 0..n {
                m[(i, j)] = next();
            }
            m[(i, i)] += 4.0;
        }
        for i in n_r..n {
            for j in 0..n_r {
                m[(i, j)] = next();
            }
            m[(i, i)] = -1.0 - next().abs();
        }
        m
    }

    fn entries(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
        let mut v = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                v.push((i, j, m[(i, j)]));
            }
        }
        v
    }

    #[test]
    fn condensed_dense_solve() {
        let m = random_kkt(6, 3, 7);
        let f = KktFactor::factor(6, 3, entries(&m), &KktStructure::Dense, 4, 0.0).unwrap();
        let b = DVector::from_fn(9, |i, _| i as f64 - 3.0);
        let x = f.solve(&b);
        assert!((&m * x - b).amax() < 1e-12);
    }

    #[test]
    fn permuted_band_solve() {
        let m = random_kkt(5, 2, 3);
        let order = KktStructure::Banded { order: vec![4, 2, 0, 1, 3] };
        let f = KktFactor::factor(5, 2, entries(&m), &order, 3, 0.0).unwrap();
        let b = DVector::from_fn(7, |i, _| (i as f64).cos());
        assert!((&m * f.solve(&b) - b).amax() < 1e-12);
    }

    #[test]
    fn bordered_solve() {
        // two 2x2 blocks plus one border unknown, one condensed unknown
        let n_r = 5;
        let mut m = DMatrix::<f64>::zeros(6, 6);
        let blocks = vec![vec![0, 1], vec![2, 3]];
        let border = vec![4];
        for b in &blocks {
            for &i in b {
                for &j in b {
                    m[(i, j)] = if i == j { 3.0 } else { 0.4 };
                }
                m[(i, 4)] = 0.7;
                m[(4, i)] = -0.2;
            }
        }
        m[(4, 4)] = 2.0;
        m[(4, 5)] = 1.0;
        m[(5, 4)] = 0.5;
        m[(5, 5)] = -2.0;
        let f = KktFactor::factor(n_r, 1, entries(&m), &KktStructure::Bordered { blocks, border }, 4, 0.0)
            .unwrap();
        let b = DVector::from_fn(6, |i, _| 1.0 + i as f64);
        assert!((&m * f.solve(&b) - b).amax() < 1e-12);
    }

    #[test]
    fn bordered_rejects_cross_block_coupling() {
        let mut m = DMatrix::<f64>::identity(3, 3);
        m[(0, 1)] = 1.0;
        let s = KktStructure::Bordered { blocks: vec![vec![0], vec![1]], border: vec![2] };
        assert!(matches!(KktFactor::factor(3, 0, entries(&m), &s, 3, 0.0), Err(FactorError::Structure(_))));
    }
}
