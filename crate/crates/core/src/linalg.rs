//! Symmetric sparse matrices with a fixed pattern and their Cholesky factors.
//!
//! The pattern is fixed at construction so that the symbolic analysis (fill
//! reducing ordering and elimination tree) can be shared between every
//! refactorization with new values: one per mobility update for the fine
//! system, and one per block shape for the local systems.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Mat, MatMut, Side};

use crate::error::{Error, Result};

/// Lower triangle of a symmetric matrix in compressed-column form.
#[derive(Debug, Clone)]
pub struct SymmetricCsc {
    n: usize,
    symbolic: SymbolicSparseColMat<usize>,
    values: Vec<f64>,
}

impl SymmetricCsc {
    /// Builds the pattern from `(row, col)` positions; either triangle may be
    /// given, duplicates are merged and the diagonal is always present.
    pub fn from_positions(n: usize, positions: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut columns: Vec<Vec<usize>> = (0..n).map(|c| vec![c]).collect();
        for (r, c) in positions {
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            columns[c].push(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in &mut columns {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        let nnz = row_idx.len();
        Self {
            n,
            symbolic: SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx),
            values: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn clear(&mut self) {
        self.values.fill(0.0);
    }

    fn slot(&self, r: usize, c: usize) -> usize {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        let ptr = self.symbolic.col_ptr();
        let rows = &self.symbolic.row_idx()[ptr[c]..ptr[c + 1]];
        ptr[c]
            + rows
                .binary_search(&r)
                .unwrap_or_else(|_| panic!("({r}, {c}) is not in the pattern"))
    }

    /// Adds `v` at `(r, c)` (and implicitly at `(c, r)`).
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let s = self.slot(r, c);
        self.values[s] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        let ptr = self.symbolic.col_ptr();
        let rows = &self.symbolic.row_idx()[ptr[c]..ptr[c + 1]];
        rows.binary_search(&r)
            .map_or(0.0, |k| self.values[ptr[c] + k])
    }

    /// Replaces row and column `k` by the identity row, keeping the pattern.
    pub fn pin(&mut self, k: usize) {
        let ptr = self.symbolic.col_ptr().to_vec();
        let rows = self.symbolic.row_idx().to_vec();
        for c in 0..self.n {
            for s in ptr[c]..ptr[c + 1] {
                let r = rows[s];
                if r == k || c == k {
                    self.values[s] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
    }

    /// `y = A x` using both triangles.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        let ptr = self.symbolic.col_ptr();
        let rows = self.symbolic.row_idx();
        for c in 0..self.n {
            for s in ptr[c]..ptr[c + 1] {
                let r = rows[s];
                let v = self.values[s];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let ptr = self.symbolic.col_ptr();
        // the diagonal is the first entry of each sorted column
        (0..self.n).map(|c| self.values[ptr[c]]).collect()
    }

    /// Analyzes the pattern once for repeated factorizations.
    pub fn analyze(&self) -> Result<SymbolicLlt<usize>> {
        SymbolicLlt::try_new(self.symbolic.as_ref(), Side::Lower)
            .map_err(|e| Error::Numerical(format!("symbolic Cholesky analysis failed: {e:?}")))
    }

    /// Numerical factorization reusing `symbolic`, which must come from a
    /// matrix with the same pattern.
    pub fn factor(&self, symbolic: &SymbolicLlt<usize>) -> Result<CholeskyFactor> {
        let mat = SparseColMatRef::new(self.symbolic.as_ref(), &self.values);
        let llt = Llt::try_new_with_symbolic(symbolic.clone(), mat, Side::Lower).map_err(|e| {
            Error::Numerical(format!("Cholesky factorization of a {}x{} matrix failed: {e:?}", self.n, self.n))
        })?;
        Ok(CholeskyFactor { n: self.n, llt })
    }
}

/// Numerical `L L^T` factor.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    llt: Llt<usize, f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        debug_assert_eq!(rhs.len(), self.n);
        let mat = MatMut::from_column_major_slice_mut(rhs, self.n, 1);
        self.llt.solve_in_place(mat);
    }

    /// Solves for every column of `rhs` at once.
    pub fn solve_columns(&self, rhs: &mut Mat<f64>) {
        self.llt.solve_in_place(rhs.as_mut());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> SymmetricCsc {
        let mut a = SymmetricCsc::from_positions(n, (1..n).map(|i| (i, i - 1)));
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        a
    }

    #[test]
    fn solves_spd_system() {
        let a = laplacian_1d(20);
        let sym = a.analyze().unwrap();
        let f = a.factor(&sym).unwrap();
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; 20];
        a.mul_vec(&x, &mut b);
        f.solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn refactor_with_shared_symbolic() {
        let mut a = laplacian_1d(8);
        let sym = a.analyze().unwrap();
        a.add(3, 3, 5.0);
        let f = a.factor(&sym).unwrap();
        let mut b = vec![1.0; 8];
        f.solve_in_place(&mut b);
        let mut r = vec![0.0; 8];
        a.mul_vec(&b, &mut r);
        assert!(r.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn pinning_keeps_pattern() {
        // singular Neumann Laplacian becomes SPD after pinning
        let n = 5;
        let mut a = SymmetricCsc::from_positions(n, (1..n).map(|i| (i, i - 1)));
        for i in 1..n {
            a.add(i, i, 1.0);
            a.add(i - 1, i - 1, 1.0);
            a.add(i, i - 1, -1.0);
        }
        let sym = a.analyze().unwrap();
        a.pin(0);
        assert_eq!(a.get(1, 0), 0.0);
        assert!(a.factor(&sym).is_ok());
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = SymmetricCsc::from_positions(2, [(1, 0)]);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        let sym = a.analyze().unwrap();
        assert!(a.factor(&sym).is_err());
    }
}
