//! Compressed-row matrices on the fixed mesh pattern and thin wrappers
//! around faer's sparse Cholesky.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{MatMut, Side};
use num_complex::Complex64 as C64;
use std::ops::{AddAssign, Mul};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("Cholesky factorisation failed: matrix not positive definite ({0})")]
    NotPositiveDefinite(String),
    #[error("symbolic analysis failed: {0}")]
    Symbolic(String),
}

pub trait Scalar: Copy + Default + AddAssign + Mul<Output = Self> + Send + Sync + 'static {
    fn conj(self) -> Self;
    fn abs2(self) -> f64;
}

impl Scalar for f64 {
    fn conj(self) -> Self {
        self
    }
    fn abs2(self) -> f64 {
        self * self
    }
}

impl Scalar for C64 {
    fn conj(self) -> Self {
        C64::conj(&self)
    }
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
}

/// Sparsity pattern shared by every operator on one mesh, plus the scatter
/// map from element-local entries to storage slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    /// For element e, `scatter[e * 576 + r * 24 + s]` is the slot of local entry (r, s).
    pub scatter: Vec<usize>,
}

impl Pattern {
    /// Builds the pattern from element DOF lists (24 DOFs per element).
    pub fn from_elements(n: usize, elements: &[[usize; 24]]) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for dofs in elements {
            for &r in dofs {
                rows[r].extend_from_slice(dofs);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col.extend_from_slice(row);
            row_ptr.push(col.len());
        }
        let mut scatter = Vec::with_capacity(elements.len() * 576);
        for dofs in elements {
            for &r in dofs {
                let slice = &col[row_ptr[r]..row_ptr[r + 1]];
                for &s in dofs {
                    let pos = slice.binary_search(&s).expect("entry in pattern");
                    scatter.push(row_ptr[r] + pos);
                }
            }
        }
        Self { n, row_ptr, col, scatter }
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    pub fn zeros<T: Scalar>(&self) -> Vec<T> {
        vec![T::default(); self.nnz()]
    }

}

/// Square CSR matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn from_pattern(p: &Pattern, val: Vec<T>) -> Self {
        Self { n: p.n, row_ptr: p.row_ptr.clone(), col: p.col.clone(), val }
    }

    pub fn mul_vec<V>(&self, x: &[V]) -> Vec<V>
    where
        V: Scalar + Mul<T, Output = V>,
    {
        let mut y = vec![V::default(); self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = V::default();
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += x[self.col[p]] * self.val[p];
            }
            *yi = s;
        }
        y
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let slice = &self.col[self.row_ptr[i]..self.row_ptr[i + 1]];
        match slice.binary_search(&j) {
            Ok(p) => self.val[self.row_ptr[i] + p],
            Err(_) => T::default(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.val.iter().map(|v| v.abs2()).sum::<f64>().sqrt()
    }

    /// max |a_ij - conj(a_ji)|.
    pub fn hermitian_defect(&self) -> f64
    where
        T: std::ops::Sub<Output = T>,
    {
        let mut d: f64 = 0.0;
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col[p];
                d = d.max((self.val[p] - self.get(j, i).conj()).abs2().sqrt());
            }
        }
        d
    }

    /// Symmetric removal of the listed DOFs (rows and columns), returning the
    /// reduced matrix and the kept-index map.
    pub fn without(&self, removed: &[usize]) -> (CsrMatrix<T>, Vec<usize>) {
        let mut new_index = vec![usize::MAX; self.n];
        let mut kept = Vec::with_capacity(self.n);
        for i in 0..self.n {
            if !removed.contains(&i) {
                new_index[i] = kept.len();
                kept.push(i);
            }
        }
        let mut row_ptr = vec![0];
        let mut col = Vec::new();
        let mut val = Vec::new();
        for &i in &kept {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = new_index[self.col[p]];
                if j != usize::MAX {
                    col.push(j);
                    val.push(self.val[p]);
                }
            }
            row_ptr.push(col.len());
        }
        (CsrMatrix { n: kept.len(), row_ptr, col, val }, kept)
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, T>, LinearSolveError>
    where
        T: faer::traits::ComplexField,
    {
        // Transposed storage: for a Hermitian matrix the lower triangle of the
        // column view is conj of our upper triangle, so store the conjugate.
        let sym = SymbolicSparseColMat::new_checked(self.n, self.n, self.row_ptr.clone(), None, self.col.clone());
        let val = self.val.iter().map(|v| v.conj()).collect();
        Ok(SparseColMat::new(sym, val))
    }
}

/// Sparse Cholesky factor of a Hermitian positive definite CSR matrix.
pub struct Cholesky<T: faer::traits::ComplexField> {
    llt: Llt<usize, T>,
    n: usize,
}

/// Reusable symbolic analysis for matrices on one pattern.
#[derive(Clone)]
pub struct SymbolicCholesky {
    symbolic: SymbolicLlt<usize>,
}

impl SymbolicCholesky {
    pub fn new<T: Scalar>(a: &CsrMatrix<T>) -> Result<Self, LinearSolveError> {
        let sym = SymbolicSparseColMat::new_checked(a.n, a.n, a.row_ptr.clone(), None, a.col.clone());
        let symbolic =
            SymbolicLlt::try_new(sym.as_ref(), Side::Lower).map_err(|e| LinearSolveError::Symbolic(format!("{e:?}")))?;
        Ok(Self { symbolic })
    }

    pub fn factor<T>(&self, a: &CsrMatrix<T>) -> Result<Cholesky<T>, LinearSolveError>
    where
        T: Scalar + faer::traits::ComplexField,
    {
        let m = a.to_faer()?;
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), m.as_ref(), Side::Lower)
            .map_err(|e| LinearSolveError::NotPositiveDefinite(format!("{e:?}")))?;
        Ok(Cholesky { llt, n: a.n })
    }
}

impl<T> Cholesky<T>
where
    T: Scalar + faer::traits::ComplexField,
{
    pub fn new(a: &CsrMatrix<T>) -> Result<Self, LinearSolveError> {
        let m = a.to_faer()?;
        let llt = m.sp_cholesky(Side::Lower).map_err(|e| LinearSolveError::NotPositiveDefinite(format!("{e:?}")))?;
        Ok(Self { llt, n: a.n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        self.llt.solve_in_place(MatMut::from_column_major_slice_mut(b, n, 1));
    }

    /// Solves several right-hand sides stored column-major in `b`.
    pub fn solve_many_in_place(&self, b: &mut [T], ncols: usize) {
        let n = self.n;
        self.llt.solve_in_place(MatMut::from_column_major_slice_mut(b, n, ncols));
    }
}

/// Builds a CSR matrix from triplets (duplicates summed). Used by tests and
/// small dense-checked cases.
pub fn csr_from_triplets<T: Scalar>(n: usize, t: &[(usize, usize, T)]) -> CsrMatrix<T> {
    let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
    for &(i, j, v) in t {
        rows[i].push((j, v));
    }
    let mut row_ptr = vec![0];
    let mut col = Vec::new();
    let mut val = Vec::new();
    for row in rows.iter_mut() {
        row.sort_by_key(|e| e.0);
        let mut k = 0;
        while k < row.len() {
            let j = row[k].0;
            let mut s = T::default();
            while k < row.len() && row[k].0 == j {
                s += row[k].1;
                k += 1;
            }
            col.push(j);
            val.push(s);
        }
        row_ptr.push(col.len());
    }
    CsrMatrix { n, row_ptr, col, val }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermitian_cholesky_solves() {
        let n = 4;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, C64::new(4.0, 0.0)));
        }
        t.push((1, 0, C64::new(0.5, 1.0)));
        t.push((0, 1, C64::new(0.5, -1.0)));
        t.push((3, 2, C64::new(0.0, -0.7)));
        t.push((2, 3, C64::new(0.0, 0.7)));
        let a = csr_from_triplets(n, &t);
        assert!(a.hermitian_defect() < 1e-15);
        let x: Vec<C64> = (0..n).map(|i| C64::new(i as f64 + 1.0, 0.3 * i as f64)).collect();
        let mut b = a.mul_vec(&x);
        Cholesky::new(&a).unwrap().solve_in_place(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn removal_keeps_order() {
        let t = vec![(0, 0, 2.0), (1, 1, 3.0), (2, 2, 4.0), (0, 2, 1.0), (2, 0, 1.0)];
        let a = csr_from_triplets(3, &t);
        let (r, kept) = a.without(&[1]);
        assert_eq!(kept, vec![0, 2]);
        assert_eq!(r.get(0, 1), 1.0);
        assert_eq!(r.get(1, 1), 4.0);
    }
}
