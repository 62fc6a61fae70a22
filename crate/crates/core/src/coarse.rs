//! Algebraic coarse space of piecewise constants over the disjoint subdomains.
//!
//! Each disjoint range is cut into `q` consecutive aggregates (sizes differ by
//! at most one); row `(i-1)q+m` of `R0` is the indicator of aggregate `m` of
//! subdomain `i`. The overlapped ranges play no role here.

use crate::partition::{disjoint_partition, Partition};
use crate::sparse::{factorize, triple_product, Factorization, SparseMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct CoarseSpace {
    q: usize,
    r0: SparseMatrix,
    a0: SparseMatrix,
    a0_factor: Factorization,
}

/// Builds `R0`, the Galerkin matrix `A0 = R0 A R0^T` and its factorization.
pub fn build_coarse(partition: &Partition, a: &SparseMatrix, q: usize) -> Result<CoarseSpace> {
    let n = partition.n();
    let p = partition.num_subdomains();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.nrows(),
        });
    }
    if q == 0 || q > n / p {
        return Err(Error::Precondition(format!(
            "coarse dofs per subdomain q={q} outside [1, floor(N/P)={}]",
            n / p
        )));
    }
    // every fine index lands in exactly one aggregate: R0 has one entry per column
    let mut row_offsets = Vec::with_capacity(q * p + 1);
    row_offsets.push(0);
    let mut cols = Vec::with_capacity(n);
    for own in partition.disjoint() {
        for piece in disjoint_partition(own.len(), q)? {
            cols.extend(own.start + piece.start..own.start + piece.end);
            row_offsets.push(cols.len());
        }
    }
    let vals = vec![1.0; cols.len()];
    let r0 = SparseMatrix::new(q * p, n, row_offsets, cols, vals)?;
    let a0 = triple_product(&r0, a)?;
    let a0_factor = factorize(&a0)?;
    Ok(CoarseSpace {
        q,
        r0,
        a0,
        a0_factor,
    })
}

impl CoarseSpace {
    pub fn q(&self) -> usize {
        self.q
    }

    /// Coarse dimension `N0 = q P`.
    pub fn dim(&self) -> usize {
        self.r0.nrows()
    }

    pub fn restriction(&self) -> &SparseMatrix {
        &self.r0
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.a0
    }

    pub fn factorization(&self) -> &Factorization {
        &self.a0_factor
    }

    /// `F v = R0^T A0^{-1} R0 v`.
    pub fn apply_f(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut c = self.r0.matvec(v)?;
        self.a0_factor.solve_in_place(&mut c)?;
        self.r0.matvec_transpose(&c)
    }

    /// Deflation operators bound to the fine matrix `a` this space was built from.
    pub fn deflation<'a>(&'a self, a: &'a SparseMatrix) -> Deflation<'a> {
        Deflation { coarse: self, a }
    }
}

/// `F = R0^T A0^{-1} R0`, `G = I - A F` and `G^T = I - F A`.
#[derive(Debug, Clone, Copy)]
pub struct Deflation<'a> {
    coarse: &'a CoarseSpace,
    a: &'a SparseMatrix,
}

impl Deflation<'_> {
    pub fn apply_f(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.coarse.apply_f(v)
    }

    pub fn apply_g(&self, v: &[f64]) -> Result<Vec<f64>> {
        let afv = self.a.matvec(&self.coarse.apply_f(v)?)?;
        Ok(v.iter().zip(&afv).map(|(x, y)| x - y).collect())
    }

    pub fn apply_gt(&self, v: &[f64]) -> Result<Vec<f64>> {
        let fav = self.coarse.apply_f(&self.a.matvec(v)?)?;
        Ok(v.iter().zip(&fav).map(|(x, y)| x - y).collect())
    }
}

pub fn deflation_ops<'a>(cs: &'a CoarseSpace, a: &'a SparseMatrix) -> Deflation<'a> {
    cs.deflation(a)
}
