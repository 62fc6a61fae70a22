//! Compressed-row sparse matrices and profile Cholesky factorization.

use crate::{Error, Result};

/// Row-compressed sparse matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from CSR arrays, validating the structural invariants.
    pub fn new(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != nrows + 1 || row_offsets[0] != 0 {
            return Err(Error::Precondition(
                "row_offsets must have nrows+1 entries starting at 0".into(),
            ));
        }
        if col_indices.len() != values.len() || *row_offsets.last().unwrap() != values.len() {
            return Err(Error::Precondition(
                "row_offsets, col_indices and values disagree in length".into(),
            ));
        }
        for r in 0..nrows {
            let (s, e) = (row_offsets[r], row_offsets[r + 1]);
            if e < s {
                return Err(Error::Precondition(format!(
                    "row_offsets decrease at row {r}"
                )));
            }
            let row = &col_indices[s..e];
            if row.iter().any(|&c| c >= ncols) {
                return Err(Error::Precondition(format!(
                    "column index out of range in row {r}"
                )));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Precondition(format!(
                    "columns not strictly increasing in row {r}"
                )));
            }
        }
        Ok(Self::from_raw_unchecked(
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        ))
    }

    pub(crate) fn from_raw_unchecked(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Duplicate entries are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        if let Some(&(r, c, _)) = sorted.iter().find(|&&(r, c, _)| r >= nrows || c >= ncols) {
            return Err(Error::Precondition(format!(
                "entry ({r},{c}) outside {nrows}x{ncols}"
            )));
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; nrows + 1];
        let mut cols = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_offsets[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..nrows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self::from_raw_unchecked(
            nrows,
            ncols,
            row_offsets,
            cols,
            vals,
        ))
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, |r| r.len());
        let triplets: Vec<_> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(move |(j, &v)| (i, j, v))
            })
            .collect();
        Self::from_triplets(rows.len(), ncols, &triplets).expect("dense input is in range")
    }

    pub fn identity(n: usize) -> Self {
        Self::from_raw_unchecked(n, n, (0..=n).collect(), (0..n).collect(), vec![1.0; n])
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.ncols,
                got: x.len(),
            });
        }
        if y.len() != self.nrows {
            return Err(Error::DimensionMismatch {
                expected: self.nrows,
                got: y.len(),
            });
        }
        for (r, yr) in y.iter_mut().enumerate() {
            let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
            *yr = self.col_indices[s..e]
                .iter()
                .zip(&self.values[s..e])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
        Ok(())
    }

    /// `A^T x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.nrows {
            return Err(Error::DimensionMismatch {
                expected: self.nrows,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xr;
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            let (rc, rv) = self.row(r);
            for (&c, &v) in rc.iter().zip(rv) {
                let k = next[c];
                cols[k] = r;
                vals[k] = v;
                next[c] += 1;
            }
        }
        Self::from_raw_unchecked(self.ncols, self.nrows, counts, cols, vals)
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::DimensionMismatch {
                expected: self.ncols,
                got: other.nrows,
            });
        }
        let mut acc = vec![0.0; other.ncols];
        let mut marker = vec![usize::MAX; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_offsets = Vec::with_capacity(self.nrows + 1);
        row_offsets.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for r in 0..self.nrows {
            touched.clear();
            let (ac, av) = self.row(r);
            for (&k, &a) in ac.iter().zip(av) {
                let (bc, bv) = other.row(k);
                for (&c, &b) in bc.iter().zip(bv) {
                    if marker[c] != r {
                        marker[c] = r;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                cols.push(c);
                vals.push(acc[c]);
            }
            row_offsets.push(cols.len());
        }
        Ok(Self::from_raw_unchecked(
            self.nrows,
            other.ncols,
            row_offsets,
            cols,
            vals,
        ))
    }

    /// `T A T` for diagonal `T` given as a vector.
    pub fn scale_symmetric(&self, t: &[f64]) -> SparseMatrix {
        let mut out = self.clone();
        for r in 0..self.nrows {
            let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
            for k in s..e {
                out.values[k] *= t[r] * t[self.col_indices[k]];
            }
        }
        out
    }

    /// Principal submatrix on `indices`, in the given order.
    ///
    /// `local_of(g)` must return the position of global index `g` in `indices`
    /// or `None` when `g` is not selected.
    pub fn principal_submatrix(
        &self,
        indices: impl ExactSizeIterator<Item = usize>,
        local_of: impl Fn(usize) -> Option<usize>,
    ) -> SparseMatrix {
        let n = indices.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for g in indices {
            entries.clear();
            let (rc, rv) = self.row(g);
            for (&c, &v) in rc.iter().zip(rv) {
                if let Some(lc) = local_of(c) {
                    entries.push((lc, v));
                }
            }
            entries.sort_unstable_by_key(|&(c, _)| c);
            for &(c, v) in &entries {
                cols.push(c);
                vals.push(v);
            }
            row_offsets.push(cols.len());
        }
        Self::from_raw_unchecked(n, n, row_offsets, cols, vals)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        (0..self.nrows).all(|r| {
            let (cols, vals) = self.row(r);
            cols.iter()
                .zip(vals)
                .all(|(&c, &v)| (self.get(c, r) - v).abs() <= tol * v.abs().max(1.0))
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        d
    }
}

/// `R A R^T`.
pub fn triple_product(r: &SparseMatrix, a: &SparseMatrix) -> Result<SparseMatrix> {
    if r.ncols() != a.nrows() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: r.ncols(),
        });
    }
    r.matmul(a)?.matmul(&r.transpose())
}

/// Cholesky factor `L` (with `A = L L^T`) stored by rows over the matrix
/// profile: row `i` holds `L[i, first[i]..=i]` contiguously.
///
/// Fill stays inside the envelope of the lower triangle, so banded and
/// curve-ordered matrices factor without reordering, and a full profile is
/// just dense Cholesky.
#[derive(Debug, Clone)]
pub struct Factorization {
    n: usize,
    first: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

/// Factorizes a symmetric positive-definite matrix. Only the lower triangle is read.
pub fn factorize(a: &SparseMatrix) -> Result<Factorization> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    let first: Vec<usize> = (0..n)
        .map(|i| a.row(i).0.first().copied().unwrap_or(i).min(i))
        .collect();
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0usize);
    for i in 0..n {
        offsets.push(offsets[i] + (i - first[i] + 1));
    }
    let mut data = vec![0.0; offsets[n]];
    for i in 0..n {
        let fi = first[i];
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            if c <= i {
                data[offsets[i] + c - fi] = v;
            }
        }
    }
    for i in 0..n {
        let fi = first[i];
        let (head, tail) = data.split_at_mut(offsets[i]);
        let row_i = &mut tail[..i - fi + 1];
        for j in fi..i {
            let fj = first[j];
            let row_j = &head[offsets[j]..offsets[j + 1]];
            let k0 = fi.max(fj);
            let dot: f64 = row_i[k0 - fi..j - fi]
                .iter()
                .zip(&row_j[k0 - fj..j - fj])
                .map(|(a, b)| a * b)
                .sum();
            row_i[j - fi] = (row_i[j - fi] - dot) / row_j[j - fj];
        }
        let sq: f64 = row_i[..i - fi].iter().map(|v| v * v).sum();
        let pivot = row_i[i - fi] - sq;
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { row: i, pivot });
        }
        row_i[i - fi] = pivot.sqrt();
    }
    Ok(Factorization {
        n,
        first,
        offsets,
        data,
    })
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of `L`.
    pub fn stored(&self) -> usize {
        self.data.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        for i in 0..self.n {
            let fi = self.first[i];
            let row = self.row(i);
            let dot: f64 = row[..i - fi]
                .iter()
                .zip(&x[fi..i])
                .map(|(l, y)| l * y)
                .sum();
            x[i] = (x[i] - dot) / row[i - fi];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = self.row(i);
            x[i] /= row[i - fi];
            let xi = x[i];
            for (xk, l) in x[fi..i].iter_mut().zip(&row[..i - fi]) {
                *xk -= l * xi;
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

pub fn solve(f: &Factorization, b: &[f64]) -> Result<Vec<f64>> {
    f.solve(b)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
