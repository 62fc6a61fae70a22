//! Anisotropic tensor grids on `[0,1]^d` and finite-difference assembly.
//!
//! Only interior points are unknowns (homogeneous Dirichlet data is
//! eliminated). Every vector and matrix produced here is ordered by the
//! Hilbert key of its grid point, so that subdomains are index ranges.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::sfc::{self, CurveConfig};
use crate::sparse::SparseMatrix;
use crate::{Error, Result};

/// Per-axis refinement levels `l = (l_1, ..., l_d)`, mesh width `h_j = 2^-l_j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelVector(Vec<u32>);

impl LevelVector {
    pub fn new(levels: Vec<u32>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Precondition("level vector must be non-empty".into()));
        }
        if let Some(&l) = levels.iter().find(|&&l| l == 0 || l > 62) {
            return Err(Error::Precondition(format!("level {l} outside [1, 62]")));
        }
        Ok(Self(levels))
    }

    pub fn isotropic(dim: usize, level: u32) -> Result<Self> {
        Self::new(vec![level; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn max_level(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(1)
    }

    pub fn l1_norm(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn mesh_width(&self, axis: usize) -> f64 {
        (-(self.0[axis] as f64)).exp2()
    }

    /// Interior points along `axis`, `2^l - 1`.
    pub fn points_on_axis(&self, axis: usize) -> usize {
        (1usize << self.0[axis]) - 1
    }

    /// Curve resolution used to order this grid: the finest level.
    pub fn curve_config(&self) -> Result<CurveConfig> {
        CurveConfig::new(self.dim(), self.max_level())
    }
}

impl fmt::Display for LevelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        write!(f, "({})", parts.join(" "))
    }
}

/// Number of interior unknowns `prod_j (2^{l_j} - 1)`.
pub fn num_dofs(levels: &LevelVector) -> Result<usize> {
    levels.as_slice().iter().try_fold(1usize, |acc, &l| {
        let factor = if l < usize::BITS {
            Some((1usize << l) - 1)
        } else {
            None
        };
        factor
            .and_then(|f| acc.checked_mul(f))
            .ok_or_else(|| Error::Overflow(format!("dof count of {levels} overflows")))
    })
}

/// An interior grid with its Hilbert ordering.
///
/// `order[p]` is the lexicographic index (axis 0 slowest) of the point at curve
/// position `p`; `position` is the inverse permutation.
#[derive(Debug, Clone)]
pub struct Grid {
    levels: LevelVector,
    order: Vec<usize>,
    position: Vec<usize>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(levels: LevelVector) -> Result<Self> {
        let n = num_dofs(&levels)?;
        let d = levels.dim();
        let mut strides = vec![1usize; d];
        for j in (0..d.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * levels.points_on_axis(j + 1);
        }
        let cfg = levels.curve_config()?;
        let lmax = levels.max_level();
        let order: Vec<usize> = if d == 1 {
            (0..n).collect()
        } else {
            let mut keyed: Vec<(u128, usize)> = Vec::with_capacity(n);
            let mut coords = vec![0u64; d];
            for lex in 0..n {
                let mut rem = lex;
                for j in 0..d {
                    let k = rem / strides[j];
                    rem %= strides[j];
                    coords[j] = (k as u64) << (lmax - levels.as_slice()[j]);
                }
                keyed.push((sfc::encode(&coords, cfg)?.0, lex));
            }
            keyed.sort_unstable_by_key(|&(k, _)| k);
            keyed.into_iter().map(|(_, lex)| lex).collect()
        };
        let mut position = vec![0usize; n];
        for (p, &lex) in order.iter().enumerate() {
            position[lex] = p;
        }
        Ok(Self {
            levels,
            order,
            position,
            strides,
        })
    }

    pub fn levels(&self) -> &LevelVector {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Lexicographic index of curve position `p`.
    pub fn lex_of(&self, p: usize) -> usize {
        self.order[p]
    }

    /// Curve position of lexicographic index `lex`.
    pub fn position_of(&self, lex: usize) -> usize {
        self.position[lex]
    }

    /// 1-based multi-index of curve position `p`.
    pub fn multi_index(&self, p: usize) -> Vec<u64> {
        let mut rem = self.order[p];
        self.strides
            .iter()
            .map(|&s| {
                let k = rem / s;
                rem %= s;
                k as u64 + 1
            })
            .collect()
    }

    /// Coordinates in `(0,1)^d` of curve position `p`.
    pub fn point(&self, p: usize) -> Vec<f64> {
        self.multi_index(p)
            .iter()
            .enumerate()
            .map(|(j, &k)| k as f64 * self.levels.mesh_width(j))
            .collect()
    }

    /// Curve position of a 1-based multi-index.
    pub fn position_of_index(&self, k: &[u64]) -> usize {
        let lex: usize = k
            .iter()
            .zip(&self.strides)
            .map(|(&kj, &s)| (kj as usize - 1) * s)
            .sum();
        self.position[lex]
    }

    /// The `(2d+1)`-point stencil of `-Laplace` with rows in curve order.
    pub fn laplacian(&self) -> SparseMatrix {
        let d = self.levels.dim();
        let n = self.len();
        let inv_h2: Vec<f64> = (0..d)
            .map(|j| {
                let h = self.levels.mesh_width(j);
                1.0 / (h * h)
            })
            .collect();
        let diag: f64 = inv_h2.iter().map(|v| 2.0 * v).sum();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(n * (2 * d + 1));
        let mut vals = Vec::with_capacity(n * (2 * d + 1));
        row_offsets.push(0);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2 * d + 1);
        for p in 0..n {
            let lex = self.order[p];
            entries.clear();
            entries.push((p, diag));
            let mut rem = lex;
            for j in 0..d {
                let k = rem / self.strides[j];
                rem %= self.strides[j];
                if k > 0 {
                    entries.push((self.position[lex - self.strides[j]], -inv_h2[j]));
                }
                if k + 1 < self.levels.points_on_axis(j) {
                    entries.push((self.position[lex + self.strides[j]], -inv_h2[j]));
                }
            }
            entries.sort_unstable_by_key(|&(c, _)| c);
            for &(c, v) in &entries {
                cols.push(c);
                vals.push(v);
            }
            row_offsets.push(cols.len());
        }
        SparseMatrix::from_raw_unchecked(n, n, row_offsets, cols, vals)
    }

    /// Samples `f` at all interior points, in curve order.
    pub fn sample(&self, f: &(dyn Fn(&[f64]) -> f64 + Send + Sync)) -> Vec<f64> {
        (0..self.len()).map(|p| f(&self.point(p))).collect()
    }
}

/// Assembles the finite-difference Laplacian of `levels` in curve order.
pub fn assemble_laplacian(levels: &LevelVector) -> Result<SparseMatrix> {
    Ok(Grid::new(levels.clone())?.laplacian())
}

/// Result of the symmetric diagonal scaling `A^ = T A T`, `T = diag(A)^{-1/2}`.
#[derive(Debug, Clone)]
pub struct Symmetrized {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    /// Diagonal of `T`; map back with `x = T x^`.
    pub scaling: Vec<f64>,
}

impl Symmetrized {
    pub fn to_original(&self, xhat: &[f64]) -> Vec<f64> {
        xhat.iter().zip(&self.scaling).map(|(x, t)| x * t).collect()
    }

    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.scaling).map(|(x, t)| x / t).collect()
    }
}

pub fn symmetrize_diag(a: &SparseMatrix, b: &[f64]) -> Result<Symmetrized> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    let diag = a.diagonal();
    if let Some((i, &v)) = diag.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NotPositiveDefinite { row: i, pivot: v });
    }
    let t: Vec<f64> = diag.iter().map(|v| 1.0 / v.sqrt()).collect();
    let matrix = a.scale_symmetric(&t);
    let rhs = b.iter().zip(&t).map(|(b, t)| b * t).collect();
    Ok(Symmetrized {
        matrix,
        rhs,
        scaling: t,
    })
}

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `-Laplace u = f` on `[0,1]^d` with homogeneous Dirichlet data.
#[derive(Clone)]
pub struct Problem {
    pub levels: LevelVector,
    pub rhs: ScalarField,
    pub exact_solution: Option<ScalarField>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("levels", &self.levels)
            .field("has_exact_solution", &self.exact_solution.is_some())
            .finish()
    }
}

/// `u(x) = |x|_2 * prod_i sin(pi x_i)`.
pub fn manufactured_solution(x: &[f64]) -> f64 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    r * x.iter().map(|&v| (PI * v).sin()).product::<f64>()
}

/// `-Laplace u` for [`manufactured_solution`], in closed form.
pub fn manufactured_rhs(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sines: Vec<f64> = x.iter().map(|&v| (PI * v).sin()).collect();
    let g: f64 = sines.iter().product();
    let cross: f64 = (0..x.len())
        .map(|i| {
            let others: f64 = sines
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, s)| s)
                .product();
            x[i] / r * (PI * x[i]).cos() * others
        })
        .sum();
    -(g * (d - 1.0) / r + 2.0 * PI * cross - d * PI * PI * r * g)
}

pub fn manufactured_poisson(levels: LevelVector) -> Problem {
    Problem {
        levels,
        rhs: Arc::new(manufactured_rhs),
        exact_solution: Some(Arc::new(manufactured_solution)),
    }
}

/// Laplace problem with `f = 0`, whose solution is zero.
pub fn laplace_zero(levels: LevelVector) -> Problem {
    Problem {
        levels,
        rhs: Arc::new(|_| 0.0),
        exact_solution: Some(Arc::new(|_| 0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lv(l: &[u32]) -> LevelVector {
        LevelVector::new(l.to_vec()).unwrap()
    }

    #[test]
    fn dof_counts() {
        assert_eq!(num_dofs(&lv(&[3, 3])).unwrap(), 49);
        assert_eq!(num_dofs(&lv(&[2, 3])).unwrap(), 21);
        assert_eq!(num_dofs(&lv(&[1; 6])).unwrap(), 1);
        assert!(matches!(num_dofs(&lv(&[40, 40])), Err(Error::Overflow(_))));
        assert!(LevelVector::new(vec![0, 2]).is_err());
        assert!(LevelVector::new(vec![]).is_err());
    }

    #[test]
    fn one_d_laplacian() {
        let a = assemble_laplacian(&lv(&[2])).unwrap().to_dense();
        assert_eq!(
            a,
            vec![
                vec![32.0, -16.0, 0.0],
                vec![-16.0, 32.0, -16.0],
                vec![0.0, -16.0, 32.0]
            ]
        );
    }

    #[test]
    fn single_point_2d() {
        let a = assemble_laplacian(&lv(&[1, 1])).unwrap().to_dense();
        assert_eq!(a, vec![vec![16.0]]);
    }

    /// Hand-assembled 9x9 five-point stencil in lexicographic order.
    fn dense_oracle_2d_level2() -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; 9]; 9];
        for i in 0..3usize {
            for j in 0..3usize {
                let r = 3 * i + j;
                a[r][r] = 64.0;
                if i > 0 {
                    a[r][r - 3] = -16.0;
                }
                if i < 2 {
                    a[r][r + 3] = -16.0;
                }
                if j > 0 {
                    a[r][r - 1] = -16.0;
                }
                if j < 2 {
                    a[r][r + 1] = -16.0;
                }
            }
        }
        a
    }

    #[test]
    fn two_d_matches_dense_oracle_under_curve_permutation() {
        let g = Grid::new(lv(&[2, 2])).unwrap();
        let a = g.laplacian();
        let oracle = dense_oracle_2d_level2();
        let dense = a.to_dense();
        for p in 0..9 {
            for q in 0..9 {
                assert_eq!(dense[p][q], oracle[g.lex_of(p)][g.lex_of(q)]);
            }
        }
        assert!(a.is_symmetric(0.0));
        let row_sums = a.matvec(&[1.0; 9]).unwrap();
        assert!(row_sums.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn anisotropic_matrix_is_spd() {
        let a = assemble_laplacian(&lv(&[2, 3, 1])).unwrap();
        assert!(a.is_symmetric(0.0));
        crate::sparse::factorize(&a).unwrap();
    }

    #[test]
    fn symmetrize_identity_and_laplacian() {
        let id = SparseMatrix::identity(4);
        let s = symmetrize_diag(&id, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.matrix.to_dense(), id.to_dense());
        assert_eq!(s.scaling, vec![1.0; 4]);
        assert_eq!(s.rhs, vec![1.0, 2.0, 3.0, 4.0]);

        let a = assemble_laplacian(&lv(&[2])).unwrap();
        let s = symmetrize_diag(&a, &[0.0; 3]).unwrap();
        let expected = [[1.0, -0.5, 0.0], [-0.5, 1.0, -0.5], [0.0, -0.5, 1.0]];
        for (row, want) in s.matrix.to_dense().iter().zip(&expected) {
            for (x, y) in row.iter().zip(want) {
                assert!((x - y).abs() <= 1e-15);
            }
        }

        let a = assemble_laplacian(&lv(&[2, 3])).unwrap();
        let s = symmetrize_diag(&a, &vec![1.0; 21]).unwrap();
        assert!(s.matrix.is_symmetric(1e-15));
        for v in s.matrix.diagonal() {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetrize_rejects_nonpositive_diagonal() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 0.0)]).unwrap();
        assert!(matches!(
            symmetrize_diag(&a, &[1.0, 1.0]),
            Err(Error::NotPositiveDefinite { row: 1, .. })
        ));
    }

    #[test]
    fn manufactured_solution_vanishes_on_boundary() {
        for x in [[0.0, 0.3], [1.0, 0.7], [0.4, 0.0], [0.2, 1.0]] {
            assert!(manufactured_solution(&x).abs() < 1e-15);
        }
    }

    /// Second-order central difference Laplacian of the closed-form `u`.
    fn fd_minus_laplacian(x: &[f64], step: f64) -> f64 {
        let u0 = manufactured_solution(x);
        let mut lap = 0.0;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += step;
            xm[i] -= step;
            lap += (manufactured_solution(&xp) - 2.0 * u0 + manufactured_solution(&xm))
                / (step * step);
        }
        -lap
    }

    #[test]
    fn rhs_matches_finite_difference_oracle() {
        for d in 1..=4 {
            let x = vec![0.5; d];
            let f = manufactured_rhs(&x);
            let fd = fd_minus_laplacian(&x, 1e-5);
            assert_relative_eq!(f, fd, max_relative = 1e-6);
        }
        let x = [0.3, 0.8, 0.55];
        assert_relative_eq!(
            manufactured_rhs(&x),
            fd_minus_laplacian(&x, 1e-5),
            max_relative = 1e-6
        );
    }

    #[test]
    fn one_d_rhs_closed_form() {
        for &x in &[0.1, 0.37, 0.5, 0.9] {
            let expected = -(2.0 * PI * (PI * x).cos() - PI * PI * x * (PI * x).sin());
            assert_relative_eq!(manufactured_rhs(&[x]), expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn grid_positions_round_trip() {
        let g = Grid::new(lv(&[2, 3])).unwrap();
        for p in 0..g.len() {
            assert_eq!(g.position_of_index(&g.multi_index(p)), p);
            assert_eq!(g.position_of(g.lex_of(p)), p);
        }
    }
}
