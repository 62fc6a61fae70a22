//! Outer iterations: damped Richardson, preconditioned CG and flexible CG.
//!
//! When the exact solution is known the energy error is tracked without an
//! extra product: with `e = x - x*` and `r = b - A x = -A e`,
//! `||e||_A^2 = -e^T r`.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::schwarz::Preconditioner;
use crate::sparse::{axpy, dot, norm2, SparseMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Richardson,
    Pcg,
    Fcg,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Richardson => "richardson",
            Method::Pcg => "pcg",
            Method::Fcg => "fcg",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "richardson" => Ok(Method::Richardson),
            "pcg" | "cg" => Ok(Method::Pcg),
            "fcg" => Ok(Method::Fcg),
            _ => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Damping {
    /// `xi = 2 / (lambda_min + lambda_max)` from an eigenvalue estimate.
    Optimal,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceKind {
    /// `||x^k - x*||_A <= tol ||x^0 - x*||_A`; needs the exact solution.
    EnergyErrorReduction,
    /// `||r^k|| <= tol ||r^0||`.
    RelativeResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub damping: Damping,
    pub tolerance: f64,
    pub tolerance_kind: ToleranceKind,
    pub max_iters: usize,
    pub seed: u64,
    /// Lanczos steps for eigenvalue estimates (capped at `N`).
    pub eig_iters: usize,
    /// Estimate extremal eigenvalues for CG methods too (reporting only).
    pub estimate_eigs: bool,
    /// Number of stored directions in flexible CG; `None` keeps all.
    pub fcg_window: Option<usize>,
    /// Run plain CG even if the preconditioner is flagged non-symmetric.
    pub force: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Pcg,
            damping: Damping::Optimal,
            tolerance: 1e-8,
            tolerance_kind: ToleranceKind::EnergyErrorReduction,
            max_iters: 10_000,
            seed: 42,
            eig_iters: 200,
            estimate_eigs: false,
            fcg_window: None,
            force: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub energy_error: Option<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: Method,
    pub iterations: usize,
    pub converged: bool,
    /// Entry `k` describes `x^k`; entry 0 is the initial iterate.
    pub history: Vec<IterationRecord>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub xi: Option<f64>,
    pub eig_time_s: f64,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub solution: Vec<f64>,
}

impl SolveReport {
    /// Observed contraction `err_k / err_{k-1}` of the tracked quantity.
    pub fn contraction_factors(&self) -> Vec<f64> {
        let vals: Vec<f64> = self
            .history
            .iter()
            .map(|h| h.energy_error.unwrap_or(h.residual))
            .collect();
        vals.windows(2).map(|w| w[1] / w[0]).collect()
    }

    /// Geometric mean contraction over the last `window` steps.
    pub fn asymptotic_rate(&self, window: usize) -> Option<f64> {
        let c = self.contraction_factors();
        if c.is_empty() {
            return None;
        }
        let tail = &c[c.len().saturating_sub(window)..];
        Some((tail.iter().map(|x| x.ln()).sum::<f64>() / tail.len() as f64).exp())
    }

    pub fn condition_number(&self) -> Option<f64> {
        Some(self.lambda_max? / self.lambda_min?)
    }

    /// One row per iteration: `k,energy_error,residual`.
    pub fn write_history_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "energy_error", "residual"])?;
        for h in &self.history {
            out.write_record([
                h.k.to_string(),
                h.energy_error.map(|e| format!("{e:e}")).unwrap_or_default(),
                format!("{:e}", h.residual),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Entries uniform on `[-1, 1]`, rescaled to `||x||_A = 1`.
pub fn initial_iterate(n: usize, seed: u64, a: &SparseMatrix) -> Result<Vec<f64>> {
    if a.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.nrows(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let norm = dot(&x, &a.matvec(&x)?).sqrt();
    x.iter_mut().for_each(|v| *v /= norm);
    Ok(x)
}

/// Doubles allowed for Lanczos basis storage before reorthogonalization is dropped.
const LANCZOS_BUDGET: usize = 1 << 25;

/// Dimension up to which the eigenvalues are computed densely.
pub const DENSE_EIG_LIMIT: usize = 300;

/// Extremal eigenvalues of `C^{-1} A` for symmetric `C^{-1}`.
///
/// Up to [`DENSE_EIG_LIMIT`] unknowns the full spectrum is computed densely;
/// beyond, Lanczos in the `A` inner product runs for `iters` steps (at most
/// `N`), with full reorthogonalization while the basis fits the memory budget.
pub fn estimate_extremal_eigs(
    a: &SparseMatrix,
    precond: &dyn Preconditioner,
    iters: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = a.nrows();
    if precond.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: precond.dim(),
        });
    }
    if n <= DENSE_EIG_LIMIT {
        let ev = dense_spectrum(a, precond)?;
        return Ok((ev[0], ev[ev.len() - 1]));
    }
    lanczos_extremes(a, precond, iters.min(n).max(1), seed)
}

/// Sorted eigenvalues of `C^{-1} A` via `L^T C^{-1} L` with `A = L L^T`.
pub fn dense_spectrum(a: &SparseMatrix, precond: &dyn Preconditioner) -> Result<Vec<f64>> {
    let n = a.nrows();
    let dense = a.to_dense();
    let am = DMatrix::from_fn(n, n, |i, j| dense[i][j]);
    let l = am
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { row: 0, pivot: 0.0 })?
        .l();
    let mut cl = DMatrix::zeros(n, n);
    for j in 0..n {
        let col: Vec<f64> = l.column(j).iter().copied().collect();
        let h = precond.apply(&col)?;
        cl.column_mut(j).copy_from_slice(&h);
    }
    let m = l.transpose() * cl;
    let sym = (&m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

fn tridiagonal_extremes(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let ev = SymmetricEigen::new(t).eigenvalues;
    (ev.min(), ev.max())
}

fn lanczos_extremes(
    a: &SparseMatrix,
    precond: &dyn Preconditioner,
    iters: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = a.nrows();
    let reorth = 2 * n * iters <= LANCZOS_BUDGET;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a9c);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let mut u = a.matvec(&v)?;
    let s = dot(&v, &u).sqrt();
    v.iter_mut().for_each(|x| *x /= s);
    u.iter_mut().for_each(|x| *x /= s);

    // basis vectors v_j and their images u_j = A v_j
    let mut basis: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let (mut alpha, mut beta): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut last = (f64::NAN, f64::NAN);
    for j in 0..iters {
        let mut w = precond.apply(&u)?;
        let a_j = dot(&w, &u);
        alpha.push(a_j);
        axpy(-a_j, &v, &mut w);
        if let (Some((pv, _)), Some(&b)) = (&prev, beta.last()) {
            axpy(-b, pv, &mut w);
        }
        if reorth {
            for (bv, bu) in basis.iter().map(|(x, y)| (x, y)).chain([(&v, &u)]) {
                let c = dot(&w, bu);
                axpy(-c, bv, &mut w);
            }
        }
        let mut aw = a.matvec(&w)?;
        let b2 = dot(&w, &aw);
        if j % 10 == 9 || j + 1 == iters || b2 <= 0.0 {
            let cur = tridiagonal_extremes(&alpha, &beta);
            let settled = |x: f64, y: f64| (x - y).abs() <= 1e-10 * y.abs();
            if settled(cur.0, last.0) && settled(cur.1, last.1) {
                return Ok(cur);
            }
            last = cur;
        }
        let b = b2.max(0.0).sqrt();
        if b <= 1e-12 * a_j.abs().max(1.0) || j + 1 == iters {
            return Ok(tridiagonal_extremes(&alpha, &beta));
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        aw.iter_mut().for_each(|x| *x /= b);
        let old = (std::mem::replace(&mut v, w), std::mem::replace(&mut u, aw));
        if reorth {
            basis.push(old.clone());
        }
        prev = Some(old);
    }
    Ok(tridiagonal_extremes(&alpha, &beta))
}

/// Shared bookkeeping of the three iterations.
struct Monitor<'a> {
    exact: Option<&'a [f64]>,
    kind: ToleranceKind,
    tol: f64,
    history: Vec<IterationRecord>,
    initial: f64,
    /// Fail once the tracked quantity exceeds 10x its initial value.
    guard_divergence: bool,
}

impl<'a> Monitor<'a> {
    /// CG residuals are not monotone, so only the stationary iteration sets `guard_divergence`.
    fn new(
        cfg: &SolverConfig,
        exact: Option<&'a [f64]>,
        n: usize,
        guard_divergence: bool,
    ) -> Result<Self> {
        if !(cfg.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                cfg.tolerance
            )));
        }
        if let Some(e) = exact {
            if e.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: e.len(),
                });
            }
        }
        if cfg.tolerance_kind == ToleranceKind::EnergyErrorReduction && exact.is_none() {
            return Err(Error::Config(
                "energy error reduction needs the exact solution; use relative_residual".into(),
            ));
        }
        Ok(Self {
            exact,
            kind: cfg.tolerance_kind,
            tol: cfg.tolerance,
            history: Vec::new(),
            initial: 0.0,
            guard_divergence,
        })
    }

    fn tracked(&self, rec: &IterationRecord) -> f64 {
        match self.kind {
            ToleranceKind::EnergyErrorReduction => rec.energy_error.unwrap_or(f64::NAN),
            ToleranceKind::RelativeResidual => rec.residual,
        }
    }

    /// Records `x^k`; returns `true` once the stopping criterion holds.
    fn record(&mut self, k: usize, x: &[f64], r: &[f64]) -> Result<bool> {
        let energy_error = self.exact.map(|xs| {
            let s: f64 = x
                .iter()
                .zip(xs)
                .zip(r)
                .map(|((xi, si), ri)| (xi - si) * ri)
                .sum();
            (-s).max(0.0).sqrt()
        });
        let rec = IterationRecord {
            k,
            energy_error,
            residual: norm2(r),
        };
        let val = self.tracked(&rec);
        self.history.push(rec);
        if k == 0 {
            self.initial = val;
            return Ok(val == 0.0);
        }
        if !val.is_finite() || (self.guard_divergence && val > 10.0 * self.initial) {
            return Err(Error::Diverged {
                iteration: k,
                ratio: val / self.initial,
            });
        }
        Ok(val <= self.tol * self.initial)
    }
}

fn residual(a: &SparseMatrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let mut r = a.matvec(x)?;
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    Ok(r)
}

fn check_dims(a: &SparseMatrix, b: &[f64], p: &dyn Preconditioner, x0: &[f64]) -> Result<()> {
    let n = a.nrows();
    for got in [a.ncols(), b.len(), p.dim(), x0.len()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    Ok(())
}

fn finish(
    method: Method,
    monitor: Monitor<'_>,
    converged: bool,
    x: Vec<f64>,
    eigs: Option<(f64, f64)>,
    xi: Option<f64>,
    eig_time_s: f64,
    start: Instant,
) -> SolveReport {
    SolveReport {
        method,
        iterations: monitor.history.len() - 1,
        converged,
        history: monitor.history,
        lambda_min: eigs.map(|e| e.0),
        lambda_max: eigs.map(|e| e.1),
        xi,
        eig_time_s,
        wall_time_s: start.elapsed().as_secs_f64(),
        solution: x,
    }
}

fn maybe_eigs(
    a: &SparseMatrix,
    precond: &dyn Preconditioner,
    cfg: &SolverConfig,
    needed: bool,
) -> Result<(Option<(f64, f64)>, f64)> {
    if !(needed || cfg.estimate_eigs) {
        return Ok((None, 0.0));
    }
    let t = Instant::now();
    let e = estimate_extremal_eigs(a, precond, cfg.eig_iters, cfg.seed)?;
    Ok((Some(e), t.elapsed().as_secs_f64()))
}

/// `x^{k+1} = x^k + xi C^{-1}(b - A x^k)`.
pub fn richardson(
    a: &SparseMatrix,
    b: &[f64],
    precond: &dyn Preconditioner,
    cfg: &SolverConfig,
    x0: &[f64],
    exact: Option<&[f64]>,
) -> Result<SolveReport> {
    check_dims(a, b, precond, x0)?;
    let optimal = cfg.damping == Damping::Optimal;
    if optimal && !precond.is_symmetric() && !cfg.force {
        return Err(Error::NonSymmetricPreconditioner);
    }
    let mut monitor = Monitor::new(cfg, exact, a.nrows(), true)?;
    let (eigs, eig_time) = maybe_eigs(a, precond, cfg, optimal)?;
    let xi = match cfg.damping {
        Damping::Optimal => {
            let (lo, hi) = eigs.expect("estimated above");
            2.0 / (lo + hi)
        }
        Damping::Fixed(xi) => xi,
    };
    let start = Instant::now();
    let mut x = x0.to_vec();
    let mut r = residual(a, b, &x)?;
    let mut done = monitor.record(0, &x, &r)?;
    let mut k = 0;
    while !done && k < cfg.max_iters {
        let z = precond.apply(&r)?;
        axpy(xi, &z, &mut x);
        r = residual(a, b, &x)?;
        k += 1;
        done = monitor.record(k, &x, &r)?;
    }
    Ok(finish(
        Method::Richardson,
        monitor,
        done,
        x,
        eigs,
        Some(xi),
        eig_time,
        start,
    ))
}

/// Preconditioned conjugate gradients; refuses non-symmetric preconditioners
/// unless `cfg.force` is set.
pub fn pcg(
    a: &SparseMatrix,
    b: &[f64],
    precond: &dyn Preconditioner,
    cfg: &SolverConfig,
    x0: &[f64],
    exact: Option<&[f64]>,
) -> Result<SolveReport> {
    check_dims(a, b, precond, x0)?;
    if !precond.is_symmetric() && !cfg.force {
        return Err(Error::NonSymmetricPreconditioner);
    }
    let mut monitor = Monitor::new(cfg, exact, a.nrows(), false)?;
    let (eigs, eig_time) = maybe_eigs(a, precond, cfg, false)?;
    let start = Instant::now();
    let mut x = x0.to_vec();
    let mut r = residual(a, b, &x)?;
    let mut done = monitor.record(0, &x, &r)?;
    let mut k = 0;
    if !done {
        let mut z = precond.apply(&r)?;
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while k < cfg.max_iters {
            let q = a.matvec(&p)?;
            let pq = dot(&p, &q);
            if pq <= 0.0 || !pq.is_finite() {
                return Err(Error::Breakdown(pq));
            }
            let alpha = rz / pq;
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &q, &mut r);
            k += 1;
            done = monitor.record(k, &x, &r)?;
            if done {
                break;
            }
            z = precond.apply(&r)?;
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.iter_mut()
                .zip(&z)
                .for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
    }
    Ok(finish(
        Method::Pcg,
        monitor,
        done,
        x,
        eigs,
        None,
        eig_time,
        start,
    ))
}

/// Flexible CG: each new direction is explicitly `A`-orthogonalized against
/// the stored previous directions (all of them, or the last `fcg_window`).
pub fn fcg(
    a: &SparseMatrix,
    b: &[f64],
    precond: &dyn Preconditioner,
    cfg: &SolverConfig,
    x0: &[f64],
    exact: Option<&[f64]>,
) -> Result<SolveReport> {
    check_dims(a, b, precond, x0)?;
    if cfg.fcg_window == Some(0) {
        return Err(Error::Config("fcg window must be at least 1".into()));
    }
    let mut monitor = Monitor::new(cfg, exact, a.nrows(), false)?;
    let (eigs, eig_time) = maybe_eigs(a, precond, cfg, false)?;
    let start = Instant::now();
    let mut x = x0.to_vec();
    let mut r = residual(a, b, &x)?;
    let mut done = monitor.record(0, &x, &r)?;
    let mut k = 0;
    // (p_j, A p_j, p_j^T A p_j)
    let mut dirs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    while !done && k < cfg.max_iters {
        let z = precond.apply(&r)?;
        let mut p = z.clone();
        for (pj, qj, pqj) in &dirs {
            axpy(-dot(&z, qj) / pqj, pj, &mut p);
        }
        let q = a.matvec(&p)?;
        let pq = dot(&p, &q);
        if pq <= 0.0 || !pq.is_finite() {
            return Err(Error::Breakdown(pq));
        }
        let alpha = dot(&r, &p) / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        k += 1;
        done = monitor.record(k, &x, &r)?;
        if let Some(m) = cfg.fcg_window {
            if dirs.len() == m {
                dirs.pop_front();
            }
        }
        dirs.push_back((p, q, pq));
    }
    Ok(finish(
        Method::Fcg,
        monitor,
        done,
        x,
        eigs,
        None,
        eig_time,
        start,
    ))
}

/// Dispatches on `cfg.method`.
pub fn solve(
    a: &SparseMatrix,
    b: &[f64],
    precond: &dyn Preconditioner,
    cfg: &SolverConfig,
    x0: &[f64],
    exact: Option<&[f64]>,
) -> Result<SolveReport> {
    match cfg.method {
        Method::Richardson => richardson(a, b, precond, cfg, x0, exact),
        Method::Pcg => pcg(a, b, precond, cfg, x0, exact),
        Method::Fcg => fcg(a, b, precond, cfg, x0, exact),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble_laplacian, symmetrize_diag, LevelVector};
    use crate::schwarz::{
        IdentityPreconditioner, SchwarzConfig, SchwarzOperator, Variant, Weighting,
    };

    fn laplacian(l: &[u32]) -> SparseMatrix {
        let a = assemble_laplacian(&LevelVector::new(l.to_vec()).unwrap()).unwrap();
        let n = a.nrows();
        symmetrize_diag(&a, &vec![0.0; n]).unwrap().matrix
    }

    fn op(
        a: &SparseMatrix,
        p: usize,
        variant: Variant,
        weighting: Weighting,
        gamma: f64,
        q: usize,
    ) -> SchwarzOperator {
        SchwarzOperator::build(
            a,
            p,
            SchwarzConfig {
                variant,
                weighting,
                gamma,
                q,
            },
        )
        .unwrap()
    }

    fn cfg(method: Method) -> SolverConfig {
        SolverConfig {
            method,
            ..Default::default()
        }
    }

    #[test]
    fn initial_iterate_is_unit_energy_and_seeded() {
        let a = laplacian(&[3, 3]);
        let x = initial_iterate(49, 7, &a).unwrap();
        let e = dot(&x, &a.matvec(&x).unwrap()).sqrt();
        assert!((e - 1.0).abs() < 1e-13);
        assert_eq!(x, initial_iterate(49, 7, &a).unwrap());
        assert_ne!(x, initial_iterate(49, 8, &a).unwrap());
    }

    #[test]
    fn identity_spectrum_is_one() {
        let a = SparseMatrix::identity(400);
        let (lo, hi) = estimate_extremal_eigs(&a, &IdentityPreconditioner(400), 50, 1).unwrap();
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_preconditioner_spectrum_is_one() {
        let a = laplacian(&[9]);
        let p = op(&a, 1, Variant::OneLevel, Weighting::None, 0.0, 1);
        let (lo, hi) = estimate_extremal_eigs(&a, &p, 50, 1).unwrap();
        assert!((lo - 1.0).abs() < 1e-10 && (hi - 1.0).abs() < 1e-10);
        let a = laplacian(&[6]);
        let p = op(&a, 1, Variant::OneLevel, Weighting::None, 0.0, 1);
        let (lo, hi) = estimate_extremal_eigs(&a, &p, 50, 1).unwrap();
        assert!((lo - 1.0).abs() < 1e-10 && (hi - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lanczos_matches_dense_spectrum() {
        let a = laplacian(&[6]);
        let p = op(&a, 4, Variant::AdditiveTwoLevel, Weighting::None, 0.5, 2);
        let ev = dense_spectrum(&a, &p).unwrap();
        let (lo, hi) = lanczos_extremes(&a, &p, 63, 3).unwrap();
        assert!((lo - ev[0]).abs() <= 0.01 * ev[0]);
        assert!((hi - ev[ev.len() - 1]).abs() <= 0.01 * ev[ev.len() - 1]);
    }

    #[test]
    fn converged_start_takes_no_iterations() {
        let a = laplacian(&[3, 2]);
        let n = a.nrows();
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let b = a.matvec(&xs).unwrap();
        let p = op(&a, 3, Variant::Balanced, Weighting::Omega, 0.5, 1);
        for m in [Method::Richardson, Method::Pcg, Method::Fcg] {
            let rep = solve(&a, &b, &p, &cfg(m), &xs, Some(&xs)).unwrap();
            assert_eq!(rep.iterations, 0);
            assert!(rep.converged);
        }
    }

    #[test]
    fn exact_preconditioner_richardson_one_step() {
        let a = laplacian(&[3, 3]);
        let n = a.nrows();
        let p = op(&a, 1, Variant::OneLevel, Weighting::None, 0.0, 1);
        let x0 = initial_iterate(n, 1, &a).unwrap();
        let c = SolverConfig {
            method: Method::Richardson,
            damping: Damping::Fixed(1.0),
            ..Default::default()
        };
        let rep = richardson(&a, &vec![0.0; n], &p, &c, &x0, Some(&vec![0.0; n])).unwrap();
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn unpreconditioned_cg_terminates() {
        let a = laplacian(&[3]);
        let x0 = initial_iterate(7, 2, &a).unwrap();
        let c = SolverConfig {
            tolerance: 1e-12,
            tolerance_kind: ToleranceKind::RelativeResidual,
            ..Default::default()
        };
        let rep = pcg(&a, &[1.0; 7], &IdentityPreconditioner(7), &c, &x0, None).unwrap();
        assert!(rep.converged && rep.iterations <= 7);
    }

    #[test]
    fn richardson_monotone_and_near_optimal_rate() {
        let a = laplacian(&[7]);
        let n = a.nrows();
        let p = op(&a, 4, Variant::Balanced, Weighting::Omega, 0.5, 4);
        let x0 = initial_iterate(n, 42, &a).unwrap();
        let zero = vec![0.0; n];
        let rep = richardson(&a, &zero, &p, &cfg(Method::Richardson), &x0, Some(&zero)).unwrap();
        assert!(rep.converged);
        let errs: Vec<f64> = rep
            .history
            .iter()
            .map(|h| h.energy_error.unwrap())
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]));
        let kappa = rep.condition_number().unwrap();
        let rho = 1.0 - 2.0 / (1.0 + kappa);
        assert!((rep.asymptotic_rate(20).unwrap() - rho).abs() <= 0.03);
    }

    #[test]
    fn pcg_beats_richardson_and_fcg_tracks_pcg() {
        let a = laplacian(&[4, 4]);
        let n = a.nrows();
        let p = op(&a, 6, Variant::Balanced, Weighting::Omega, 0.5, 2);
        let x0 = initial_iterate(n, 42, &a).unwrap();
        let zero = vec![0.0; n];
        let rich = richardson(&a, &zero, &p, &cfg(Method::Richardson), &x0, Some(&zero)).unwrap();
        let cg = pcg(&a, &zero, &p, &cfg(Method::Pcg), &x0, Some(&zero)).unwrap();
        let fc = fcg(&a, &zero, &p, &cfg(Method::Fcg), &x0, Some(&zero)).unwrap();
        assert!(cg.iterations <= rich.iterations);
        assert_eq!(cg.iterations, fc.iterations);
        for (h1, h2) in cg.history.iter().zip(&fc.history) {
            let (e1, e2) = (h1.energy_error.unwrap(), h2.energy_error.unwrap());
            assert!((e1 - e2).abs() <= 1e-10 * e1.max(1e-300) + 1e-14);
        }
    }

    #[test]
    fn nonsymmetric_preconditioner_needs_fcg() {
        let a = laplacian(&[5, 4]);
        let n = a.nrows();
        let p = op(&a, 8, Variant::Balanced, Weighting::DMatrix, 0.25, 2);
        let x0 = initial_iterate(n, 42, &a).unwrap();
        let zero = vec![0.0; n];
        assert_eq!(
            pcg(&a, &zero, &p, &cfg(Method::Pcg), &x0, Some(&zero)),
            Err(Error::NonSymmetricPreconditioner)
        );
        let rep = fcg(&a, &zero, &p, &cfg(Method::Fcg), &x0, Some(&zero)).unwrap();
        assert!(rep.converged);
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let a = laplacian(&[3, 4]);
        let n = a.nrows();
        let p = op(&a, 4, Variant::Balanced, Weighting::Omega, 0.5, 2);
        let zero = vec![0.0; n];
        let run = || {
            let x0 = initial_iterate(n, 42, &a).unwrap();
            richardson(&a, &zero, &p, &cfg(Method::Richardson), &x0, Some(&zero)).unwrap()
        };
        assert_eq!(run().history, run().history);
    }

    #[test]
    fn energy_criterion_needs_exact_solution() {
        let a = laplacian(&[3]);
        let r = pcg(
            &a,
            &[1.0; 7],
            &IdentityPreconditioner(7),
            &cfg(Method::Pcg),
            &[0.0; 7],
            None,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn too_large_damping_diverges() {
        let a = laplacian(&[5]);
        let n = a.nrows();
        let x0 = initial_iterate(n, 1, &a).unwrap();
        let zero = vec![0.0; n];
        let c = SolverConfig {
            damping: Damping::Fixed(3.0),
            ..cfg(Method::Richardson)
        };
        let r = richardson(&a, &zero, &IdentityPreconditioner(n), &c, &x0, Some(&zero));
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let a = laplacian(&[3]);
        let x0 = initial_iterate(7, 2, &a).unwrap();
        let zero = vec![0.0; 7];
        let rep = pcg(
            &a,
            &zero,
            &IdentityPreconditioner(7),
            &cfg(Method::Pcg),
            &x0,
            Some(&zero),
        )
        .unwrap();
        let mut buf = Vec::new();
        rep.write_history_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,energy_error,residual\n"));
        assert_eq!(text.lines().count(), rep.history.len() + 1);
    }
}
