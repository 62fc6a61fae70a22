//! Sparse-grid combination technique.
//!
//! The level-`L` combined solution in `d` dimensions is
//!
//! ```text
//! u_L(x) = sum_{i=0}^{d-1} (-1)^i binom(d-1, i) sum_{|l|_1 = L+d-1-i, l_j >= 1} u_l(x)
//! ```
//!
//! Each partial solution `u_l` is computed independently with the Schwarz
//! solver on `P = P_hat 2^(d-1-i)` subdomains and evaluated off-grid by
//! d-multilinear interpolation.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{num_dofs, symmetrize_diag, Grid, LevelVector, Problem};
use crate::krylov::{initial_iterate, solve, SolveReport, SolverConfig, ToleranceKind};
use crate::schwarz::{QRule, SchwarzConfig, SchwarzOperator, Variant, Weighting};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub index: usize,
    pub coefficient: i64,
    /// Requested number of subdomains, before feasibility clamping.
    pub subdomains: usize,
    pub levels: Vec<LevelVector>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinationPlan {
    pub dim: usize,
    pub level: u32,
    pub p_hat: usize,
    pub layers: Vec<Layer>,
}

impl CombinationPlan {
    pub fn num_subproblems(&self) -> usize {
        self.layers.iter().map(|l| l.levels.len()).sum()
    }

    /// Sum of requested subdomain counts over all subproblems.
    pub fn total_subdomains(&self) -> u128 {
        self.layers
            .iter()
            .map(|l| l.levels.len() as u128 * l.subdomains as u128)
            .sum()
    }
}

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

/// All `l` with `l_j >= 1` and `|l|_1 = total`, in lexicographic order.
fn compositions(dim: usize, total: u32) -> Vec<Vec<u32>> {
    fn rec(dim: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if dim == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 1..=total.saturating_sub(dim as u32 - 1) {
            prefix.push(first);
            rec(dim - 1, total - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if total >= dim as u32 {
        rec(dim, total, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

pub fn enumerate_plan(dim: usize, level: u32, p_hat: usize) -> Result<CombinationPlan> {
    if dim == 0 {
        return Err(Error::Precondition("dimension must be positive".into()));
    }
    if (level as usize) < dim {
        return Err(Error::Precondition(format!(
            "combination level L={level} must be at least d={dim}"
        )));
    }
    if p_hat == 0 {
        return Err(Error::Precondition("P_hat must be positive".into()));
    }
    let layers = (0..dim)
        .map(|i| {
            let total = level + (dim - 1 - i) as u32;
            let levels = compositions(dim, total)
                .into_iter()
                .map(LevelVector::new)
                .collect::<Result<Vec<_>>>()?;
            let sign = if i % 2 == 0 { 1 } else { -1 };
            let subdomains = p_hat
                .checked_shl((dim - 1 - i) as u32)
                .filter(|v| v >> (dim - 1 - i) == p_hat)
                .ok_or_else(|| Error::Overflow("P_hat 2^(d-1-i) exceeds usize".into()))?;
            Ok(Layer {
                index: i,
                coefficient: sign * binomial(dim as u64 - 1, i as u64) as i64,
                subdomains,
                levels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CombinationPlan {
        dim,
        level,
        p_hat,
        layers,
    })
}

/// `(P_hat/(d-1)!) sum_{k=0}^{d-1} 2^(d-1-k) prod_{i=1}^{d-1} (L+d-1-k-i)`.
pub fn subdomain_count_total(dim: usize, level: u32, p_hat: u64) -> Result<u128> {
    if dim == 0 || (level as usize) < dim {
        return Err(Error::Precondition(format!(
            "need 1 <= d <= L, got d={dim}, L={level}"
        )));
    }
    let (d, l) = (dim as u128, u128::from(level));
    let fact: u128 = (1..d).product();
    let sum: u128 = (0..d)
        .map(|k| {
            let prod: u128 = (1..d).map(|i| l + d - 1 - k - i).product();
            (1u128 << (d - 1 - k)) * prod
        })
        .sum();
    Ok(u128::from(p_hat) * sum / fact)
}

/// Values on the interior nodes of a level-`l` grid (lexicographic order),
/// extended by a constant boundary value and interpolated d-multilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    levels: LevelVector,
    values: Vec<f64>,
    boundary: f64,
    strides: Vec<usize>,
}

impl GridFunction {
    pub fn new(levels: LevelVector, values: Vec<f64>, boundary: f64) -> Result<Self> {
        let n = num_dofs(&levels)?;
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: values.len(),
            });
        }
        let d = levels.dim();
        let mut strides = vec![1usize; d];
        for j in (0..d.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * levels.points_on_axis(j + 1);
        }
        Ok(Self {
            levels,
            values,
            boundary,
            strides,
        })
    }

    /// Samples `f` on the interior nodes.
    pub fn interpolant(
        levels: LevelVector,
        f: impl Fn(&[f64]) -> f64,
        boundary: f64,
    ) -> Result<Self> {
        let n = num_dofs(&levels)?;
        let d = levels.dim();
        let mut x = vec![0.0; d];
        let mut values = Vec::with_capacity(n);
        let mut k = vec![1u64; d];
        for _ in 0..n {
            for j in 0..d {
                x[j] = k[j] as f64 * levels.mesh_width(j);
            }
            values.push(f(&x));
            for j in (0..d).rev() {
                if (k[j] as usize) < levels.points_on_axis(j) {
                    k[j] += 1;
                    break;
                }
                k[j] = 1;
            }
        }
        Self::new(levels, values, boundary)
    }

    pub fn levels(&self) -> &LevelVector {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at the node with 0-based axis indices `k` (`0` and `2^l_j` are boundary).
    fn node(&self, k: &[usize]) -> f64 {
        let mut lex = 0;
        for (j, &kj) in k.iter().enumerate() {
            if kj == 0 || kj > self.levels.points_on_axis(j) {
                return self.boundary;
            }
            lex += (kj - 1) * self.strides[j];
        }
        self.values[lex]
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.levels.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for j in 0..d {
            let cells = 1usize << self.levels.as_slice()[j];
            let s = (x[j].clamp(0.0, 1.0) * cells as f64).min(cells as f64);
            let k0 = (s.floor() as usize).min(cells - 1);
            base[j] = k0;
            frac[j] = s - k0 as f64;
        }
        let mut corner = vec![0usize; d];
        let mut acc = 0.0;
        for mask in 0u32..(1 << d) {
            let mut w = 1.0;
            for j in 0..d {
                let up = mask >> j & 1 == 1;
                corner[j] = base[j] + usize::from(up);
                w *= if up { frac[j] } else { 1.0 - frac[j] };
            }
            if w != 0.0 {
                acc += w * self.node(&corner);
            }
        }
        acc
    }
}

/// How the Schwarz-preconditioned solver is set up for one grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveSettings {
    pub variant: Variant,
    pub weighting: Weighting,
    pub gamma: f64,
    pub q_rule: QRule,
    /// Per-subdomain size exponent for [`QRule::SizeExponent`].
    pub size_exponent: Option<u32>,
    pub solver: SolverConfig,
    /// Start from the seeded random iterate instead of zero.
    pub random_start: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            variant: Variant::Balanced,
            weighting: Weighting::Omega,
            gamma: 0.5,
            q_rule: QRule::LogRatio,
            size_exponent: None,
            solver: SolverConfig {
                tolerance_kind: ToleranceKind::RelativeResidual,
                ..Default::default()
            },
            random_start: false,
        }
    }
}

/// Feasible `(P, gamma)` for `n` unknowns: `P <- max(1, min(P, N))`, and
/// `gamma <- 0` when `2 gamma + 1 > P`. The note describes any change.
pub fn clamp_parallelism(n: usize, p: usize, gamma: f64) -> (usize, f64, Option<String>) {
    let pc = p.min(n).max(1);
    let gc = if 2.0 * gamma + 1.0 > pc as f64 {
        0.0
    } else {
        gamma
    };
    let mut notes = Vec::new();
    if pc != p {
        notes.push(format!("P {p}->{pc}"));
    }
    if gc != gamma {
        notes.push(format!("gamma {gamma}->0"));
    }
    (pc, gc, (!notes.is_empty()).then(|| notes.join("; ")))
}

/// One solved grid.
#[derive(Debug, Clone)]
pub struct PartialSolution {
    pub levels: LevelVector,
    pub n: usize,
    /// Point count including boundary nodes, used for load accounting.
    pub n_with_boundary: u128,
    pub p_requested: usize,
    pub p: usize,
    pub gamma: f64,
    pub q: usize,
    pub clamp: Option<String>,
    pub setup_time_s: f64,
    pub solution: GridFunction,
    pub report: SolveReport,
}

/// Discretizes `problem`, solves the diagonally scaled system with the
/// Schwarz-preconditioned method and returns the solution in lexicographic
/// order. With `zero_solution` the discrete solution is known to be zero and
/// the energy error is tracked.
pub fn solve_problem(
    problem: &Problem,
    p: usize,
    settings: &SolveSettings,
    zero_solution: bool,
) -> Result<PartialSolution> {
    let t = Instant::now();
    let grid = Grid::new(problem.levels.clone())?;
    let n = grid.len();
    let (pc, gamma, clamp) = clamp_parallelism(n, p, settings.gamma);
    let q = settings.q_rule.resolve(n, pc, settings.size_exponent)?;
    let a = grid.laplacian();
    let b = grid.sample(problem.rhs.as_ref());
    let sys = symmetrize_diag(&a, &b)?;
    let op = SchwarzOperator::build(
        &sys.matrix,
        pc,
        SchwarzConfig {
            variant: settings.variant,
            weighting: settings.weighting,
            gamma,
            q,
        },
    )?;
    let x0 = if settings.random_start {
        initial_iterate(n, settings.solver.seed, &sys.matrix)?
    } else {
        vec![0.0; n]
    };
    let zeros = zero_solution.then(|| vec![0.0; n]);
    let setup_time_s = t.elapsed().as_secs_f64();
    let mut report = solve(
        &sys.matrix,
        &sys.rhs,
        &op,
        &settings.solver,
        &x0,
        zeros.as_deref(),
    )?;
    let x = sys.to_original(&report.solution);
    let mut lex = vec![0.0; n];
    for (pos, v) in x.iter().enumerate() {
        lex[grid.lex_of(pos)] = *v;
    }
    report.solution = Vec::new();
    let levels = problem.levels.clone();
    let n_with_boundary = levels
        .as_slice()
        .iter()
        .map(|&l| (1u128 << l) + 1)
        .product();
    Ok(PartialSolution {
        solution: GridFunction::new(levels.clone(), lex, 0.0)?,
        levels,
        n,
        n_with_boundary,
        p_requested: p,
        p: pc,
        gamma,
        q,
        clamp,
        setup_time_s,
        report,
    })
}

/// Coefficient-weighted sum of interpolated partial solutions.
#[derive(Debug, Clone)]
pub struct CombinedSolution {
    terms: Vec<(f64, GridFunction)>,
}

impl CombinedSolution {
    pub fn new(terms: Vec<(f64, GridFunction)>) -> Self {
        Self { terms }
    }

    pub fn terms(&self) -> &[(f64, GridFunction)] {
        &self.terms
    }

    /// Sums in term order, so results do not depend on scheduling.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.eval(x)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub layer: usize,
    pub coefficient: i64,
    pub partial: PartialSolution,
}

#[derive(Debug, Clone)]
pub struct CombinationRun {
    pub plan: CombinationPlan,
    pub subproblems: Vec<SubproblemResult>,
    pub combined: CombinedSolution,
}

impl CombinationRun {
    pub fn clamps(&self) -> Vec<(LevelVector, String)> {
        self.subproblems
            .iter()
            .filter_map(|s| {
                s.partial
                    .clamp
                    .clone()
                    .map(|c| (s.partial.levels.clone(), c))
            })
            .collect()
    }
}

/// Solves every subproblem of `plan` (concurrently) and combines the results.
/// `family` maps a level vector to its problem.
pub fn run_combination(
    plan: &CombinationPlan,
    family: impl Fn(LevelVector) -> Problem + Sync,
    settings: &SolveSettings,
) -> Result<CombinationRun> {
    let jobs: Vec<(usize, i64, usize, &LevelVector)> = plan
        .layers
        .iter()
        .flat_map(|layer| {
            layer
                .levels
                .iter()
                .map(move |l| (layer.index, layer.coefficient, layer.subdomains, l))
        })
        .collect();
    let outcomes: Vec<Result<SubproblemResult>> = jobs
        .par_iter()
        .map(|&(layer, coefficient, p, levels)| {
            let partial = solve_problem(&family(levels.clone()), p, settings, false)?;
            Ok(SubproblemResult {
                layer,
                coefficient,
                partial,
            })
        })
        .collect();
    let mut failures = Vec::new();
    let mut subproblems = Vec::with_capacity(outcomes.len());
    for (out, job) in outcomes.into_iter().zip(&jobs) {
        match out {
            Ok(s) => subproblems.push(s),
            Err(e) => failures.push((job.3.as_slice().to_vec(), e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Subproblems(failures));
    }
    let combined = CombinedSolution::new(
        subproblems
            .iter()
            .map(|s| (s.coefficient as f64, s.partial.solution.clone()))
            .collect(),
    );
    Ok(CombinationRun {
        plan: plan.clone(),
        subproblems,
        combined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampledError {
    pub max_abs: f64,
    pub rms: f64,
    pub samples: usize,
}

impl fmt::Display for SampledError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "max {:e}, rms {:e} over {} nodes",
            self.max_abs, self.rms, self.samples
        )
    }
}

/// Seeded uniform random interior nodes of the isotropic level-`level` grid.
pub fn sample_nodes(dim: usize, level: u32, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 1u64 << level;
    let h = 1.0 / m as f64;
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(1..m) as f64 * h).collect())
        .collect()
}

/// Max and RMS of `approx - exact` over [`sample_nodes`].
pub fn sampled_error(
    approx: impl Fn(&[f64]) -> f64,
    exact: impl Fn(&[f64]) -> f64,
    dim: usize,
    level: u32,
    sample_count: usize,
    seed: u64,
) -> Result<SampledError> {
    if sample_count == 0 {
        return Err(Error::Precondition("sample_count must be positive".into()));
    }
    let (mut max_abs, mut sq) = (0.0f64, 0.0);
    for x in sample_nodes(dim, level, sample_count, seed) {
        let e = (approx(&x) - exact(&x)).abs();
        max_abs = max_abs.max(e);
        sq += e * e;
    }
    Ok(SampledError {
        max_abs,
        rms: (sq / sample_count as f64).sqrt(),
        samples: sample_count,
    })
}
