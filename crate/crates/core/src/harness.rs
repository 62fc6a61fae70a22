//! Experiment drivers: weak and strong scaling, overlap and dimension sweeps,
//! single solves and combination runs.
//!
//! Scaling experiments solve the Laplace problem with zero right-hand side, so
//! the discrete solution is zero and the energy error of the seeded random
//! start (scaled to `||x^0||_A = 1`) is tracked directly. Combination runs use
//! the manufactured Poisson problem with the relative residual criterion.
//!
//! Result tables hold only deterministic columns; wall-clock times go to a
//! separate timing table so that reruns with the same seed give byte-identical
//! result files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::combine::{
    enumerate_plan, run_combination, sampled_error, solve_problem, subdomain_count_total,
    SampledError, SolveSettings,
};
use crate::grid::{
    laplace_zero, manufactured_poisson, manufactured_solution, num_dofs, LevelVector,
};
use crate::krylov::{Damping, Method, SolveReport, SolverConfig, ToleranceKind};
use crate::schwarz::{QRule, Variant, Weighting};
use crate::sfc::{check_exhaustive, holder_bound, holder_estimate, CurveConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Weak,
    Strong,
    GammaSweep,
    DimSweep,
    Combine,
    Single,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Weak => "weak",
            ExperimentKind::Strong => "strong",
            ExperimentKind::GammaSweep => "gamma_sweep",
            ExperimentKind::DimSweep => "dim_sweep",
            ExperimentKind::Combine => "combine",
            ExperimentKind::Single => "single",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(
            match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
                "weak" | "weak_scale" => ExperimentKind::Weak,
                "strong" | "strong_scale" => ExperimentKind::Strong,
                "gamma_sweep" => ExperimentKind::GammaSweep,
                "dim_sweep" => ExperimentKind::DimSweep,
                "combine" => ExperimentKind::Combine,
                "single" | "solve" => ExperimentKind::Single,
                _ => return Err(Error::Config(format!("unknown experiment kind '{s}'"))),
            },
        )
    }
}

/// Full parameter set of an experiment. List-valued fields are swept as a
/// Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub dims: Vec<usize>,
    /// Per-subdomain size exponents `S` (weak scaling and sweeps).
    pub size_exponents: Vec<u32>,
    /// Total level `L` (strong scaling: `N = 2^L` in one dimension; combination level).
    pub levels_total: Vec<u32>,
    /// Explicit level vector for single solves.
    pub levels: Option<Vec<u32>>,
    pub subdomains: Vec<usize>,
    pub gammas: Vec<f64>,
    pub q_rule: QRule,
    pub methods: Vec<Method>,
    pub variants: Vec<Variant>,
    pub weightings: Vec<Weighting>,
    pub seed: u64,
    pub tolerance: f64,
    pub tolerance_kind: ToleranceKind,
    pub max_iters: usize,
    pub eig_iters: usize,
    /// Eigenvalue estimates for CG runs as well.
    pub estimate_eigs: bool,
    pub fcg_window: Option<usize>,
    pub force: bool,
    /// Combination: `P_hat`; `None` means `max(1, 2^(L-8))`.
    pub p_hat: Option<usize>,
    pub samples: usize,
    /// Combination: also solve the full grid of level `L` for comparison.
    pub full_grid: bool,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

fn pow2_range(lo: usize, hi: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut p = lo.max(1).next_power_of_two();
    while p <= hi {
        v.push(p);
        p *= 2;
    }
    v
}

impl ExperimentSpec {
    /// Defaults mirroring the reference experiment for each kind.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            kind,
            dims: vec![1],
            size_exponents: vec![8],
            levels_total: vec![16],
            levels: None,
            subdomains: pow2_range(2, 256),
            gammas: vec![0.5],
            q_rule: QRule::SizeExponent,
            methods: vec![Method::Richardson, Method::Pcg],
            variants: vec![Variant::Balanced],
            weightings: vec![Weighting::Omega],
            seed: 42,
            tolerance: 1e-8,
            tolerance_kind: ToleranceKind::EnergyErrorReduction,
            max_iters: 10_000,
            eig_iters: 200,
            estimate_eigs: false,
            fcg_window: None,
            force: false,
            p_hat: None,
            samples: 1000,
            full_grid: false,
            out: None,
            jobs: None,
        };
        match kind {
            ExperimentKind::Weak => base,
            ExperimentKind::Strong => Self {
                q_rule: QRule::LogRatio,
                ..base
            },
            ExperimentKind::GammaSweep => Self {
                gammas: vec![0.2, 0.25, 0.5, 1.0, 1.5, 2.0, 5.0],
                q_rule: QRule::Fixed(16),
                ..base
            },
            ExperimentKind::DimSweep => Self {
                dims: (1..=6).collect(),
                ..base
            },
            ExperimentKind::Single => Self {
                dims: vec![2],
                levels: Some(vec![3, 3]),
                subdomains: vec![4],
                methods: vec![Method::Pcg],
                q_rule: QRule::LogRatio,
                ..base
            },
            ExperimentKind::Combine => Self {
                dims: vec![2],
                levels_total: vec![6],
                subdomains: vec![],
                methods: vec![Method::Pcg],
                q_rule: QRule::LogRatio,
                tolerance_kind: ToleranceKind::RelativeResidual,
                ..base
            },
        }
    }

    /// Applies `key = value` settings on top of the current values.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("invalid value '{value}' for {what}"));
        match key.as_str() {
            "kind" => self.kind = value.parse()?,
            "dims" | "dim" | "d" => self.dims = parse_list(value, &key)?,
            "s" | "size_exponent" | "size_exponents" => {
                self.size_exponents = parse_list(value, &key)?
            }
            "level" | "l_total" | "levels_total" => self.levels_total = parse_list(value, &key)?,
            "levels" => {
                let l: Vec<u32> = parse_list(value, &key)?;
                self.dims = vec![l.len()];
                self.levels = Some(l);
            }
            "p" | "subdomains" => self.subdomains = parse_subdomains(value)?,
            "gamma" | "gammas" => self.gammas = parse_list(value, &key)?,
            "q" | "q_rule" => self.q_rule = value.parse()?,
            "method" | "methods" | "solver" => self.methods = parse_list(value, &key)?,
            "variant" | "variants" => self.variants = parse_list(value, &key)?,
            "weighting" | "weightings" => self.weightings = parse_list(value, &key)?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "tol" | "tolerance" => self.tolerance = value.parse().map_err(|_| bad("tolerance"))?,
            "tol_kind" | "tolerance_kind" => {
                self.tolerance_kind = match value.to_ascii_lowercase().replace('-', "_").as_str() {
                    "energy" | "energy_error_reduction" => ToleranceKind::EnergyErrorReduction,
                    "residual" | "relative_residual" => ToleranceKind::RelativeResidual,
                    _ => return Err(bad("tolerance_kind")),
                }
            }
            "max_iters" => self.max_iters = value.parse().map_err(|_| bad("max_iters"))?,
            "eig_iters" => self.eig_iters = value.parse().map_err(|_| bad("eig_iters"))?,
            "eigs" | "estimate_eigs" => self.estimate_eigs = parse_bool(value)?,
            "fcg_window" => {
                self.fcg_window = match value {
                    "" | "none" | "unlimited" => None,
                    v => Some(v.parse().map_err(|_| bad("fcg_window"))?),
                }
            }
            "force" => self.force = parse_bool(value)?,
            "phat" | "p_hat" => {
                self.p_hat = match value {
                    "" | "auto" => None,
                    v => Some(v.parse().map_err(|_| bad("phat"))?),
                }
            }
            "samples" => self.samples = value.parse().map_err(|_| bad("samples"))?,
            "full_grid" => self.full_grid = parse_bool(value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "jobs" => self.jobs = Some(value.parse().map_err(|_| bad("jobs"))?),
            _ => return Err(Error::Config(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }

    /// Spec for `kind` from a key-value config text followed by overrides.
    pub fn from_settings(
        kind: ExperimentKind,
        config_text: Option<&str>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut spec = Self::defaults(kind);
        if let Some(text) = config_text {
            for (k, v) in parse_config(text)? {
                if k != "kind" {
                    spec.apply(&k, &v)?;
                }
            }
        }
        for (k, v) in overrides {
            spec.apply(k, v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("{name} list is empty")))
            } else {
                Ok(())
            }
        };
        empty("dims", self.dims.len())?;
        empty("methods", self.methods.len())?;
        empty("variants", self.variants.len())?;
        empty("weightings", self.weightings.len())?;
        empty("gamma", self.gammas.len())?;
        if self.kind != ExperimentKind::Combine {
            empty("P", self.subdomains.len())?;
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.dims.contains(&0) || self.subdomains.contains(&0) {
            return Err(Error::Config("dimensions and P must be positive".into()));
        }
        if self.gammas.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Config("gamma must be non-negative".into()));
        }
        Ok(())
    }

    fn solver_config(&self, method: Method) -> SolverConfig {
        SolverConfig {
            method,
            damping: Damping::Optimal,
            tolerance: self.tolerance,
            tolerance_kind: self.tolerance_kind,
            max_iters: self.max_iters,
            seed: self.seed,
            eig_iters: self.eig_iters,
            estimate_eigs: self.estimate_eigs,
            fcg_window: self.fcg_window,
            force: self.force,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_bool(v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{v}'"))),
    }
}

fn parse_list<T: FromStr>(v: &str, what: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("invalid entry '{s}' for {what}")))
        })
        .collect()
}

/// Comma-separated list; `a..b` expands to the powers of two in `[a, b]`.
fn parse_subdomains(v: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a = a
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid P range '{part}'")))?;
            let b = b
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid P range '{part}'")))?;
            out.extend(pow2_range(a, b));
        } else {
            out.push(
                part.parse()
                    .map_err(|_| Error::Config(format!("invalid P '{part}'")))?,
            );
        }
    }
    Ok(out)
}

/// Isotropic level `floor((S + log2 P) / d)` used by the weak-scaling studies.
pub fn weak_scaling_level(dim: usize, s: u32, p: usize) -> u32 {
    let total = f64::from(s) + (p as f64).log2();
    (total / dim as f64 + 1e-12).floor() as u32
}

/// One result row; every row carries the full parameter tuple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub experiment: String,
    pub d: usize,
    pub levels: String,
    pub s: Option<u32>,
    pub level_total: Option<u32>,
    pub n: Option<usize>,
    pub p: usize,
    pub gamma: f64,
    pub q_rule: String,
    pub q: Option<usize>,
    pub variant: String,
    pub weighting: String,
    pub method: String,
    pub seed: u64,
    pub tolerance: f64,
    pub status: String,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub row: usize,
    pub setup_s: f64,
    pub eig_s: f64,
    pub solve_s: f64,
}

/// A single solve of the zero-solution Laplace problem.
#[derive(Debug, Clone)]
pub struct Case {
    pub experiment: ExperimentKind,
    pub levels: LevelVector,
    pub s: Option<u32>,
    pub level_total: Option<u32>,
    pub p: usize,
    pub gamma: f64,
    pub q_rule: QRule,
    pub variant: Variant,
    pub weighting: Weighting,
    pub method: Method,
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub row: RunRow,
    pub timing: TimingRow,
    pub report: Option<SolveReport>,
}

pub fn run_case(case: &Case, spec: &ExperimentSpec) -> CaseOutcome {
    let mut row = RunRow {
        experiment: case.experiment.to_string(),
        d: case.levels.dim(),
        levels: case.levels.to_string(),
        s: case.s,
        level_total: case.level_total,
        n: num_dofs(&case.levels).ok(),
        p: case.p,
        gamma: case.gamma,
        q_rule: case.q_rule.to_string(),
        q: None,
        variant: case.variant.to_string(),
        weighting: case.weighting.to_string(),
        method: case.method.to_string(),
        seed: spec.seed,
        tolerance: spec.tolerance,
        status: "ok".into(),
        iterations: None,
        converged: None,
        lambda_min: None,
        lambda_max: None,
        note: String::new(),
    };
    let mut timing = TimingRow {
        row: 0,
        setup_s: 0.0,
        eig_s: 0.0,
        solve_s: 0.0,
    };
    let skip = |row: &mut RunRow, why: String| {
        row.status = "skipped".into();
        row.note = why;
    };
    let Some(n) = row.n else {
        skip(&mut row, "grid too large".into());
        return CaseOutcome {
            row,
            timing,
            report: None,
        };
    };
    if case.p > n {
        skip(&mut row, format!("P={} exceeds N={n}", case.p));
        return CaseOutcome {
            row,
            timing,
            report: None,
        };
    }
    if 2.0 * case.gamma + 1.0 > case.p as f64 {
        skip(&mut row, format!("2*gamma+1 > P for gamma={}", case.gamma));
        return CaseOutcome {
            row,
            timing,
            report: None,
        };
    }
    match case.q_rule.resolve(n, case.p, case.s) {
        Ok(q) => row.q = Some(q),
        Err(e) => {
            skip(&mut row, e.to_string());
            return CaseOutcome {
                row,
                timing,
                report: None,
            };
        }
    }
    let settings = SolveSettings {
        variant: case.variant,
        weighting: case.weighting,
        gamma: case.gamma,
        q_rule: case.q_rule,
        size_exponent: case.s,
        solver: spec.solver_config(case.method),
        random_start: true,
    };
    let problem = laplace_zero(case.levels.clone());
    let zero = spec.tolerance_kind == ToleranceKind::EnergyErrorReduction;
    match solve_problem(&problem, case.p, &settings, zero) {
        Ok(part) => {
            row.iterations = Some(part.report.iterations);
            row.converged = Some(part.report.converged);
            row.lambda_min = part.report.lambda_min;
            row.lambda_max = part.report.lambda_max;
            if !part.report.converged {
                row.note = format!("max_iters={} reached", spec.max_iters);
            }
            timing.setup_s = part.setup_time_s;
            timing.eig_s = part.report.eig_time_s;
            timing.solve_s = part.report.wall_time_s;
            CaseOutcome {
                row,
                timing,
                report: Some(part.report),
            }
        }
        Err(e) => {
            row.status = "failed".into();
            row.note = e.to_string();
            CaseOutcome {
                row,
                timing,
                report: None,
            }
        }
    }
}

/// Cases of a scaling or sweep experiment in output order.
pub fn enumerate_cases(spec: &ExperimentSpec) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    let mut push = |levels: LevelVector, s: Option<u32>, lt: Option<u32>, p: usize| {
        for &gamma in &spec.gammas {
            for &variant in &spec.variants {
                for &weighting in &spec.weightings {
                    for &method in &spec.methods {
                        cases.push(Case {
                            experiment: spec.kind,
                            levels: levels.clone(),
                            s,
                            level_total: lt,
                            p,
                            gamma,
                            q_rule: spec.q_rule,
                            variant,
                            weighting,
                            method,
                        });
                    }
                }
            }
        }
    };
    match spec.kind {
        ExperimentKind::Weak | ExperimentKind::GammaSweep | ExperimentKind::DimSweep => {
            for &d in &spec.dims {
                for &s in &spec.size_exponents {
                    for &p in &spec.subdomains {
                        let l = weak_scaling_level(d, s, p);
                        if l == 0 {
                            return Err(Error::Config(format!(
                                "S={s}, P={p} gives level 0 in d={d}"
                            )));
                        }
                        push(LevelVector::isotropic(d, l)?, Some(s), None, p);
                    }
                }
            }
        }
        ExperimentKind::Strong => {
            for &d in &spec.dims {
                for &lt in &spec.levels_total {
                    let l = lt / d as u32;
                    if l == 0 {
                        return Err(Error::Config(format!("L={lt} gives level 0 in d={d}")));
                    }
                    let levels = LevelVector::isotropic(d, l)?;
                    for &p in &spec.subdomains {
                        push(levels.clone(), None, Some(lt), p);
                    }
                }
            }
        }
        ExperimentKind::Single => {
            let l = spec
                .levels
                .clone()
                .ok_or_else(|| Error::Config("single solve needs levels".into()))?;
            let levels = LevelVector::new(l)?;
            for &p in &spec.subdomains {
                push(levels.clone(), None, None, p);
            }
        }
        ExperimentKind::Combine => {
            return Err(Error::Config(
                "combination runs have no scaling cases".into(),
            ))
        }
    }
    Ok(cases)
}

/// Spread statistics of iteration counts over `P >= p_min`, per parameter group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlateauStats {
    pub group: String,
    pub p_min: usize,
    pub count: usize,
    pub min_iterations: usize,
    pub max_iterations: usize,
    /// `(max - min) / min`.
    pub spread: f64,
}

pub fn plateau_stats(rows: &[RunRow], p_min: usize) -> Vec<PlateauStats> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in rows {
        if r.status != "ok" || r.p < p_min || r.converged != Some(true) {
            continue;
        }
        let key = format!(
            "d={} s={:?} L={:?} gamma={} q={} {} {} {}",
            r.d, r.s, r.level_total, r.gamma, r.q_rule, r.variant, r.weighting, r.method
        );
        groups.entry(key).or_default().extend(r.iterations);
    }
    groups
        .into_iter()
        .map(|(group, its)| {
            let lo = *its.iter().min().expect("non-empty group");
            let hi = *its.iter().max().expect("non-empty group");
            PlateauStats {
                group,
                p_min,
                count: its.len(),
                min_iterations: lo,
                max_iterations: hi,
                spread: (hi - lo) as f64 / lo.max(1) as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<RunRow>,
    pub timings: Vec<TimingRow>,
    pub reports: Vec<Option<SolveReport>>,
}

impl ExperimentResult {
    pub fn plateaus(&self) -> Vec<PlateauStats> {
        plateau_stats(&self.rows, 32)
    }
}

/// Runs all cases sequentially.
pub fn run_cases(spec: &ExperimentSpec, cases: &[Case]) -> ExperimentResult {
    let mut res = ExperimentResult {
        rows: Vec::with_capacity(cases.len()),
        timings: Vec::with_capacity(cases.len()),
        reports: Vec::with_capacity(cases.len()),
    };
    for (i, case) in cases.iter().enumerate() {
        let mut out = run_case(case, spec);
        out.timing.row = i;
        res.rows.push(out.row);
        res.timings.push(out.timing);
        res.reports.push(out.report);
    }
    res
}

fn expect_kind(spec: &ExperimentSpec, kinds: &[ExperimentKind]) -> Result<()> {
    if kinds.contains(&spec.kind) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "spec kind {} not valid here",
            spec.kind
        )))
    }
}

pub fn run_weak_scaling(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    expect_kind(spec, &[ExperimentKind::Weak, ExperimentKind::DimSweep])?;
    Ok(run_cases(spec, &enumerate_cases(spec)?))
}

pub fn run_dim_sweep(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    expect_kind(spec, &[ExperimentKind::DimSweep])?;
    Ok(run_cases(spec, &enumerate_cases(spec)?))
}

pub fn run_strong_scaling(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    expect_kind(spec, &[ExperimentKind::Strong])?;
    Ok(run_cases(spec, &enumerate_cases(spec)?))
}

pub fn run_gamma_sweep(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    expect_kind(spec, &[ExperimentKind::GammaSweep])?;
    Ok(run_cases(spec, &enumerate_cases(spec)?))
}

/// One solve (the first enumerated case) with its full history.
pub fn run_single(spec: &ExperimentSpec) -> Result<(RunRow, SolveReport)> {
    expect_kind(spec, &[ExperimentKind::Single])?;
    let case = enumerate_cases(spec)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config("no case to run".into()))?;
    let out = run_case(&case, spec);
    match out.report {
        Some(rep) => Ok((out.row, rep)),
        None => Err(Error::Config(format!(
            "{}: {}",
            out.row.status, out.row.note
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombineRow {
    pub d: usize,
    pub level_total: u32,
    pub p_hat: usize,
    pub layer: usize,
    pub levels: String,
    pub coefficient: i64,
    pub n: usize,
    pub n_with_boundary: u128,
    pub p_requested: usize,
    pub p: usize,
    pub gamma: f64,
    pub q: usize,
    pub variant: String,
    pub weighting: String,
    pub method: String,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub clamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombineSummary {
    pub d: usize,
    pub level_total: u32,
    pub p_hat: usize,
    pub subproblems: usize,
    pub subdomains_requested: u128,
    pub subdomains_closed_form: u128,
    pub clamped_subproblems: usize,
    pub error: SampledError,
    pub full_grid_error: Option<SampledError>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CombineResult {
    pub rows: Vec<CombineRow>,
    pub timings: Vec<TimingRow>,
    pub summaries: Vec<CombineSummary>,
}

/// `max(1, 2^(L-8))`: subdomains of roughly `2^8` unknowns.
pub fn default_p_hat(level: u32) -> usize {
    1usize << level.saturating_sub(8)
}

pub fn run_combine(spec: &ExperimentSpec) -> Result<CombineResult> {
    expect_kind(spec, &[ExperimentKind::Combine])?;
    let mut result = CombineResult {
        rows: Vec::new(),
        timings: Vec::new(),
        summaries: Vec::new(),
    };
    for &d in &spec.dims {
        for &level in &spec.levels_total {
            let p_hat = spec.p_hat.unwrap_or_else(|| default_p_hat(level));
            let plan = enumerate_plan(d, level, p_hat)?;
            let settings = SolveSettings {
                variant: spec.variants[0],
                weighting: spec.weightings[0],
                gamma: spec.gammas[0],
                q_rule: spec.q_rule,
                size_exponent: spec.size_exponents.first().copied(),
                solver: spec.solver_config(spec.methods[0]),
                random_start: false,
            };
            let run = run_combination(&plan, manufactured_poisson, &settings)?;
            for s in &run.subproblems {
                let part = &s.partial;
                result.timings.push(TimingRow {
                    row: result.rows.len(),
                    setup_s: part.setup_time_s,
                    eig_s: part.report.eig_time_s,
                    solve_s: part.report.wall_time_s,
                });
                result.rows.push(CombineRow {
                    d,
                    level_total: level,
                    p_hat,
                    layer: s.layer,
                    levels: part.levels.to_string(),
                    coefficient: s.coefficient,
                    n: part.n,
                    n_with_boundary: part.n_with_boundary,
                    p_requested: part.p_requested,
                    p: part.p,
                    gamma: part.gamma,
                    q: part.q,
                    variant: settings.variant.to_string(),
                    weighting: settings.weighting.to_string(),
                    method: settings.solver.method.to_string(),
                    seed: spec.seed,
                    iterations: part.report.iterations,
                    converged: part.report.converged,
                    clamp: part.clamp.clone().unwrap_or_default(),
                });
            }
            let error = sampled_error(
                |x| run.combined.eval(x),
                manufactured_solution,
                d,
                level,
                spec.samples,
                spec.seed,
            )?;
            let full_grid_error = if spec.full_grid {
                let p = p_hat << (d - 1);
                let full = solve_problem(
                    &manufactured_poisson(LevelVector::isotropic(d, level)?),
                    p,
                    &settings,
                    false,
                )?;
                Some(sampled_error(
                    |x| full.solution.eval(x),
                    manufactured_solution,
                    d,
                    level,
                    spec.samples,
                    spec.seed,
                )?)
            } else {
                None
            };
            result.summaries.push(CombineSummary {
                d,
                level_total: level,
                p_hat,
                subproblems: plan.num_subproblems(),
                subdomains_requested: plan.total_subdomains(),
                subdomains_closed_form: subdomain_count_total(d, level, p_hat as u64)?,
                clamped_subproblems: run.clamps().len(),
                error,
                full_grid_error,
                seed: spec.seed,
            });
        }
    }
    Ok(result)
}

/// Rows of the curve self-check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SfcCheckRow {
    pub d: usize,
    pub n: u32,
    pub bijective: String,
    pub adjacent: String,
    pub holder_est: f64,
    pub holder_bound: f64,
}

/// Exhaustive checks run up to `2^exhaustive_bits` cells; larger curves report `skipped`.
pub fn run_sfc_check(
    dims: &[usize],
    max_bits: u32,
    samples: usize,
    seed: u64,
    exhaustive_bits: u32,
) -> Result<Vec<SfcCheckRow>> {
    let mut rows = Vec::new();
    for &d in dims {
        for n in 1..=max_bits {
            let cfg = CurveConfig::new(d, n)?;
            let (bij, adj) = if cfg.total_bits() <= exhaustive_bits {
                let (b, a) = check_exhaustive(cfg)?;
                (b.to_string(), a.to_string())
            } else {
                ("skipped".to_string(), "skipped".to_string())
            };
            rows.push(SfcCheckRow {
                d,
                n,
                bijective: bij,
                adjacent: adj,
                holder_est: holder_estimate(cfg, samples, seed)?,
                holder_bound: holder_bound(d),
            });
        }
    }
    Ok(rows)
}

/// Writes serializable rows as CSV with a header row.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    write_csv(rows, fs::File::create(path)?)
}

pub fn write_json_file<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weak_scaling_levels() {
        assert_eq!(weak_scaling_level(1, 8, 16), 12);
        assert_eq!(weak_scaling_level(6, 8, 256), 2);
        assert_eq!(weak_scaling_level(3, 8, 16), 4);
        assert_eq!(weak_scaling_level(2, 8, 2), 4);
    }

    #[test]
    fn config_text_and_overrides() {
        let text = "# weak run\nP = 16..64\ngamma = 0.5, 1\nweighting = none,omega\nseed=7\n";
        let spec = ExperimentSpec::from_settings(
            ExperimentKind::Weak,
            Some(text),
            &[("seed".into(), "9".into())],
        )
        .unwrap();
        assert_eq!(spec.subdomains, vec![16, 32, 64]);
        assert_eq!(spec.gammas, vec![0.5, 1.0]);
        assert_eq!(spec.weightings, vec![Weighting::None, Weighting::Omega]);
        assert_eq!(spec.seed, 9);
        assert!(
            ExperimentSpec::from_settings(ExperimentKind::Weak, Some("bogus = 1"), &[]).is_err()
        );
        assert!(
            ExperimentSpec::from_settings(ExperimentKind::Weak, Some("no equals sign"), &[])
                .is_err()
        );
    }

    #[test]
    fn infeasible_cases_are_skipped() {
        let mut spec = ExperimentSpec::defaults(ExperimentKind::GammaSweep);
        spec.subdomains = vec![2, 4];
        spec.gammas = vec![1.0, 5.0];
        spec.methods = vec![Method::Pcg];
        spec.size_exponents = vec![4];
        let res = run_gamma_sweep(&spec).unwrap();
        let status: Vec<_> = res
            .rows
            .iter()
            .map(|r| (r.p, r.gamma, r.status.as_str()))
            .collect();
        assert_eq!(
            status,
            vec![
                (2, 1.0, "skipped"),
                (2, 5.0, "skipped"),
                (4, 1.0, "ok"),
                (4, 5.0, "skipped")
            ]
        );
    }

    #[test]
    fn single_solve_converges_and_reruns_identically() {
        let spec = ExperimentSpec::defaults(ExperimentKind::Single);
        let (row, rep) = run_single(&spec).unwrap();
        assert!(rep.converged);
        assert_eq!(row.levels, "(3 3)");
        let last = rep.history.last().unwrap().energy_error.unwrap();
        assert!(last <= 1e-8);
        let (row2, rep2) = run_single(&spec).unwrap();
        assert_eq!(row, row2);
        assert_eq!(rep.history, rep2.history);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_csv(&[row], &mut a).unwrap();
        write_csv(&[row2], &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sfc_check_rows() {
        let rows = run_sfc_check(&[2, 3], 3, 200, 1, 20).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows
            .iter()
            .all(|r| r.bijective == "true" && r.adjacent == "true"));
        assert!(rows.iter().all(|r| r.holder_est <= r.holder_bound));
    }

    #[test]
    fn plateau_spread() {
        let mk = |p, it| RunRow {
            experiment: "weak".into(),
            d: 1,
            levels: String::new(),
            s: Some(8),
            level_total: None,
            n: Some(1),
            p,
            gamma: 0.5,
            q_rule: "16".into(),
            q: Some(16),
            variant: "balanced".into(),
            weighting: "omega".into(),
            method: "pcg".into(),
            seed: 1,
            tolerance: 1e-8,
            status: "ok".into(),
            iterations: Some(it),
            converged: Some(true),
            lambda_min: None,
            lambda_max: None,
            note: String::new(),
        };
        let rows = vec![mk(16, 5), mk(32, 20), mk(64, 22)];
        let st = plateau_stats(&rows, 32);
        assert_eq!(st.len(), 1);
        assert_eq!((st[0].min_iterations, st[0].max_iterations), (20, 22));
        assert!((st[0].spread - 0.1).abs() < 1e-12);
    }
}
