//! Overlapping Schwarz preconditioners on curve partitions.
//!
//! With `C1 = sum_i R_i^T W_i A_i^{-1} R_i` (the one-level operator, `W_i` the
//! configured weighting), `F = R0^T A0^{-1} R0` and `G = I - A F`:
//!
//! | variant              | `h = C^{-1} g`            |
//! |----------------------|---------------------------|
//! | `OneLevel`           | `C1 g`                    |
//! | `AdditiveTwoLevel`   | `C1 g + F g`              |
//! | `Deflated`           | `G^T C1 g + F g`          |
//! | `Balanced`           | `G^T C1 G g + F g`        |
//!
//! The coarse term is never weighted. The deflated variant uses the weighted
//! one-level core like the balanced one; it is provided as an extension and is
//! not part of the reference experiments.
//!
//! Subdomain solves run on the rayon pool; their contributions are summed in
//! subdomain order, so `apply` is bitwise deterministic regardless of the
//! number of threads.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarse::{build_coarse, CoarseSpace};
use crate::partition::{compute_weights, OverlapWeights, Partition};
use crate::sparse::{factorize, Factorization, SparseMatrix};
use crate::{Error, Result};

/// A linear operator approximating `A^{-1}`.
pub trait Preconditioner: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, g: &[f64]) -> Result<Vec<f64>>;

    /// Whether the operator is symmetric as a bilinear form.
    fn is_symmetric(&self) -> bool;
}

/// `C^{-1} = I`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityPreconditioner(pub usize);

impl Preconditioner for IdentityPreconditioner {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.0, g.len())?;
        Ok(g.to_vec())
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    OneLevel,
    AdditiveTwoLevel,
    Deflated,
    Balanced,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::OneLevel,
        Variant::AdditiveTwoLevel,
        Variant::Deflated,
        Variant::Balanced,
    ];

    pub fn needs_coarse(self) -> bool {
        self != Variant::OneLevel
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::OneLevel => "one_level",
            Variant::AdditiveTwoLevel => "additive_two_level",
            Variant::Deflated => "deflated",
            Variant::Balanced => "balanced",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    None,
    Omega,
    DMatrix,
}

impl Weighting {
    pub const ALL: [Weighting; 3] = [Weighting::None, Weighting::Omega, Weighting::DMatrix];

    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::None => "none",
            Weighting::Omega => "omega",
            Weighting::DMatrix => "d_matrix",
        }
    }
}

macro_rules! str_enum {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let norm = s.trim().to_ascii_lowercase().replace('-', "_");
                Self::ALL
                    .into_iter()
                    .find(|v| v.as_str() == norm)
                    .ok_or_else(|| Error::Config(format!("unknown {} '{s}'", $what)))
            }
        }
    };
}

str_enum!(Variant, "variant");
str_enum!(Weighting, "weighting");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchwarzConfig {
    pub variant: Variant,
    pub weighting: Weighting,
    pub gamma: f64,
    /// Coarse unknowns per subdomain; ignored by `OneLevel`.
    pub q: usize,
}

/// Rule for the number `q` of coarse unknowns per subdomain. Every rule is
/// clamped to `[1, floor(N/P)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QRule {
    Fixed(usize),
    /// `2^(S-4)` for the per-subdomain size exponent `S`.
    SizeExponent,
    /// `2^(floor(log2(N/P)) - 4)`.
    LogRatio,
}

impl QRule {
    pub fn resolve(self, n: usize, p: usize, s: Option<u32>) -> Result<usize> {
        if p == 0 || p > n {
            return Err(Error::Precondition(format!(
                "need 1 <= P <= N, got P={p}, N={n}"
            )));
        }
        let cap = n / p;
        let raw = match self {
            QRule::Fixed(q) => q,
            QRule::SizeExponent => {
                let s = s.ok_or_else(|| {
                    Error::Config("q rule 2^(S-4) needs the size exponent S".into())
                })?;
                1usize << s.saturating_sub(4).min(62)
            }
            QRule::LogRatio => 1usize << cap.ilog2().saturating_sub(4),
        };
        Ok(raw.clamp(1, cap))
    }
}

impl fmt::Display for QRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QRule::Fixed(q) => write!(f, "{q}"),
            QRule::SizeExponent => f.write_str("size_exponent"),
            QRule::LogRatio => f.write_str("log_ratio"),
        }
    }
}

impl FromStr for QRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace('-', "_");
        match t.as_str() {
            "size_exponent" | "2^(s-4)" => Ok(QRule::SizeExponent),
            "log_ratio" | "2^(floor(log2(n/p))-4)" => Ok(QRule::LogRatio),
            _ => t
                .parse::<usize>()
                .map(QRule::Fixed)
                .map_err(|_| Error::Config(format!("unknown q rule '{s}'"))),
        }
    }
}

struct Subdomain {
    factor: Factorization,
    /// Per-entry weights; `None` means unweighted.
    weight: Option<Weight>,
}

enum Weight {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

pub struct SchwarzOperator {
    a: SparseMatrix,
    partition: Partition,
    weights: OverlapWeights,
    subdomains: Vec<Subdomain>,
    coarse: Option<CoarseSpace>,
    config: SchwarzConfig,
    symmetric: bool,
}

impl fmt::Debug for SchwarzOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SchwarzOperator")
            .field("n", &self.a.nrows())
            .field("subdomains", &self.subdomains.len())
            .field("coarse_dim", &self.coarse.as_ref().map(CoarseSpace::dim))
            .field("config", &self.config)
            .field("symmetric", &self.symmetric)
            .finish()
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Symmetry of the configured operator. The one-sided deflated operator
/// `G^T C1 + F` is never symmetric. Otherwise the `D` weighting is symmetric
/// only when every `D_i` is a multiple of the identity, which the overlap rule
/// guarantees for half-integer `gamma`.
pub fn is_symmetric_config(variant: Variant, weighting: Weighting, gamma: f64) -> bool {
    if variant == Variant::Deflated {
        return false;
    }
    match weighting {
        Weighting::None | Weighting::Omega => true,
        Weighting::DMatrix => {
            let twice = 2.0 * gamma;
            (twice - twice.round()).abs() < 1e-12
        }
    }
}

impl SchwarzOperator {
    /// Extracts and factorizes every `A_i`; `coarse` is required by the
    /// two-level variants.
    pub fn setup(
        a: &SparseMatrix,
        partition: Partition,
        coarse: Option<CoarseSpace>,
        cfg: SchwarzConfig,
    ) -> Result<Self> {
        check_len(partition.n(), a.nrows())?;
        check_len(a.nrows(), a.ncols())?;
        if (partition.gamma() - cfg.gamma).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "partition built with gamma={} but operator configured with gamma={}",
                partition.gamma(),
                cfg.gamma
            )));
        }
        if cfg.variant.needs_coarse() {
            match &coarse {
                None => {
                    return Err(Error::Config(format!(
                        "variant {} needs a coarse space",
                        cfg.variant
                    )))
                }
                Some(cs) => check_len(partition.n(), cs.restriction().ncols())?,
            }
        }
        let weights = compute_weights(&partition);
        let subdomains = partition
            .overlapped()
            .par_iter()
            .enumerate()
            .map(|(i, range)| {
                let ai = a.principal_submatrix(range.indices(), |g| range.local_of(g));
                let factor = factorize(&ai)?;
                let weight = match cfg.weighting {
                    Weighting::None => None,
                    Weighting::Omega => Some(Weight::Scalar(weights.omega[i])),
                    Weighting::DMatrix => Some(Weight::Diagonal(weights.d[i].clone())),
                };
                Ok(Subdomain { factor, weight })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            a: a.clone(),
            symmetric: is_symmetric_config(cfg.variant, cfg.weighting, cfg.gamma),
            partition,
            weights,
            subdomains,
            coarse,
            config: cfg,
        })
    }

    /// Builds partition and coarse space from `(P, cfg)` and calls [`Self::setup`].
    pub fn build(a: &SparseMatrix, p: usize, cfg: SchwarzConfig) -> Result<Self> {
        let partition = Partition::new(a.nrows(), p, cfg.gamma)?;
        let coarse = if cfg.variant.needs_coarse() {
            Some(build_coarse(&partition, a, cfg.q)?)
        } else {
            None
        };
        Self::setup(a, partition, coarse, cfg)
    }

    pub fn config(&self) -> &SchwarzConfig {
        &self.config
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn weights(&self) -> &OverlapWeights {
        &self.weights
    }

    pub fn coarse(&self) -> Option<&CoarseSpace> {
        self.coarse.as_ref()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.a
    }

    pub fn subdomain_sizes(&self) -> Vec<usize> {
        self.subdomains.iter().map(|s| s.factor.dim()).collect()
    }

    /// Weighted one-level part `C1 g`.
    pub fn apply_one_level(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.a.nrows(), g.len())?;
        let ranges = self.partition.overlapped();
        let locals = self
            .subdomains
            .par_iter()
            .zip(ranges.par_iter())
            .map(|(sub, range)| {
                let mut x = range.restrict(g)?;
                sub.factor.solve_in_place(&mut x)?;
                match &sub.weight {
                    None => {}
                    Some(Weight::Scalar(w)) => x.iter_mut().for_each(|v| *v *= w),
                    Some(Weight::Diagonal(d)) => {
                        x.iter_mut().zip(d).for_each(|(v, w)| *v *= w);
                    }
                }
                Ok(x)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut h = vec![0.0; g.len()];
        for (range, x) in ranges.iter().zip(&locals) {
            range.add_extended(1.0, x, &mut h)?;
        }
        Ok(h)
    }

    fn coarse_space(&self) -> Result<&CoarseSpace> {
        self.coarse
            .as_ref()
            .ok_or_else(|| Error::Config("coarse space missing".into()))
    }

    /// `h = v - F(A v) + y`, i.e. `G^T v + y`.
    fn project_out(&self, cs: &CoarseSpace, mut v: Vec<f64>, y: &[f64]) -> Result<Vec<f64>> {
        let fav = cs.apply_f(&self.a.matvec(&v)?)?;
        for ((vi, f), yi) in v.iter_mut().zip(&fav).zip(y) {
            *vi += yi - f;
        }
        Ok(v)
    }
}

impl Preconditioner for SchwarzOperator {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.a.nrows(), g.len())?;
        match self.config.variant {
            Variant::OneLevel => self.apply_one_level(g),
            Variant::AdditiveTwoLevel => {
                let cs = self.coarse_space()?;
                let mut h = self.apply_one_level(g)?;
                let fg = cs.apply_f(g)?;
                h.iter_mut().zip(&fg).for_each(|(a, b)| *a += b);
                Ok(h)
            }
            Variant::Deflated => {
                let cs = self.coarse_space()?;
                let y = cs.apply_f(g)?;
                let v = self.apply_one_level(g)?;
                self.project_out(cs, v, &y)
            }
            Variant::Balanced => {
                let cs = self.coarse_space()?;
                let y = cs.apply_f(g)?;
                let ay = self.a.matvec(&y)?;
                let gg: Vec<f64> = g.iter().zip(&ay).map(|(a, b)| a - b).collect();
                let v = self.apply_one_level(&gg)?;
                self.project_out(cs, v, &y)
            }
        }
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}
