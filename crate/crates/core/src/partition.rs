//! Balanced splitting of the curve-ordered unknowns and overlap enlargement.
//!
//! Subdomains are never stored as index lists: a disjoint piece is a plain
//! range, an overlapped piece is a `(start, len)` interval on the cyclically
//! closed index set `[0, N)`.

use std::ops::Range;

use crate::{Error, Result};

/// Interval `start, start+1, ..., start+len-1 (mod n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CyclicRange {
    start: usize,
    len: usize,
    n: usize,
}

impl CyclicRange {
    pub fn new(start: usize, len: usize, n: usize) -> Result<Self> {
        if start >= n.max(1) || len > n {
            return Err(Error::Precondition(format!(
                "cyclic range (start={start}, len={len}) invalid for n={n}"
            )));
        }
        Ok(Self { start, len, n })
    }

    pub fn full(n: usize) -> Self {
        Self {
            start: 0,
            len: n,
            n,
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Last global index covered (inclusive).
    pub fn end(&self) -> usize {
        (self.start + self.len + self.n - 1) % self.n
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn global_len(&self) -> usize {
        self.n
    }

    pub fn wraps(&self) -> bool {
        self.start + self.len > self.n
    }

    /// Position of global index `g` inside the range.
    #[inline]
    pub fn local_of(&self, g: usize) -> Option<usize> {
        let off = if g >= self.start {
            g - self.start
        } else {
            g + self.n - self.start
        };
        (off < self.len).then_some(off)
    }

    pub fn contains(&self, g: usize) -> bool {
        self.local_of(g).is_some()
    }

    /// Global indices in local order.
    pub fn indices(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        (0..self.len).map(move |k| {
            let g = self.start + k;
            if g >= self.n {
                g - self.n
            } else {
                g
            }
        })
    }

    /// The (at most two) contiguous global pieces, in local order.
    pub fn segments(&self) -> [Range<usize>; 2] {
        if self.wraps() {
            [self.start..self.n, 0..self.start + self.len - self.n]
        } else {
            [self.start..self.start + self.len, 0..0]
        }
    }

    /// `R_i x`.
    pub fn restrict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let [a, b] = self.segments();
        let mut out = Vec::with_capacity(self.len);
        out.extend_from_slice(&x[a]);
        out.extend_from_slice(&x[b]);
        Ok(out)
    }

    /// `R_i^T x_local`, zero outside the range.
    pub fn extend(&self, local: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        self.add_extended(1.0, local, &mut out)?;
        Ok(out)
    }

    /// `out += alpha * R_i^T local`.
    pub fn add_extended(&self, alpha: f64, local: &[f64], out: &mut [f64]) -> Result<()> {
        if local.len() != self.len {
            return Err(Error::DimensionMismatch {
                expected: self.len,
                got: local.len(),
            });
        }
        if out.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: out.len(),
            });
        }
        let [a, b] = self.segments();
        let split = a.len();
        for (o, l) in out[a].iter_mut().zip(&local[..split]) {
            *o += alpha * l;
        }
        for (o, l) in out[b].iter_mut().zip(&local[split..]) {
            *o += alpha * l;
        }
        Ok(())
    }
}

/// Splits `[0, n)` into `p` consecutive ranges; the first `n mod p` ranges get
/// one extra index.
pub fn disjoint_partition(n: usize, p: usize) -> Result<Vec<Range<usize>>> {
    if p == 0 || p > n {
        return Err(Error::Precondition(format!(
            "need 1 <= P <= N, got P={p}, N={n}"
        )));
    }
    let base = n / p;
    let r = n - p * base;
    let mut start = 0;
    Ok((0..p)
        .map(|i| {
            let size = if i < r { base + 1 } else { base };
            let range = start..start + size;
            start += size;
            range
        })
        .collect())
}

/// `ceil(x)` / `floor(x)` that snap to the nearest integer when `x` is within
/// rounding noise of it, so that e.g. `0.2 * 5` counts as exactly 1.
fn snapped(x: f64) -> (usize, usize) {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        (r as usize, r as usize)
    } else {
        (x.ceil() as usize, x.floor() as usize)
    }
}

fn validate_gamma(gamma: f64, p: usize) -> Result<()> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Precondition(format!(
            "gamma must be finite and >= 0, got {gamma}"
        )));
    }
    if gamma > 0.0 && (p < 2 || 2.0 * gamma + 1.0 > p as f64 + 1e-12) {
        return Err(Error::Precondition(format!(
            "overlap gamma={gamma} needs 2*gamma+1 <= P (P={p})"
        )));
    }
    Ok(())
}

/// Enlarges each disjoint range along the closed curve.
///
/// Range `i` absorbs its `floor(gamma)` full neighbours on each side, then the
/// last `ceil(eta*N_k)` indices of the next range to the left and the first
/// `floor(eta*N_k)` of the next range to the right, `eta = gamma - floor(gamma)`.
pub fn enlarge(disjoint: &[Range<usize>], gamma: f64) -> Result<Vec<CyclicRange>> {
    let p = disjoint.len();
    validate_gamma(gamma, p)?;
    let n = disjoint.last().map_or(0, |r| r.end);
    let sizes: Vec<usize> = disjoint.iter().map(|r| r.len()).collect();
    let whole = gamma.floor() as usize;
    let eta = gamma - gamma.floor();
    disjoint
        .iter()
        .enumerate()
        .map(|(i, own)| {
            if gamma == 0.0 {
                return CyclicRange::new(own.start % n.max(1), own.len(), n);
            }
            let left_of = |k: usize| (i + p * (whole + 2) - k) % p;
            let right_of = |k: usize| (i + k) % p;
            let mut left: usize = (1..=whole).map(|k| sizes[left_of(k)]).sum();
            let mut right: usize = (1..=whole).map(|k| sizes[right_of(k)]).sum();
            if eta > 0.0 {
                left += snapped(eta * sizes[left_of(whole + 1)] as f64).0;
                right += snapped(eta * sizes[right_of(whole + 1)] as f64).1;
            }
            let len = own.len() + left + right;
            let start = (own.start + n * 2 - left) % n;
            CyclicRange::new(start, len.min(n), n)
        })
        .collect()
}

/// Disjoint and overlapped subdomain ranges.
#[derive(Debug, Clone)]
pub struct Partition {
    n: usize,
    gamma: f64,
    disjoint: Vec<Range<usize>>,
    overlapped: Vec<CyclicRange>,
}

impl Partition {
    pub fn new(n: usize, p: usize, gamma: f64) -> Result<Self> {
        let disjoint = disjoint_partition(n, p)?;
        let overlapped = enlarge(&disjoint, gamma)?;
        Ok(Self {
            n,
            gamma,
            disjoint,
            overlapped,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_subdomains(&self) -> usize {
        self.disjoint.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn disjoint(&self) -> &[Range<usize>] {
        &self.disjoint
    }

    pub fn overlapped(&self) -> &[CyclicRange] {
        &self.overlapped
    }

    /// Number of overlapped ranges containing each global index.
    pub fn cover_counts(&self) -> Vec<u32> {
        let mut diff = vec![0i64; self.n + 1];
        for r in &self.overlapped {
            for seg in r.segments() {
                if !seg.is_empty() {
                    diff[seg.start] += 1;
                    diff[seg.end] -= 1;
                }
            }
        }
        let mut running = 0i64;
        diff[..self.n]
            .iter()
            .map(|d| {
                running += d;
                running as u32
            })
            .collect()
    }

    /// Whether `gamma` is an integer multiple of 1/2.
    pub fn half_integer_gamma(&self) -> bool {
        let twice = 2.0 * self.gamma;
        (twice - twice.round()).abs() < 1e-12
    }
}

/// Partition-of-unity weights `(D_i)_jj = 1/count(j)` and `omega_i = max_j (D_i)_jj`.
#[derive(Debug, Clone)]
pub struct OverlapWeights {
    /// Cover count of each local index, per subdomain.
    pub counts: Vec<Vec<u32>>,
    pub d: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
}

impl OverlapWeights {
    /// Whether every `D_i` is a multiple of the identity.
    pub fn is_scalar(&self) -> bool {
        self.counts
            .iter()
            .all(|c| c.windows(2).all(|w| w[0] == w[1]))
    }
}

pub fn compute_weights(partition: &Partition) -> OverlapWeights {
    let global = partition.cover_counts();
    let counts: Vec<Vec<u32>> = partition
        .overlapped()
        .iter()
        .map(|r| r.indices().map(|g| global[g]).collect())
        .collect();
    let d: Vec<Vec<f64>> = counts
        .iter()
        .map(|c| c.iter().map(|&k| 1.0 / f64::from(k)).collect())
        .collect();
    let omega = counts
        .iter()
        .map(|c| 1.0 / f64::from(c.iter().copied().min().unwrap_or(1)))
        .collect();
    OverlapWeights { counts, d, omega }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sizes(r: &[Range<usize>]) -> Vec<usize> {
        r.iter().map(|r| r.len()).collect()
    }

    #[test]
    fn disjoint_examples() {
        assert_eq!(sizes(&disjoint_partition(9, 2).unwrap()), vec![5, 4]);
        assert_eq!(sizes(&disjoint_partition(49, 7).unwrap()), vec![7; 7]);
        for p in [1, 3, 16, 100] {
            assert_eq!(
                sizes(&disjoint_partition(256 * p, p).unwrap()),
                vec![256; p]
            );
        }
        assert!(disjoint_partition(3, 4).is_err());
        assert!(disjoint_partition(3, 0).is_err());
    }

    #[test]
    fn gamma_one_adds_both_neighbours() {
        let part = Partition::new(20, 5, 1.0).unwrap();
        for (i, r) in part.overlapped().iter().enumerate() {
            assert_eq!(r.len(), 12);
            let left = &part.disjoint()[(i + 4) % 5];
            assert_eq!(r.start(), left.start);
        }
    }

    #[test]
    fn gamma_half_takes_closer_halves() {
        let part = Partition::new(16, 4, 0.5).unwrap();
        let expect = [(14, 8), (2, 8), (6, 8), (10, 8)];
        for (r, &(s, l)) in part.overlapped().iter().zip(&expect) {
            assert_eq!((r.start(), r.len()), (s, l));
        }
        assert_eq!(
            part.overlapped()[0].indices().collect::<Vec<_>>(),
            vec![14, 15, 0, 1, 2, 3, 4, 5]
        );
    }

    #[test]
    fn gamma_zero_is_identity() {
        let part = Partition::new(10, 3, 0.0).unwrap();
        for (d, o) in part.disjoint().iter().zip(part.overlapped()) {
            assert_eq!((o.start(), o.len()), (d.start, d.len()));
        }
        let w = compute_weights(&part);
        assert!(w.d.iter().flatten().all(|&v| v == 1.0));
        assert!(w.omega.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gamma_validation() {
        assert!(Partition::new(10, 2, 1.0).is_err());
        assert!(Partition::new(10, 1, 0.5).is_err());
        assert!(Partition::new(10, 2, 0.5).is_ok());
        assert!(Partition::new(10, 5, -0.1).is_err());
        assert!(Partition::new(10, 5, f64::NAN).is_err());
    }

    #[test]
    fn quarter_overlap_counts_by_brute_force() {
        let part = Partition::new(16, 4, 0.25).unwrap();
        let mut brute = vec![0u32; 16];
        for r in part.overlapped() {
            for g in 0..16 {
                if r.contains(g) {
                    brute[g] += 1;
                }
            }
        }
        assert_eq!(part.cover_counts(), brute);
        assert!(brute.iter().all(|&c| c == 1 || c == 2));
        assert!(brute.contains(&2));
        let w = compute_weights(&part);
        let mut sum = vec![0.0; 16];
        for (r, d) in part.overlapped().iter().zip(&w.d) {
            r.add_extended(1.0, d, &mut sum).unwrap();
        }
        assert!(sum.iter().all(|&s| s == 1.0));
        assert!(!w.is_scalar());
    }

    #[test]
    fn half_integer_gamma_gives_constant_weights() {
        for (n, p) in [(100, 7), (64, 8), (33, 5), (1000, 16)] {
            for k in 1..p.min(6) {
                let gamma = k as f64 / 2.0;
                let part = Partition::new(n, p, gamma).unwrap();
                let w = compute_weights(&part);
                let c = (k + 1) as u32;
                assert!(
                    w.counts.iter().flatten().all(|&x| x == c),
                    "n={n} p={p} gamma={gamma}"
                );
                assert!(w.omega.iter().all(|&o| o == 1.0 / f64::from(c)));
            }
        }
    }

    #[test]
    fn restrict_extend() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let full = CyclicRange::full(10);
        assert_eq!(full.restrict(&x).unwrap(), x);
        assert_eq!(full.extend(&x).unwrap(), x);
        let a = CyclicRange::new(8, 4, 10).unwrap();
        let b = CyclicRange::new(2, 3, 10).unwrap();
        assert_eq!(a.restrict(&x).unwrap(), vec![8.0, 9.0, 0.0, 1.0]);
        let ext = a.extend(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(b.restrict(&ext).unwrap(), vec![0.0; 3]);
        assert!(a.restrict(&x[..9]).is_err());
        assert!(a.extend(&[1.0]).is_err());
        assert!(CyclicRange::new(10, 1, 10).is_err());
    }

    proptest! {
        #[test]
        fn restrict_then_extend_is_identity(start in 0usize..40, len in 0usize..40, seed in 0u64..100) {
            let n = 40;
            let r = CyclicRange::new(start, len, n).unwrap();
            let local: Vec<f64> = (0..len).map(|k| (k as f64 + seed as f64).sin()).collect();
            prop_assert_eq!(r.restrict(&r.extend(&local).unwrap()).unwrap(), local);
        }

        #[test]
        fn disjoint_reconstruction(n in 1usize..500, p_frac in 0.0f64..1.0) {
            let p = 1 + ((n - 1) as f64 * p_frac) as usize;
            let ranges = disjoint_partition(n, p).unwrap();
            let x: Vec<f64> = (0..n).map(|k| k as f64 * 0.5 - 3.0).collect();
            let mut sum = vec![0.0; n];
            for r in &ranges {
                let c = CyclicRange::new(r.start, r.len(), n).unwrap();
                c.add_extended(1.0, &c.restrict(&x).unwrap(), &mut sum).unwrap();
            }
            prop_assert_eq!(sum, x);
        }

        #[test]
        fn partition_invariants(n in 2usize..400, p_frac in 0.0f64..1.0, g in 0usize..12) {
            let p = 1 + ((n - 1) as f64 * p_frac) as usize;
            let gamma = [0.0, 0.2, 0.25, 0.5, 0.75, 1.0, 1.3, 1.5, 2.0, 2.5, 3.7, 5.0][g];
            prop_assume!(gamma == 0.0 || 2.0 * gamma + 1.0 <= p as f64);
            let part = Partition::new(n, p, gamma).unwrap();
            let s = sizes(part.disjoint());
            prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
            prop_assert_eq!(s.iter().sum::<usize>(), n);
            for (d, o) in part.disjoint().iter().zip(part.overlapped()) {
                prop_assert!(d.clone().all(|g| o.contains(g)));
            }
            let w = compute_weights(&part);
            let mut sum = vec![0.0; n];
            for (r, d) in part.overlapped().iter().zip(&w.d) {
                r.add_extended(1.0, d, &mut sum).unwrap();
            }
            for v in sum {
                prop_assert!((v - 1.0).abs() <= 1e-14);
            }
            if part.half_integer_gamma() {
                let c = (2.0 * gamma) as u32 + 1;
                prop_assert!(part.cover_counts().iter().all(|&x| x == c));
            }
        }
    }
}
