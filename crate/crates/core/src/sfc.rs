//! d-dimensional Hilbert curve with 128-bit keys.
//!
//! Encoding follows Skilling's transpose formulation: the axis coordinates are
//! turned in place into the "transposed" Hilbert index, whose bits are then
//! interleaved (most significant level first, axis 0 first) into one key. The
//! orientation is whatever this algorithm yields; golden tests pin it.

use crate::grid::LevelVector;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Position along the curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SfcKey(pub u128);

/// Dimension and per-axis resolution (bits) of a discrete curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurveConfig {
    dim: usize,
    bits: u32,
}

impl CurveConfig {
    pub fn new(dim: usize, bits: u32) -> Result<Self> {
        if dim == 0 || bits == 0 {
            return Err(Error::Precondition(format!(
                "curve needs dim >= 1 and bits >= 1, got dim={dim}, bits={bits}"
            )));
        }
        if bits > 64 || (dim as u64) * u64::from(bits) > 128 {
            return Err(Error::Precondition(format!(
                "dim*bits must be <= 128 and bits <= 64, got dim={dim}, bits={bits}"
            )));
        }
        Ok(Self { dim, bits })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn total_bits(&self) -> u32 {
        self.dim as u32 * self.bits
    }

    /// Number of cells along one axis, `2^bits`.
    pub fn side(&self) -> u128 {
        1u128 << self.bits
    }

    /// Largest valid key, `2^(dim*bits) - 1`.
    pub fn max_key(&self) -> u128 {
        match self.total_bits() {
            128 => u128::MAX,
            t => (1u128 << t) - 1,
        }
    }
}

/// A discrete space-filling curve on the `2^bits`-per-axis lattice.
pub trait SpaceFillingCurve {
    fn config(&self) -> CurveConfig;
    fn encode(&self, coords: &[u64]) -> Result<SfcKey>;
    fn decode(&self, key: SfcKey) -> Result<Vec<u64>>;
}

#[derive(Debug, Clone, Copy)]
pub struct HilbertCurve {
    cfg: CurveConfig,
}

impl HilbertCurve {
    pub fn new(cfg: CurveConfig) -> Self {
        Self { cfg }
    }
}

impl SpaceFillingCurve for HilbertCurve {
    fn config(&self) -> CurveConfig {
        self.cfg
    }

    fn encode(&self, coords: &[u64]) -> Result<SfcKey> {
        encode(coords, self.cfg)
    }

    fn decode(&self, key: SfcKey) -> Result<Vec<u64>> {
        decode(key, self.cfg)
    }
}

fn check_coords(coords: &[u64], cfg: CurveConfig) -> Result<()> {
    if coords.len() != cfg.dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.dim,
            got: coords.len(),
        });
    }
    let side = cfg.side();
    if let Some(c) = coords.iter().find(|&&c| u128::from(c) >= side) {
        return Err(Error::Precondition(format!(
            "coordinate {c} outside [0, {side})"
        )));
    }
    Ok(())
}

/// Hilbert index of a lattice point.
pub fn encode(coords: &[u64], cfg: CurveConfig) -> Result<SfcKey> {
    check_coords(coords, cfg)?;
    let mut x = coords.to_vec();
    axes_to_transpose(&mut x, cfg.bits);
    Ok(SfcKey(interleave(&x, cfg.bits)))
}

/// Lattice point of a Hilbert index; inverse of [`encode`].
pub fn decode(key: SfcKey, cfg: CurveConfig) -> Result<Vec<u64>> {
    if key.0 > cfg.max_key() {
        return Err(Error::Precondition(format!(
            "key {} exceeds 2^{} - 1",
            key.0,
            cfg.total_bits()
        )));
    }
    let mut x = deinterleave(key.0, cfg.dim, cfg.bits);
    transpose_to_axes(&mut x, cfg.bits);
    Ok(x)
}

fn axes_to_transpose(x: &mut [u64], bits: u32) {
    let n = x.len();
    let m = 1u64 << (bits - 1);
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..n {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode
    for i in 1..n {
        x[i] ^= x[i - 1];
    }
    let mut t = 0u64;
    let mut q = m;
    while q > 1 {
        if x[n - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for xi in x.iter_mut() {
        *xi ^= t;
    }
}

fn transpose_to_axes(x: &mut [u64], bits: u32) {
    let n = x.len();
    // Gray decode
    let t = x[n - 1] >> 1;
    for i in (1..n).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    for s in 1..bits {
        let q = 1u64 << s;
        let p = q - 1;
        for i in (0..n).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
    }
}

fn interleave(x: &[u64], bits: u32) -> u128 {
    let mut key = 0u128;
    for b in (0..bits).rev() {
        for &xi in x {
            key = (key << 1) | u128::from((xi >> b) & 1);
        }
    }
    key
}

fn deinterleave(key: u128, dim: usize, bits: u32) -> Vec<u64> {
    let mut x = vec![0u64; dim];
    let mut shift = dim as u32 * bits;
    for b in (0..bits).rev() {
        for xi in x.iter_mut() {
            shift -= 1;
            *xi |= (((key >> shift) & 1) as u64) << b;
        }
    }
    x
}

/// Curve key of an interior grid point of an anisotropic grid.
///
/// `multi_index` is 1-based (`1 <= k_j <= 2^{l_j} - 1`). The point is embedded
/// into the isotropic lattice of the finest level `l_max` by
/// `c_j = (k_j - 1) * 2^(l_max - l_j)` and encoded there.
pub fn grid_point_key(multi_index: &[u64], levels: &LevelVector) -> Result<SfcKey> {
    let cfg = levels.curve_config()?;
    let lmax = levels.max_level();
    if multi_index.len() != levels.dim() {
        return Err(Error::DimensionMismatch {
            expected: levels.dim(),
            got: multi_index.len(),
        });
    }
    let mut coords = Vec::with_capacity(multi_index.len());
    for (&k, &l) in multi_index.iter().zip(levels.as_slice()) {
        if k < 1 || k >= (1u64 << l) {
            return Err(Error::Precondition(format!(
                "grid index {k} outside interior range [1, {}] at level {l}",
                (1u64 << l) - 1
            )));
        }
        coords.push((k - 1) << (lmax - l));
    }
    encode(&coords, cfg)
}

/// Hölder quotient `|s(x)-s(y)|_2 / |x-y|^(1/d)` of two curve positions.
///
/// With `x = k/2^(nd)` and `s(x) = coords/2^n` the powers of two cancel.
pub fn holder_ratio(cfg: CurveConfig, a: SfcKey, b: SfcKey) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let ca = decode(a, cfg)?;
    let cb = decode(b, cfg)?;
    let dist2: f64 = ca
        .iter()
        .zip(&cb)
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum();
    let dk = a.0.abs_diff(b.0) as f64;
    Ok(dist2.sqrt() / dk.powf(1.0 / cfg.dim() as f64))
}

/// Proven Hölder constant of the d-dimensional Hilbert curve, `2*sqrt(d+3)`.
pub fn holder_bound(dim: usize) -> f64 {
    2.0 * ((dim + 3) as f64).sqrt()
}

/// Empirical Hölder constant over `samples` random key pairs.
///
/// Pair distances are drawn log-uniformly so that every scale of the curve is
/// probed, not just far-apart pairs.
pub fn holder_estimate(cfg: CurveConfig, samples: usize, seed: u64) -> Result<f64> {
    if samples < 2 {
        return Err(Error::Precondition("need at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = cfg.max_key();
    let total = cfg.total_bits();
    let mut best = 0.0f64;
    for _ in 0..samples {
        let a = rng.gen_range(0..=max);
        let scale = rng.gen_range(0..total);
        let span = if scale == 127 {
            u128::MAX
        } else {
            (1u128 << (scale + 1)) - 1
        };
        let delta = rng.gen_range(1..=span.max(1));
        let b = if rng.gen::<bool>() {
            a.saturating_add(delta).min(max)
        } else {
            a.saturating_sub(delta)
        };
        best = best.max(holder_ratio(cfg, SfcKey(a), SfcKey(b))?);
    }
    Ok(best)
}

/// Exhaustive bijectivity and unit-step adjacency check over all keys.
///
/// Returns `(bijective, adjacent)`. Only sensible for small `dim*bits`.
pub fn check_exhaustive(cfg: CurveConfig) -> Result<(bool, bool)> {
    if cfg.total_bits() > 26 {
        return Err(Error::Precondition(format!(
            "exhaustive check limited to 2^26 cells, got 2^{}",
            cfg.total_bits()
        )));
    }
    let count = 1usize << cfg.total_bits();
    let side = 1usize << cfg.bits();
    let mut seen = vec![false; count];
    let mut bijective = true;
    let mut adjacent = true;
    let mut prev: Option<Vec<u64>> = None;
    for k in 0..count {
        let c = decode(SfcKey(k as u128), cfg)?;
        let lin = c.iter().fold(0usize, |acc, &ci| acc * side + ci as usize);
        if seen[lin] || encode(&c, cfg)? != SfcKey(k as u128) {
            bijective = false;
        }
        seen[lin] = true;
        if let Some(p) = &prev {
            let l1: u64 = p.iter().zip(&c).map(|(&a, &b)| a.abs_diff(b)).sum();
            if l1 != 1 {
                adjacent = false;
            }
        }
        prev = Some(c);
    }
    Ok((bijective && seen.iter().all(|&s| s), adjacent))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: usize, n: u32) -> CurveConfig {
        CurveConfig::new(d, n).unwrap()
    }

    #[test]
    fn two_d_first_level_visits_unit_square_cells() {
        let c = cfg(2, 1);
        let order: Vec<Vec<u64>> = (0..4).map(|k| decode(SfcKey(k), c).unwrap()).collect();
        // brute force: bijective onto the 4 cells, consecutive cells adjacent
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        for w in order.windows(2) {
            let l1: u64 = w[0].iter().zip(&w[1]).map(|(a, b)| a.abs_diff(*b)).sum();
            assert_eq!(l1, 1);
        }
        // frozen orientation
        assert_eq!(order, vec![vec![0, 0], vec![0, 1], vec![1, 1], vec![1, 0]]);
        assert_eq!(decode(SfcKey(0), c).unwrap(), vec![0, 0]);
    }

    #[test]
    fn frozen_golden_keys_two_d_level_two() {
        let c = cfg(2, 2);
        let path: Vec<Vec<u64>> = (0..16).map(|k| decode(SfcKey(k), c).unwrap()).collect();
        assert_eq!(path[0], vec![0, 0]);
        assert_eq!(path[15], vec![3, 0]);
        assert_eq!(encode(&[1, 1], c).unwrap(), SfcKey(2));
    }

    #[test]
    fn one_dimension_is_identity() {
        for n in 1..=12 {
            let c = cfg(1, n);
            for k in 0..(1u64 << n).min(4096) {
                assert_eq!(encode(&[k], c).unwrap(), SfcKey(u128::from(k)));
            }
        }
        assert_eq!(decode(SfcKey(7), cfg(1, 4)).unwrap(), vec![7]);
    }

    #[test]
    fn three_d_level_two_is_a_hamiltonian_path() {
        assert_eq!(check_exhaustive(cfg(3, 2)).unwrap(), (true, true));
    }

    #[test]
    fn exhaustive_small_scales() {
        for d in 1..=5usize {
            for n in 1..=(20 / d as u32).min(6) {
                assert_eq!(
                    check_exhaustive(cfg(d, n)).unwrap(),
                    (true, true),
                    "d={d} n={n}"
                );
            }
        }
    }

    #[test]
    fn range_errors() {
        let c = cfg(2, 3);
        assert!(matches!(encode(&[8, 0], c), Err(Error::Precondition(_))));
        assert!(matches!(
            encode(&[1], c),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(decode(SfcKey(64), c), Err(Error::Precondition(_))));
        assert!(CurveConfig::new(5, 26).is_err());
        assert!(CurveConfig::new(2, 64).is_ok());
        assert!(CurveConfig::new(0, 3).is_err());
    }

    #[test]
    fn full_width_keys() {
        let c = cfg(2, 64);
        let top = decode(SfcKey(u128::MAX), c).unwrap();
        assert_eq!(encode(&top, c).unwrap(), SfcKey(u128::MAX));
        let c = cfg(6, 21);
        let p = [2_000_000u64, 5, 17, 1_048_575, 3, 999_999];
        assert_eq!(decode(encode(&p, c).unwrap(), c).unwrap(), p);
    }

    #[test]
    fn isotropic_grid_key_matches_encode() {
        let l = LevelVector::new(vec![3, 3]).unwrap();
        let c = cfg(2, 3);
        for k1 in 1..8u64 {
            for k2 in 1..8u64 {
                assert_eq!(
                    grid_point_key(&[k1, k2], &l).unwrap(),
                    encode(&[k1 - 1, k2 - 1], c).unwrap()
                );
            }
        }
    }

    #[test]
    fn anisotropic_grid_scales_coarse_axis() {
        let l = LevelVector::new(vec![2, 3]).unwrap();
        let c = cfg(2, 3);
        assert_eq!(
            grid_point_key(&[2, 5], &l).unwrap(),
            encode(&[2, 4], c).unwrap()
        );
        let mut keys: Vec<SfcKey> = (1..4u64)
            .flat_map(|a| (1..8u64).map(move |b| (a, b)))
            .map(|(a, b)| grid_point_key(&[a, b], &l).unwrap())
            .collect();
        assert_eq!(keys.len(), 21);
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 21);
        assert!(grid_point_key(&[0, 1], &l).is_err());
        assert!(grid_point_key(&[4, 1], &l).is_err());
    }

    #[test]
    fn holder_quotients() {
        let est = holder_estimate(cfg(1, 20), 10_000, 3).unwrap();
        assert!(est <= 1.0 + 1e-12);
        let est = holder_estimate(cfg(2, 6), 100_000, 1).unwrap();
        assert!(est <= holder_bound(2), "{est}");
        assert!(holder_estimate(cfg(2, 6), 1, 1).is_err());
    }

    #[test]
    fn holder_exhaustive_subsample_3d() {
        let c = cfg(3, 4);
        // 8^3 sub-lattice (every other point) of the 16^3 lattice
        let keys: Vec<SfcKey> = (0..512u64)
            .map(|i| encode(&[2 * (i % 8), 2 * ((i / 8) % 8), 2 * (i / 64)], c).unwrap())
            .collect();
        let mut best = 0.0f64;
        for (i, &a) in keys.iter().enumerate() {
            for &b in &keys[i + 1..] {
                best = best.max(holder_ratio(c, a, b).unwrap());
            }
        }
        assert!(best <= holder_bound(3), "{best}");
    }
}
