//! Gaussian-pooled group sparsity over a 2-D grid of code units.
//!
//! Every cell `r` of the grid is the center of one pool; the pools overlap.
//! The penalty is
//!
//! ```text
//! alpha * sum_r [ sqrt(eps + sum_d z[r+d]^2 g(d)) - sqrt(eps) ],   g(d) = exp(-|d|^2 / (2 sigma^2))
//! ```
//!
//! Offsets `d` are limited to `|d| <= support_radius`. On a wrapped grid pools
//! continue across the edges (a torus); otherwise out-of-grid offsets are dropped.

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSparsityConfig {
    pub alpha: f64,
    /// Pool width in cell units.
    pub sigma: f64,
    /// Offsets farther than this (in cells) are ignored.
    pub support_radius: f64,
    /// Smoothing inside the square root.
    pub epsilon: f64,
}

impl Default for GroupSparsityConfig {
    fn default() -> Self {
        Self::with_sigma(0.5, 1.5)
    }
}

impl GroupSparsityConfig {
    /// Support truncated at `3 sigma`, `epsilon = 1e-6`.
    pub fn with_sigma(alpha: f64, sigma: f64) -> Self {
        Self { alpha, sigma, support_radius: 3.0 * sigma, epsilon: 1e-6 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.epsilon >= 0.0) || !(self.support_radius >= 0.0) {
            return Err(Error::InvalidInput(
                "group sparsity needs alpha, epsilon, support_radius >= 0".into(),
            ));
        }
        if !(self.sigma > 0.0) && self.support_radius > 0.0 {
            return Err(Error::InvalidInput("group sparsity sigma must be positive".into()));
        }
        Ok(())
    }

    /// Pool weight of offset `(dx, dy)`.
    pub fn weight(&self, dx: i64, dy: i64) -> f64 {
        let d2 = (dx * dx + dy * dy) as f64;
        if d2 == 0.0 {
            1.0
        } else {
            (-d2 / (2.0 * self.sigma * self.sigma)).exp()
        }
    }
}

/// Precomputed pools for one grid.
#[derive(Debug, Clone)]
pub struct GroupPenalty {
    cfg: GroupSparsityConfig,
    width: usize,
    height: usize,
    wrap: bool,
    /// For each pool center: `(unit index, g)`.
    pools: Vec<Vec<(usize, f64)>>,
    /// For each unit: `(pool index, g)` of the pools containing it.
    members: Vec<Vec<(usize, f64)>>,
}

impl GroupPenalty {
    pub fn new(cfg: GroupSparsityConfig, width: usize, height: usize, wrap: bool) -> Result<Self> {
        cfg.validate()?;
        let r = cfg.support_radius.floor() as i64;
        let mut offsets = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if ((dx * dx + dy * dy) as f64) <= cfg.support_radius * cfg.support_radius {
                    offsets.push((dx, dy, cfg.weight(dx, dy)));
                }
            }
        }
        let (w, h) = (width as i64, height as i64);
        let mut pools = Vec::with_capacity(width * height);
        for cy in 0..h {
            for cx in 0..w {
                let mut pool = Vec::with_capacity(offsets.len());
                for &(dx, dy, g) in &offsets {
                    let (mut x, mut y) = (cx + dx, cy + dy);
                    if wrap {
                        x = x.rem_euclid(w);
                        y = y.rem_euclid(h);
                    } else if x < 0 || y < 0 || x >= w || y >= h {
                        continue;
                    }
                    pool.push(((y * w + x) as usize, g));
                }
                // a small torus can map several offsets onto the same unit
                pool.sort_by_key(|p| p.0);
                pool.dedup_by(|a, b| {
                    if a.0 == b.0 {
                        b.1 += a.1;
                        true
                    } else {
                        false
                    }
                });
                pools.push(pool);
            }
        }
        let mut members = vec![Vec::new(); pools.len()];
        for (r, pool) in pools.iter().enumerate() {
            for &(i, g) in pool {
                members[i].push((r, g));
            }
        }
        Ok(Self { cfg, width, height, wrap, pools, members })
    }

    pub fn config(&self) -> &GroupSparsityConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn wraps(&self) -> bool {
        self.wrap
    }

    fn pool_sq(&self, z: &[f64], pool: &[(usize, f64)]) -> f64 {
        pool.iter().map(|&(i, g)| z[i] * z[i] * g).sum()
    }

    /// Pooled activity `sqrt(sum_d z[r+d]^2 g(d))` for each pool center.
    pub fn pooled(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("code grid", self.len(), z.len())?;
        Ok(self.pools.iter().map(|p| self.pool_sq(z, p).sqrt()).collect())
    }

    pub fn penalty(&self, z: &[f64]) -> Result<f64> {
        check_len("code grid", self.len(), z.len())?;
        let eps = self.cfg.epsilon;
        let base = eps.sqrt();
        let total: f64 = self.pools.iter().map(|p| (eps + self.pool_sq(z, p)).sqrt() - base).sum();
        Ok(self.cfg.alpha * total)
    }

    pub fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("code grid", self.len(), z.len())?;
        let eps = self.cfg.epsilon;
        let mut g = vec![0.0; z.len()];
        for pool in &self.pools {
            let s = (eps + self.pool_sq(z, pool)).sqrt();
            if s == 0.0 {
                if pool.iter().any(|&(i, w)| w > 0.0 && z[i] == 0.0) {
                    return Err(Error::Singular(
                        "group penalty gradient at an all-zero pool with epsilon = 0".into(),
                    ));
                }
                continue;
            }
            let k = self.cfg.alpha / s;
            for &(i, w) in pool {
                g[i] += k * w * z[i];
            }
        }
        Ok(g)
    }

    /// Squared pool sums `sum_d z[r+d]^2 g(d)`, the state used by
    /// [`GroupPenalty::coordinate_min`].
    pub fn pool_sums(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("code grid", self.len(), z.len())?;
        Ok(self.pools.iter().map(|p| self.pool_sq(z, p)).collect())
    }

    /// Exact minimizer over `z[u]` of `a z^2 - 2 b z + penalty(z)` with every
    /// other entry fixed, given the current value `z0` and pool sums. `sums`
    /// is updated to the returned value.
    pub fn coordinate_min(&self, u: usize, a: f64, b: f64, z0: f64, sums: &mut [f64]) -> f64 {
        let (alpha, eps) = (self.cfg.alpha, self.cfg.epsilon);
        let rest: Vec<(usize, f64, f64)> =
            self.members[u].iter().map(|&(r, g)| (r, g, eps + (sums[r] - g * z0 * z0).max(0.0))).collect();
        let objective = |t: f64| {
            a * t * t - 2.0 * b * t + alpha * rest.iter().map(|&(_, g, c)| (c + g * t * t).sqrt()).sum::<f64>()
        };
        // pools that are empty apart from u act like an L1 term at zero
        let kink: f64 = rest.iter().filter(|p| p.2 == 0.0).map(|p| p.1.sqrt()).sum();
        let new = if !(a > 0.0) || 2.0 * b.abs() <= alpha * kink {
            0.0
        } else {
            // h(t) = f'(t) / 2 for t > 0 is increasing, negative at 0+ and
            // nonnegative at |b| / a
            let target = b.abs();
            let h = |t: f64| {
                let mut d = a * t - target;
                let mut dd = a;
                for &(_, g, c) in &rest {
                    let q = c + g * t * t;
                    if q > 0.0 {
                        let sq = q.sqrt();
                        d += 0.5 * alpha * g * t / sq;
                        dd += 0.5 * alpha * g * c / (q * sq);
                    }
                }
                (d, dd)
            };
            let (mut lo, mut hi) = (0.0, target / a);
            let mut t = if z0 * b > 0.0 { z0.abs().min(hi) } else { 0.5 * hi };
            for _ in 0..100 {
                let (d, dd) = h(t);
                if d == 0.0 {
                    break;
                }
                if d < 0.0 {
                    lo = t;
                } else {
                    hi = t;
                }
                let newton = t - d / dd;
                let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
                let moved = (next - t).abs();
                t = next;
                if hi - lo <= 1e-15 * hi || moved <= 1e-15 * t {
                    break;
                }
            }
            t.copysign(b)
        };
        let new = if objective(new) <= objective(z0) { new } else { z0 };
        for &(r, g, c) in &rest {
            sums[r] = c - eps + g * new * new;
        }
        new
    }

    /// Penalty and gradient in one pass.
    pub fn penalty_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.penalty(z)?, self.grad(z)?))
    }
}

/// Convenience wrapper: penalty of a code laid out on a `width × height` grid.
pub fn group_penalty(z: &[f64], width: usize, height: usize, wrap: bool, cfg: &GroupSparsityConfig) -> Result<f64> {
    GroupPenalty::new(*cfg, width, height, wrap)?.penalty(z)
}

pub fn group_penalty_grad(
    z: &[f64],
    width: usize,
    height: usize,
    wrap: bool,
    cfg: &GroupSparsityConfig,
) -> Result<Vec<f64>> {
    GroupPenalty::new(*cfg, width, height, wrap)?.grad(z)
}

/// Complex-cell outputs of every pool.
pub fn complex_pool_activation(
    z: &[f64],
    width: usize,
    height: usize,
    wrap: bool,
    cfg: &GroupSparsityConfig,
) -> Result<Vec<f64>> {
    GroupPenalty::new(*cfg, width, height, wrap)?.pooled(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(sigma: f64, eps: f64) -> GroupSparsityConfig {
        GroupSparsityConfig { epsilon: eps, ..GroupSparsityConfig::with_sigma(0.7, sigma) }
    }

    #[test]
    fn coordinate_min_matches_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for (trial, eps) in [0.0, 1e-6, 1e-2].into_iter().cycle().take(30).enumerate() {
            let (w, h) = (6, 5);
            let wrap = trial % 2 == 0;
            let gp = GroupPenalty::new(cfg(1.2, eps), w, h, wrap).unwrap();
            let mut z: Vec<f64> =
                (0..w * h).map(|_| if rng.gen_bool(0.5) { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
            let u = rng.gen_range(0..w * h);
            let (a, b) = (rng.gen_range(0.5..2.0), rng.gen_range(-2.0..2.0));
            let f = |z: &[f64], t: f64| a * t * t - 2.0 * b * t + gp.penalty(z).unwrap();
            let mut sums = gp.pool_sums(&z).unwrap();
            let z0 = z[u];
            let best = gp.coordinate_min(u, a, b, z0, &mut sums);
            z[u] = best;
            let fb = f(&z, best);
            for (s, e) in sums.iter().zip(gp.pool_sums(&z).unwrap()) {
                assert!((s - e).abs() < 1e-12);
            }
            for k in -400..=400 {
                let t = best + k as f64 * 1e-3;
                z[u] = t;
                assert!(f(&z, t) >= fb - 1e-9, "trial {trial}: {t} beats {best}");
            }
        }
    }

    #[test]
    fn zero_code() {
        let c = cfg(1.5, 1e-6);
        let z = vec![0.0; 100];
        assert_eq!(group_penalty(&z, 10, 10, false, &c).unwrap(), 0.0);
        assert!(group_penalty_grad(&z, 10, 10, false, &c).unwrap().iter().all(|&g| g == 0.0));
        assert!(complex_pool_activation(&z, 10, 10, true, &c).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_unit_reduces_to_sqrt_weights() {
        let c = cfg(1.5, 0.0);
        let (w, h) = (21usize, 21usize);
        let mut z = vec![0.0; w * h];
        let v: f64 = -1.3;
        z[10 * w + 10] = v;
        let r = c.support_radius.floor() as i64;
        let mut expected = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                if ((dx * dx + dy * dy) as f64) <= c.support_radius * c.support_radius {
                    expected += (-((dx * dx + dy * dy) as f64) / (4.0 * c.sigma * c.sigma)).exp();
                }
            }
        }
        expected *= c.alpha * v.abs();
        let p = group_penalty(&z, w, h, false, &c).unwrap();
        assert!((p - expected).abs() < 1e-12, "{p} vs {expected}");
    }

    #[test]
    fn impulse_pools_into_a_gaussian_bump() {
        let c = cfg(1.5, 0.0);
        let (w, h) = (15usize, 15usize);
        let mut z = vec![0.0; w * h];
        z[7 * w + 7] = 2.0;
        let pooled = complex_pool_activation(&z, w, h, false, &c).unwrap();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (dx, dy) = (x - 7, y - 7);
                let inside = ((dx * dx + dy * dy) as f64) <= c.support_radius * c.support_radius;
                let expected = if inside { 2.0 * c.weight(dx, dy).sqrt() } else { 0.0 };
                assert!((pooled[(y as usize) * w + x as usize] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_radius_is_plain_l1() {
        let c = GroupSparsityConfig { alpha: 0.3, sigma: 1.0, support_radius: 0.0, epsilon: 0.0 };
        let z: Vec<f64> = (0..12).map(|i| (i as f64 - 5.5) * 0.37).collect();
        let l1: f64 = z.iter().map(|v| v.abs()).sum();
        assert!((group_penalty(&z, 4, 3, false, &c).unwrap() - 0.3 * l1).abs() < 1e-12);
    }

    #[test]
    fn singular_case_is_signalled() {
        let c = cfg(1.0, 0.0);
        let z = vec![0.0; 9];
        assert!(matches!(group_penalty_grad(&z, 3, 3, false, &c), Err(Error::Singular(_))));
    }

    #[test]
    fn adjacent_beats_separated_everywhere() {
        // every adjacent placement on a 10x10 grid costs less than the same two
        // units placed so that no pool sees both (sum of single-unit penalties)
        for &sigma in &[0.5, 1.0, 1.5, 2.5] {
            let gp = GroupPenalty::new(cfg(sigma, 0.0), 10, 10, false).unwrap();
            let pen = |units: &[usize]| {
                let mut z = vec![0.0; 100];
                for &u in units {
                    z[u] = 1.0;
                }
                gp.penalty(&z).unwrap()
            };
            for y in 0..10 {
                for x in 0..10 {
                    let a = y * 10 + x;
                    for b in [(x + 1 < 10).then(|| a + 1), (y + 1 < 10).then(|| a + 10)].into_iter().flatten() {
                        assert!(pen(&[a, b]) < pen(&[a]) + pen(&[b]), "sigma {sigma} at {a},{b}");
                    }
                }
            }
        }
    }

    #[test]
    fn adjacent_pair_below_separated_pair_on_torus() {
        for &sigma in &[0.5, 1.0, 1.5] {
            let gp = GroupPenalty::new(cfg(sigma, 0.0), 20, 20, true).unwrap();
            let mut near = vec![0.0; 400];
            near[0] = 1.0;
            near[1] = 1.0;
            let mut far = vec![0.0; 400];
            far[0] = 1.0;
            far[10 * 20 + 10] = 1.0;
            assert!(gp.penalty(&near).unwrap() < gp.penalty(&far).unwrap());
        }
    }

    proptest! {
        #[test]
        fn gradient_is_odd(z in proptest::collection::vec(-2.0f64..2.0, 36)) {
            let gp = GroupPenalty::new(cfg(1.2, 1e-6), 6, 6, true).unwrap();
            let g = gp.grad(&z).unwrap();
            let neg: Vec<f64> = z.iter().map(|v| -v).collect();
            let gn = gp.grad(&neg).unwrap();
            for (a, b) in g.iter().zip(&gn) {
                prop_assert!((a + b).abs() < 1e-12);
            }
            let p1 = gp.pooled(&z).unwrap();
            let p2 = gp.pooled(&neg).unwrap();
            prop_assert_eq!(p1, p2);
        }

        #[test]
        fn monotone_in_magnitude(z in proptest::collection::vec(-2.0f64..2.0, 25), i in 0usize..25, bump in 0.0f64..1.0) {
            let gp = GroupPenalty::new(cfg(1.0, 1e-6), 5, 5, false).unwrap();
            let mut z2 = z.clone();
            z2[i] = z[i].signum() * (z[i].abs() + bump);
            prop_assert!(gp.penalty(&z2).unwrap() >= gp.penalty(&z).unwrap() - 1e-12);
        }
    }
}
