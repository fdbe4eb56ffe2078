//! Exact samplers: the unconditioned branching tree, the pruned tree
//! conditioned on generation size (root decomposition, no rejection on the
//! tree body), and the limit measure reached by growing the conditioning
//! level.

use crate::error::{Error, Result};
use crate::offspring::{Family, OffspringDistribution};
use crate::rng::RngStream;
use crate::transition::{positive_part_powers, TransitionTable};
use crate::tree::PlanarTree;
use rand::Rng;
use statrs::distribution::Poisson;
use std::sync::Arc;

/// Hard cap on nodes generated by `sample_gw`.
pub const NODE_BUDGET: usize = 10_000_000;
/// Byte budget for the per-depth convolution weight tables.
const W_BYTE_BUDGET: usize = 1 << 31;
const P_FLOOR: f64 = 1e-280;

/// One offspring draw from the law itself (not conditioned on anything).
pub fn sample_offspring(d: &OffspringDistribution, rng: &mut RngStream) -> u32 {
    match d.family() {
        Family::Geometric(alpha) => {
            let u = rng.unit();
            let x = (1.0 - u).ln() / (1.0 - alpha).ln();
            x.floor().min(1e9) as u32
        }
        Family::Poisson(lambda) => {
            let p = Poisson::new(*lambda).unwrap();
            rng.inner().sample::<f64, _>(p) as u32
        }
        Family::Table(p) => {
            let u = rng.unit();
            let mut acc = 0.0;
            for (j, &pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    return j as u32;
                }
            }
            (p.len() - 1) as u32
        }
    }
}

/// Depth-first sample of the branching tree, truncated at `height_cap`.
/// The flag reports whether truncation actually removed offspring.
pub fn sample_gw(
    d: &OffspringDistribution,
    height_cap: usize,
    rng: &mut RngStream,
) -> Result<(PlanarTree, bool)> {
    let mut counts: Vec<u32> = Vec::new();
    let mut stack: Vec<usize> = vec![0]; // depths of nodes awaiting emission
    let mut truncated = false;
    while let Some(depth) = stack.pop() {
        if counts.len() >= NODE_BUDGET {
            return Err(Error::Budget(format!(
                "tree exceeded the {NODE_BUDGET}-node budget"
            )));
        }
        let c = sample_offspring(d, rng);
        if depth == height_cap {
            truncated |= c > 0;
            counts.push(0);
        } else {
            counts.push(c);
            for _ in 0..c {
                stack.push(depth + 1);
            }
        }
    }
    Ok((PlanarTree::from_counts(counts)?, truncated))
}

/// Precomputed tables for conditioned sampling at one offspring law:
/// derivative weights f^{(r)}(q_u)/r! and the positive-part convolution
/// powers W_r(u, ·) of each transition row, for depths u < n_max and orders
/// r ≤ k_max.
#[derive(Clone)]
pub struct PgwContext {
    table: Arc<TransitionTable>,
    k_max: usize,
    n_max: usize,
    /// deriv[u][r] = f^{(r)}(q_u)/r! for u in 0..n_max.
    deriv: Vec<Vec<f64>>,
    /// w[u][r][j] = W_r(u, j) for u in 0..n_max.
    w: Vec<Vec<Vec<f64>>>,
    /// Height pmf of the limit measure: (u, P(H = u)) plus residual mass,
    /// present after `with_st`.
    st_pmf: Option<(Vec<(usize, f64)>, f64)>,
    st_cdf: Vec<f64>,
}

impl PgwContext {
    pub fn new(table: Arc<TransitionTable>, n_max: usize, k_max: usize) -> Result<Self> {
        if k_max == 0 || k_max > table.j_max() {
            return Err(Error::Budget(format!(
                "k = {k_max} outside table width {}",
                table.j_max()
            )));
        }
        let deepest = table.deepest_usable(P_FLOOR);
        if n_max > deepest {
            return Err(Error::Budget(format!(
                "depth {n_max} exceeds usable table depth {deepest} (row underflow)"
            )));
        }
        let bytes = n_max * (k_max + 1) * (k_max + 1) * 8;
        if bytes > W_BYTE_BUDGET {
            return Err(Error::Budget(format!(
                "weight tables would need {bytes} bytes"
            )));
        }
        let d = table.offspring().clone();
        let mut deriv = Vec::with_capacity(n_max);
        let mut w = Vec::with_capacity(n_max);
        for u in 0..n_max {
            let q_u = table.q_u(u);
            let mut row_d = vec![0.0; k_max + 1];
            for (r, slot) in row_d.iter_mut().enumerate().skip(1) {
                *slot = d.gf_derivative_over_factorial(r, q_u)?;
            }
            deriv.push(row_d);
            w.push(positive_part_powers(table.row(u), k_max));
        }
        Ok(Self {
            table,
            k_max,
            n_max,
            deriv,
            w,
            st_pmf: None,
            st_cdf: Vec::new(),
        })
    }

    /// Extends the context with the height distribution of the limit
    /// measure, truncated once the exact residual 1 − R_U/π_k drops below
    /// `eps`. `pi_k` is the ratio limit for this context's k.
    pub fn with_st(mut self, pi_k: f64, eps: f64) -> Result<Self> {
        if self.k_max < 2 {
            return Err(Error::Domain(
                "the limit measure is defined for k ≥ 2".into(),
            ));
        }
        let diffs = self.table.ratio_diff(self.k_max)?;
        let mut pmf = Vec::new();
        let mut residual = 1.0;
        for &(u, r_u, d_u) in &diffs {
            if u > self.n_max {
                break;
            }
            pmf.push((u, d_u / pi_k));
            residual = 1.0 - r_u / pi_k;
            if residual < eps {
                break;
            }
        }
        if residual >= eps {
            return Err(Error::Budget(format!(
                "height tail {residual:.3e} still above eps = {eps} at depth {}",
                self.n_max
            )));
        }
        let total: f64 = pmf.iter().map(|&(_, p)| p).sum();
        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|&(_, p)| {
                acc += p / total;
                acc
            })
            .collect();
        self.st_pmf = Some((pmf, residual));
        self.st_cdf = cdf;
        Ok(self)
    }

    pub fn table(&self) -> &TransitionTable {
        &self.table
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// (u, P(H = u)) pairs and the exact truncated tail mass.
    pub fn st_height_pmf(&self) -> Result<&(Vec<(usize, f64)>, f64)> {
        self.st_pmf
            .as_ref()
            .ok_or_else(|| Error::Domain("context built without the height table".into()))
    }

    /// The conditioned offspring count r of a node with m levels below it
    /// and j conditioned descendants, together with the ordered split of j.
    /// `min_r` restricts the support (used for the root of the limit
    /// measure, where the law is conditioned on r ≥ 2; restricting the
    /// weights is the collapsed form of redrawing until r ≥ 2).
    fn draw_split(
        &self,
        m: usize,
        j: usize,
        min_r: usize,
        rng: &mut RngStream,
        parts: &mut Vec<usize>,
    ) -> Result<usize> {
        let u = m - 1;
        let wu = &self.w[u];
        let du = &self.deriv[u];
        let r_hi = j.min(self.k_max);
        let mut total = 0.0;
        for r in min_r..=r_hi {
            total += du[r] * wu[r][j];
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numeric(format!(
                "no admissible offspring count at depth-to-go {m}, target {j}"
            )));
        }
        let mut target = rng.unit() * total;
        let mut r = 0;
        for cand in min_r..=r_hi {
            let wgt = du[cand] * wu[cand][j];
            if wgt > 0.0 {
                r = cand; // last positive weight, the fp-rounding fallback
            }
            target -= wgt;
            if target < 0.0 && wgt > 0.0 {
                break;
            }
        }
        parts.clear();
        let row = self.table.row(u);
        let mut t = j;
        for rho in (2..=r).rev() {
            // P(part = c) = P_u(1,c) · W_{ρ−1}(u, t−c) / W_ρ(u, t)
            let denom = wu[rho][t];
            let mut target = rng.unit() * denom;
            let mut pick = 0;
            for c in 1..=t - (rho - 1) {
                let wgt = row[c] * wu[rho - 1][t - c];
                if wgt > 0.0 {
                    pick = c;
                }
                target -= wgt;
                if target < 0.0 && wgt > 0.0 {
                    break;
                }
            }
            parts.push(pick);
            t -= pick;
        }
        parts.push(t);
        Ok(r)
    }

    fn sample_conditioned(
        &self,
        n: usize,
        k: usize,
        root_min_r: usize,
        rng: &mut RngStream,
    ) -> Result<PlanarTree> {
        if k > self.k_max || n > self.n_max {
            return Err(Error::Budget(format!(
                "(n, k) = ({n}, {k}) outside precomputed range ({}, {})",
                self.n_max, self.k_max
            )));
        }
        if n == 0 {
            return if k == 1 {
                Ok(PlanarTree::singleton())
            } else {
                Err(Error::Domain("Z_0 = 1, so k must be 1 at depth 0".into()))
            };
        }
        let mut counts: Vec<u32> = Vec::new();
        // (levels below, conditioned descendant count, is_root)
        let mut stack: Vec<(usize, usize, bool)> = vec![(n, k, true)];
        let mut parts: Vec<usize> = Vec::new();
        while let Some((m, j, is_root)) = stack.pop() {
            if m == 0 {
                counts.push(0);
                continue;
            }
            let min_r = if is_root { root_min_r } else { 1 };
            let r = self.draw_split(m, j, min_r, rng, &mut parts)?;
            counts.push(r as u32);
            for i in (0..r).rev() {
                stack.push((m - 1, parts[i], false));
            }
        }
        PlanarTree::from_counts(counts)
    }
}

/// One tree from the conditioned pruned law at level n, generation size k.
pub fn sample_pgw(ctx: &PgwContext, n: usize, k: usize, rng: &mut RngStream) -> Result<PlanarTree> {
    ctx.sample_conditioned(n, k, 1, rng)
}

/// One tree from the (truncated) limit measure: height H from the exact
/// pmf, then the conditioned tree at (H, k) with the root restricted to
/// r ≥ 2 branches.
pub fn sample_st(ctx: &PgwContext, rng: &mut RngStream) -> Result<PlanarTree> {
    let (pmf, _) = ctx.st_height_pmf()?;
    let u01 = rng.unit();
    let idx = ctx.st_cdf.partition_point(|&c| c <= u01);
    let (height, _) = pmf[idx.min(pmf.len() - 1)];
    ctx.sample_conditioned(height, ctx.k_max, 2, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::make_offspring;
    use crate::stats::chi_square_test;
    use crate::transition::TransitionTable;
    use approx::assert_abs_diff_eq;

    fn ctx(spec: &str, n_max: usize, k_max: usize) -> PgwContext {
        let d = make_offspring(spec).unwrap();
        let t = TransitionTable::build(&d, n_max.max(64), k_max.max(8)).unwrap();
        PgwContext::new(Arc::new(t), n_max, k_max).unwrap()
    }

    #[test]
    fn gw_replay() {
        let d = make_offspring("geometric:0.5").unwrap();
        let (a, _) = sample_gw(&d, 20, &mut RngStream::new(7, 3)).unwrap();
        let (b, _) = sample_gw(&d, 20, &mut RngStream::new(7, 3)).unwrap();
        assert_eq!(a.serialize(), b.serialize());
    }

    #[test]
    fn gw_mostly_roots_when_p0_dominates() {
        let d = make_offspring("table:0.98,0.01,0.01").unwrap();
        let mut rng = RngStream::new(1, 0);
        let n = 20_000;
        let singles = (0..n)
            .filter(|_| sample_gw(&d, 30, &mut rng).unwrap().0.len() == 1)
            .count();
        let frac = singles as f64 / n as f64;
        assert!((frac - 0.98).abs() < 0.005, "singleton fraction {frac}");
    }

    #[test]
    fn gw_root_degree_chi_square() {
        let d = make_offspring("geometric:0.5").unwrap();
        let mut rng = RngStream::new(2, 0);
        let n = 200_000u64;
        let mut obs = vec![0u64; 12];
        for _ in 0..n {
            let (t, _) = sample_gw(&d, 1, &mut rng).unwrap();
            let z = (t.counts()[0] as usize).min(11);
            obs[z] += 1;
        }
        let probs: Vec<f64> = (0..12)
            .map(|k| {
                if k < 11 {
                    0.5f64.powi(k as i32 + 1)
                } else {
                    0.5f64.powi(11)
                }
            })
            .collect();
        let t = chi_square_test(&obs, &probs, n, 5.0).unwrap();
        assert!(t.p_value > 0.01, "p = {}", t.p_value);
    }

    #[test]
    fn poisson_offspring_mean() {
        let d = make_offspring("poisson:0.9").unwrap();
        let mut rng = RngStream::new(3, 0);
        let n = 100_000;
        let s: u64 = (0..n).map(|_| sample_offspring(&d, &mut rng) as u64).sum();
        assert!((s as f64 / n as f64 - 0.9).abs() < 0.01);
    }

    #[test]
    fn pgw_root_degree_example() {
        // geometric:0.5, n = 2, k = 2: P(root keeps one child) = 3/4
        let c = ctx("geometric:0.5", 2, 2);
        let mut rng = RngStream::new(4, 0);
        let n = 200_000;
        let ones = (0..n)
            .filter(|_| {
                let t = sample_pgw(&c, 2, 2, &mut rng).unwrap();
                t.counts()[0] == 1
            })
            .count();
        let frac = ones as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.005, "P(r=1) ≈ {frac}");
    }

    #[test]
    fn pgw_k1_is_the_path() {
        let c = ctx("table:0.3,0.3,0.4", 6, 2);
        let mut rng = RngStream::new(5, 0);
        for _ in 0..50 {
            let t = sample_pgw(&c, 6, 1, &mut rng).unwrap();
            assert_eq!(t.serialize(), "1,1,1,1,1,1,0");
        }
    }

    #[test]
    fn pgw_shape_invariants() {
        let c = ctx("poisson:1.0", 8, 4);
        let mut rng = RngStream::new(6, 0);
        for _ in 0..500 {
            let t = sample_pgw(&c, 8, 4, &mut rng).unwrap();
            assert_eq!(t.height(), 8);
            assert_eq!(t.z_count(8), 4);
            // pruned: every non-leaf has a descendant at level n
            for (i, &cnt) in t.counts().iter().enumerate() {
                if cnt == 0 {
                    assert_eq!(t.depths()[i], 8, "leaf off the last level");
                }
            }
        }
    }

    #[test]
    fn st_height_pmf_geometric() {
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 4096, 8).unwrap();
        let c = PgwContext::new(Arc::new(t), 4096, 2)
            .unwrap()
            .with_st(1.0, 1e-3)
            .unwrap();
        let (pmf, residual) = c.st_height_pmf().unwrap();
        assert_abs_diff_eq!(pmf[0].1, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pmf[1].1, 1.0 / 6.0, epsilon = 1e-12);
        for &(u, p) in pmf.iter().take(50) {
            assert_abs_diff_eq!(p, 1.0 / (u as f64 * (u as f64 + 1.0)), epsilon = 1e-12);
        }
        let total: f64 = pmf.iter().map(|&(_, p)| p).sum();
        assert_abs_diff_eq!(total + residual, 1.0, epsilon = 1e-9);
        assert!(*residual < 1e-3);

        let d3 = make_offspring("geometric:0.5").unwrap();
        let t3 = TransitionTable::build(&d3, 4096, 8).unwrap();
        let c3 = PgwContext::new(Arc::new(t3), 4096, 3)
            .unwrap()
            .with_st(1.0, 1e-3)
            .unwrap();
        let (pmf3, _) = c3.st_height_pmf().unwrap();
        assert_abs_diff_eq!(pmf3[0].1, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn st_sample_support_and_heights() {
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 2048, 8).unwrap();
        let c = PgwContext::new(Arc::new(t), 2048, 2)
            .unwrap()
            .with_st(1.0, 1e-3)
            .unwrap();
        let mut rng = RngStream::new(8, 0);
        let n = 100_000u64;
        let mut height_counts = vec![0u64; 16];
        for _ in 0..n {
            let tr = sample_st(&c, &mut rng).unwrap();
            assert!(tr.counts()[0] >= 2, "root must branch");
            assert_eq!(tr.z_count(tr.height()), 2);
            let h = tr.height().min(15);
            height_counts[h] += 1;
        }
        // χ² against the truncated height law, heights 15+ pooled
        let (pmf, _) = c.st_height_pmf().unwrap();
        let total: f64 = pmf.iter().map(|&(_, p)| p).sum();
        let mut probs = vec![0.0; 16];
        for &(u, p) in pmf.iter() {
            probs[u.min(15)] += p / total;
        }
        let t = chi_square_test(&height_counts[1..], &probs[1..], n, 5.0).unwrap();
        assert!(t.p_value > 0.01, "height χ² p = {}", t.p_value);
    }

    #[test]
    fn st_u1_is_the_cherry() {
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 64, 8).unwrap();
        let c = PgwContext::new(Arc::new(t), 64, 2)
            .unwrap()
            .with_st(1.0, 0.3)
            .unwrap();
        let mut rng = RngStream::new(9, 0);
        for _ in 0..200 {
            let tr = sample_st(&c, &mut rng).unwrap();
            if tr.height() == 1 {
                assert_eq!(tr.serialize(), "2,0,0");
            }
        }
    }

    #[test]
    fn pgw_replay_across_contexts() {
        let a = {
            let c = ctx("table:0.3,0.3,0.4", 5, 3);
            sample_pgw(&c, 5, 3, &mut RngStream::new(10, 2))
                .unwrap()
                .serialize()
        };
        let b = {
            let c = ctx("table:0.3,0.3,0.4", 5, 3);
            sample_pgw(&c, 5, 3, &mut RngStream::new(10, 2))
                .unwrap()
                .serialize()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn context_guards() {
        let d = make_offspring("geometric:0.5").unwrap();
        let t = Arc::new(TransitionTable::build(&d, 32, 4).unwrap());
        assert!(PgwContext::new(t.clone(), 32, 9).is_err());
        assert!(PgwContext::new(t.clone(), 64, 2).is_err());
        let c = PgwContext::new(t, 32, 2).unwrap();
        assert!(sample_pgw(&c, 40, 2, &mut RngStream::new(0, 0)).is_err());
        assert!(sample_st(&c, &mut RngStream::new(0, 0)).is_err());
    }
}
