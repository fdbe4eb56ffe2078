//! Branching random walk layer: displacement laws with cumulant generating
//! functions, spatial trees, span and gap statistics, and the representative
//! vs within-subtree span decomposition.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tree::PlanarTree;
use rand::Rng;
use serde::Serialize;
use statrs::distribution::Normal;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Mean-zero, unit-variance displacement laws with everywhere-finite Λ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DisplacementDistribution {
    Gaussian,
    /// ±1 with probability ½ each.
    Rademacher,
    /// Uniform on [−√3, √3].
    Uniform,
}

impl DisplacementDistribution {
    pub fn parse(spec: &str) -> Result<Self> {
        match spec {
            "gaussian" => Ok(Self::Gaussian),
            "rademacher" => Ok(Self::Rademacher),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Parse(format!(
                "unknown displacement '{other}' (expected gaussian, rademacher or uniform)"
            ))),
        }
    }

    pub fn spec(&self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Rademacher => "rademacher",
            Self::Uniform => "uniform",
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            Self::Gaussian => {
                let n = Normal::new(0.0, 1.0).unwrap();
                rng.inner().sample::<f64, _>(n)
            }
            Self::Rademacher => {
                if rng.unit() < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            Self::Uniform => (2.0 * rng.unit() - 1.0) * SQRT3,
        }
    }

    /// Λ(t) = log E[e^{tX}].
    pub fn cgf(&self, t: f64) -> f64 {
        match self {
            Self::Gaussian => 0.5 * t * t,
            Self::Rademacher => {
                // log cosh t, stable for large |t|
                let a = t.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            Self::Uniform => {
                let a = SQRT3 * t;
                let a2 = a * a;
                if a.abs() < 1e-3 {
                    // log(sinh a / a) = a²/6 − a⁴/180 + O(a⁶)
                    a2 / 6.0 - a2 * a2 / 180.0
                } else {
                    let aa = a.abs();
                    aa + (-(-2.0 * aa).exp()).ln_1p() - (2.0 * aa).ln()
                }
            }
        }
    }

    /// Λ'(t); strictly increasing since Λ is strictly convex.
    pub fn cgf_prime(&self, t: f64) -> f64 {
        match self {
            Self::Gaussian => t,
            Self::Rademacher => t.tanh(),
            Self::Uniform => {
                let a = SQRT3 * t;
                if a.abs() < 1e-2 {
                    // t − t³/5 + 2t⁵/35 + O(t⁷)
                    t - t.powi(3) / 5.0 + 2.0 * t.powi(5) / 35.0
                } else {
                    SQRT3 * (1.0 / a.tanh()) - 1.0 / t
                }
            }
        }
    }

    /// Supremum of attainable slopes Λ'(t); `None` when unbounded.
    pub fn slope_bound(&self) -> Option<f64> {
        match self {
            Self::Gaussian => None,
            Self::Rademacher => Some(1.0),
            Self::Uniform => Some(SQRT3),
        }
    }

    /// Λ*(x) = sup_t (tx − Λ(t)), via a safeguarded Newton solve of Λ'(t) = x.
    pub fn legendre(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        if let Some(b) = self.slope_bound() {
            if x.abs() >= b * (1.0 - 1e-12) {
                return Err(Error::Domain(format!(
                    "slope {x} outside the attainable range (|x| < {b}) of {}",
                    self.spec()
                )));
            }
        }
        // bracket: Λ' is odd and increasing
        let mut lo = 0.0f64;
        let mut hi = 1.0f64.copysign(x);
        let mut tries = 0;
        while (self.cgf_prime(hi) - x) * x.signum() < 0.0 {
            hi *= 2.0;
            tries += 1;
            if tries > 200 {
                return Err(Error::Numeric(format!(
                    "failed to bracket Λ'(t) = {x} for {}",
                    self.spec()
                )));
            }
        }
        if x < 0.0 {
            std::mem::swap(&mut lo, &mut hi);
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.cgf_prime(t) - x;
            if g > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            // Newton step with bisection fallback; Λ'' ≈ finite difference
            let h = 1e-6 * (1.0 + t.abs());
            let dg = (self.cgf_prime(t + h) - self.cgf_prime(t - h)) / (2.0 * h);
            let mut next = if dg > 0.0 { t - g / dg } else { f64::NAN };
            if !(lo..=hi).contains(&next) && !(hi..=lo).contains(&next) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() < 1e-14 * (1.0 + t.abs()) {
                t = next;
                break;
            }
            t = next;
        }
        Ok(t * x - self.cgf(t))
    }
}

/// A planar tree with one displacement per non-root node and cached
/// root-relative positions.
///
/// Prune and cut keep the original position values (cut records the shift in
/// `origin` instead of re-summing), so span and gap statistics agree bitwise
/// with the ones computed before the operation.
#[derive(Clone, Debug)]
pub struct SpatialTree {
    tree: PlanarTree,
    /// disp[i] = displacement on the edge into node i; disp[0] = 0.
    disp: Vec<f64>,
    pos: Vec<f64>,
    /// Position of the current root in the original tree's frame.
    origin: f64,
}

/// Attaches i.i.d. displacements to every non-root node in preorder.
pub fn attach(tree: &PlanarTree, d: DisplacementDistribution, rng: &mut RngStream) -> SpatialTree {
    let disp: Vec<f64> = (0..tree.len())
        .map(|i| if i == 0 { 0.0 } else { d.sample(rng) })
        .collect();
    SpatialTree::from_displacements(tree.clone(), disp)
}

/// Test hook: all displacements zero.
pub fn attach_zero(tree: &PlanarTree) -> SpatialTree {
    SpatialTree::from_displacements(tree.clone(), vec![0.0; tree.len()])
}

impl SpatialTree {
    pub fn from_displacements(tree: PlanarTree, disp: Vec<f64>) -> Self {
        assert_eq!(tree.len(), disp.len());
        let parents = tree.parents();
        let mut pos = vec![0.0; tree.len()];
        for i in 1..tree.len() {
            pos[i] = pos[parents[i]] + disp[i];
        }
        Self {
            tree,
            disp,
            pos,
            origin: 0.0,
        }
    }

    pub fn tree(&self) -> &PlanarTree {
        &self.tree
    }

    pub fn displacements(&self) -> &[f64] {
        &self.disp
    }

    /// Position of node i relative to the current root.
    pub fn position(&self, i: usize) -> f64 {
        self.pos[i] - self.origin
    }

    /// Positions of the last-generation nodes in lexicographic order, in the
    /// internal (untranslated) frame.
    fn last_generation_raw(&self) -> Vec<f64> {
        let h = self.tree.height() as u32;
        self.tree
            .depths()
            .iter()
            .zip(&self.pos)
            .filter(|(&d, _)| d == h)
            .map(|(_, &p)| p)
            .collect()
    }

    /// Span R = max − min and the successive gaps of the sorted
    /// last-generation positions.
    pub fn span_gaps(&self) -> (f64, Vec<f64>) {
        let mut v = self.last_generation_raw();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if v.len() <= 1 {
            return (0.0, Vec::new());
        }
        let r = v[v.len() - 1] - v[0];
        let gaps = v.windows(2).map(|w| w[1] - w[0]).collect();
        (r, gaps)
    }

    /// (R^S, R^G): R^S is the span of the lexicographically first leaf of
    /// each first-generation subtree; R^G the maximum within-subtree span.
    pub fn span_decomposition(&self) -> Result<(f64, f64)> {
        if self.tree.z_count(1) == 0 {
            return Err(Error::Domain(
                "span decomposition needs at least one first-generation subtree".into(),
            ));
        }
        let h = self.tree.height() as u32;
        let depths = self.tree.depths();
        for i in 0..self.tree.len() {
            if self.tree.counts()[i] == 0 && depths[i] != h {
                return Err(Error::Domain("leaves at mixed depths".into()));
            }
        }
        let mut rep_min = f64::INFINITY;
        let mut rep_max = f64::NEG_INFINITY;
        let mut r_g = 0.0f64;
        for c in self.tree.children(0) {
            let end = self.tree.subtree_end(c);
            let mut first = None;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in c..end {
                if depths[i] == h {
                    first.get_or_insert(self.pos[i]);
                    lo = lo.min(self.pos[i]);
                    hi = hi.max(self.pos[i]);
                }
            }
            let rep = first.expect("pruned subtree reaches the last generation");
            rep_min = rep_min.min(rep);
            rep_max = rep_max.max(rep);
            r_g = r_g.max(hi - lo);
        }
        Ok((rep_max - rep_min, r_g))
    }

    /// Prune at height n, keeping the displacements and positions of the
    /// retained nodes.
    pub fn prune(&self, n: usize) -> SpatialTree {
        let pruned = self.tree.prune(n);
        if pruned.len() == 1 && self.tree.len() > 1 {
            return SpatialTree {
                tree: pruned,
                disp: vec![0.0],
                pos: vec![self.pos[0]],
                origin: self.origin,
            };
        }
        // same keep rule as PlanarTree::prune, applied to the payload
        let depths = self.tree.depths();
        let parents = self.tree.parents();
        let mut maxd: Vec<u32> = depths.to_vec();
        for i in (1..self.tree.len()).rev() {
            let p = parents[i];
            if maxd[i] > maxd[p] {
                maxd[p] = maxd[i];
            }
        }
        let mut disp = Vec::new();
        let mut pos = Vec::new();
        for i in 0..self.tree.len() {
            if (depths[i] as usize) <= n && (maxd[i] as usize) >= n {
                disp.push(self.disp[i]);
                pos.push(self.pos[i]);
            }
        }
        SpatialTree {
            tree: pruned,
            disp,
            pos,
            origin: self.origin,
        }
    }

    /// Cut at height n; the new root is pinned at 0 by accumulating the
    /// translation into `origin` rather than altering stored positions.
    pub fn cut(&self, n: usize) -> SpatialTree {
        if self.tree.z_count(n) == 0 {
            return SpatialTree {
                tree: PlanarTree::singleton(),
                disp: vec![0.0],
                pos: vec![self.pos[0]],
                origin: self.pos[0],
            };
        }
        let cut_tree = self.tree.cut(n);
        // locate the cut root: it is the unique node whose subtree serializes
        // to the cut tree; recover it by rerunning the ancestor walk
        let parents = self.tree.parents();
        let depths = self.tree.depths();
        let mut first = None;
        let mut last = 0;
        for (i, &d) in depths.iter().enumerate() {
            if d as usize == n {
                first.get_or_insert(i);
                last = i;
            }
        }
        let mut a = first.unwrap();
        let mut b = last;
        while a != b {
            if depths[a] >= depths[b] {
                a = parents[a];
            } else {
                b = parents[b];
            }
        }
        let end = self.tree.subtree_end(a);
        let mut disp = self.disp[a..end].to_vec();
        disp[0] = 0.0;
        SpatialTree {
            tree: cut_tree,
            disp,
            pos: self.pos[a..end].to_vec(),
            origin: self.pos[a],
        }
    }
}
