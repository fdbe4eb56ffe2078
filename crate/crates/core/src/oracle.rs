//! Desk-scale ground truth by exhaustive enumeration: exact conditioned
//! shape measures straight from the definition (rational arithmetic), the
//! same measures from the recursive root decomposition, truncations of the
//! limit measure, and total-variation distances between shape measures.

use crate::error::{Error, Result};
use crate::offspring::{Family, OffspringDistribution};
use crate::transition::TransitionTable;
use crate::tree::PlanarTree;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::collections::BTreeMap;

/// Enumeration budget (number of shapes / prefix trees).
pub const ENUM_BUDGET: u128 = 1_000_000;

/// A probability measure on serialized tree shapes, with the untracked
/// complement reported as residual.
#[derive(Clone, Debug)]
pub struct ShapeMeasure {
    pub label: String,
    pub probs: BTreeMap<String, f64>,
    pub residual: f64,
}

impl ShapeMeasure {
    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }
}

/// ½ Σ |a − b| over the union of supports, plus ½(residual_a + residual_b):
/// the tightest generic bound when the untracked masses cannot be matched.
pub fn tv_distance(a: &ShapeMeasure, b: &ShapeMeasure) -> f64 {
    let mut acc = 0.0;
    for (key, &pa) in &a.probs {
        acc += (pa - b.probs.get(key).copied().unwrap_or(0.0)).abs();
    }
    for (key, &pb) in &b.probs {
        if !a.probs.contains_key(key) {
            acc += pb;
        }
    }
    0.5 * acc + 0.5 * (a.residual + b.residual)
}

/// All pruned shapes with m levels and target j, child counts ≤ c, as
/// serialized count strings. Counting first keeps the budget honest.
fn count_shapes(m: usize, j: usize, c: usize, memo: &mut BTreeMap<(usize, usize), u128>) -> u128 {
    if m == 0 {
        return if j == 1 { 1 } else { 0 };
    }
    if j == 0 {
        return 0;
    }
    if let Some(&v) = memo.get(&(m, j)) {
        return v;
    }
    let mut total: u128 = 0;
    for r in 1..=j.min(c) {
        // ordered compositions of j into r positive parts
        total = total.saturating_add(compositions(j, r).iter().fold(0u128, |acc, parts| {
            let prod = parts
                .iter()
                .map(|&p| count_shapes(m - 1, p, c, memo))
                .fold(1u128, |a, b| a.saturating_mul(b));
            acc.saturating_add(prod)
        }));
    }
    memo.insert((m, j), total);
    total
}

fn compositions(j: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(r);
    fn rec(j: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if r == 1 {
            cur.push(j);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for first in 1..=j - (r - 1) {
            cur.push(first);
            rec(j - first, r - 1, cur, out);
            cur.pop();
        }
    }
    if r >= 1 && j >= r {
        rec(j, r, &mut cur, &mut out);
    }
    out
}

/// Every pruned shape of height n with k conditioned leaves and per-node
/// child counts ≤ max_children.
pub fn enumerate_pruned(n: usize, k: usize, max_children: usize) -> Result<Vec<PlanarTree>> {
    if k == 0 {
        return Err(Error::Domain("k must be positive".into()));
    }
    let mut memo = BTreeMap::new();
    let total = count_shapes(n, k, max_children, &mut memo);
    if total > ENUM_BUDGET {
        return Err(Error::Budget(format!(
            "{total} shapes exceed the enumeration budget"
        )));
    }
    // build lists level by level, indexed by target j
    let mut lists: Vec<Vec<Vec<Vec<u32>>>> = Vec::with_capacity(n + 1);
    let mut level0 = vec![Vec::new(); k + 1];
    if k >= 1 {
        level0[1] = vec![vec![0u32]];
    }
    lists.push(level0);
    for m in 1..=n {
        let mut level = vec![Vec::new(); k + 1];
        for (j, slot) in level.iter_mut().enumerate().skip(1) {
            for r in 1..=j.min(max_children) {
                for parts in compositions(j, r) {
                    let mut stack: Vec<(usize, Vec<u32>)> = vec![(0, vec![r as u32])];
                    while let Some((idx, prefix)) = stack.pop() {
                        if idx == parts.len() {
                            slot.push(prefix);
                            continue;
                        }
                        for sub in &lists[m - 1][parts[idx]] {
                            let mut next = prefix.clone();
                            next.extend_from_slice(sub);
                            stack.push((idx + 1, next));
                        }
                    }
                }
            }
        }
        lists.push(level);
    }
    lists[n][k]
        .iter()
        .map(|counts| PlanarTree::from_counts(counts.clone()))
        .collect()
}

fn deriv_weight(
    d: &OffspringDistribution,
    table: &TransitionTable,
    tree: &PlanarTree,
    n: usize,
) -> Result<f64> {
    let mut prob = 1.0;
    for (i, &cnt) in tree.counts().iter().enumerate() {
        if cnt > 0 {
            let m = n - tree.depths()[i] as usize; // levels below this node
            let q_prev = table.q_u(m - 1);
            prob *= d.gf_derivative_over_factorial(cnt as usize, q_prev)?;
        }
    }
    Ok(prob)
}

/// The conditioned pruned-tree law at (n, k) by enumerating shapes and
/// multiplying the per-node decomposition weights; the probability of shape
/// τ collapses to Π_internal f^{(r_v)}(q_{m_v−1})/r_v! divided by P_n(1,k).
pub fn exact_pgw(
    table: &TransitionTable,
    n: usize,
    k: usize,
    max_children: usize,
) -> Result<ShapeMeasure> {
    if n > table.u_max() || k > table.j_max() {
        return Err(Error::Budget(format!(
            "(n, k) = ({n}, {k}) outside table ({}, {})",
            table.u_max(),
            table.j_max()
        )));
    }
    let d = table.offspring().clone();
    let denom = table.p_one(n, k);
    if denom <= 0.0 {
        return Err(Error::Domain(format!("P_{n}(1,{k}) = 0")));
    }
    let mut probs = BTreeMap::new();
    let mut total = 0.0;
    for tree in enumerate_pruned(n, k, max_children)? {
        let p = deriv_weight(&d, table, &tree, n)? / denom;
        total += p;
        probs.insert(tree.serialize(), p);
    }
    Ok(ShapeMeasure {
        label: format!("pgw(n={n}, k={k})"),
        probs,
        residual: (1.0 - total).max(0.0),
    })
}

/// Truncation of the limit measure at height cap U: the height-u slice is
/// the conditioned law at (u, k) restricted to branching roots, weighted by
/// R_u/π_k.
pub fn exact_st(
    table: &TransitionTable,
    k: usize,
    u_cap: usize,
    max_children: usize,
    pi_k: f64,
) -> Result<ShapeMeasure> {
    if k < 2 {
        return Err(Error::Domain("the limit measure needs k ≥ 2".into()));
    }
    let ratios = table.ratio_seq(k);
    let mut probs = BTreeMap::new();
    let mut total = 0.0;
    for u in 1..=u_cap {
        if table.p_one(u, k) <= 0.0 {
            // heights the offspring support cannot reach carry no mass
            continue;
        }
        let slice = exact_pgw(table, u, k, max_children)?;
        let w = ratios[u] / pi_k;
        for (key, &p) in &slice.probs {
            let z1: u32 = key.split(',').next().unwrap().parse().unwrap();
            if z1 >= 2 {
                let mass = w * p;
                total += mass;
                probs.insert(key.clone(), mass);
            }
        }
    }
    Ok(ShapeMeasure {
        label: format!("st(k={k}, U={u_cap})"),
        probs,
        residual: (1.0 - total).max(0.0),
    })
}

/// Exact-rational conditioned law for finite rational offspring tables.
#[derive(Clone, Debug)]
pub struct RationalMeasure {
    pub probs: BTreeMap<String, BigRational>,
    /// P(Z_n = k) within the enumerated family.
    pub event_prob: BigRational,
}

fn rational_pmf(d: &OffspringDistribution) -> Result<Vec<BigRational>> {
    match d.family() {
        Family::Table(p) => Ok(p
            .iter()
            .map(|&x| BigRational::from_float(x).expect("finite pmf entry"))
            .collect()),
        _ => Err(Error::Domain(
            "exact rational arithmetic needs a finite table pmf".into(),
        )),
    }
}

fn binom_big(n: usize, k: usize) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// f^{(r)}(s)/r! = Σ_j C(j,r) p_j s^{j−r} over rationals.
fn rational_deriv(p: &[BigRational], r: usize, s: &BigRational) -> BigRational {
    let mut acc = BigRational::zero();
    for (j, pj) in p.iter().enumerate().skip(r) {
        let mut term = pj * BigRational::from(binom_big(j, r));
        for _ in 0..j - r {
            term *= s;
        }
        acc += term;
    }
    acc
}

/// Truncated composition rows over rationals: rows[u][j] = P_u(1, j) for
/// j ≤ width, via Horner evaluation of the pmf polynomial at the previous
/// row.
fn rational_rows(p: &[BigRational], depth: usize, width: usize) -> Vec<Vec<BigRational>> {
    let mut rows = Vec::with_capacity(depth + 1);
    let mut first = vec![BigRational::zero(); width + 1];
    if width >= 1 {
        first[1] = BigRational::one();
    }
    rows.push(first);
    for u in 0..depth {
        let prev = &rows[u];
        let mut acc = vec![BigRational::zero(); width + 1];
        for pj in p.iter().rev() {
            // acc = acc * prev + pj, truncated at width
            let mut next = vec![BigRational::zero(); width + 1];
            for (i, ai) in acc.iter().enumerate() {
                if ai.is_zero() {
                    continue;
                }
                for (j, bj) in prev.iter().enumerate().take(width + 1 - i) {
                    if !bj.is_zero() {
                        next[i + j] += ai * bj;
                    }
                }
            }
            next[0] += pj;
            acc = next;
        }
        rows.push(acc);
    }
    rows
}

/// The recursive-decomposition law over exact rationals.
pub fn exact_pgw_rational(
    d: &OffspringDistribution,
    n: usize,
    k: usize,
    max_children: usize,
) -> Result<RationalMeasure> {
    let p = rational_pmf(d)?;
    let rows = rational_rows(&p, n, k);
    let denom = rows[n][k].clone();
    if denom.is_zero() {
        return Err(Error::Domain(format!(
            "conditioning event Z_{n} = {k} has probability zero"
        )));
    }
    let mut probs = BTreeMap::new();
    for tree in enumerate_pruned(n, k, max_children)? {
        let mut w = BigRational::one();
        for (i, &cnt) in tree.counts().iter().enumerate() {
            if cnt > 0 {
                let m = n - tree.depths()[i] as usize;
                w *= rational_deriv(&p, cnt as usize, &rows[m - 1][0]);
            }
        }
        if !w.is_zero() {
            probs.insert(tree.serialize(), w / &denom);
        }
    }
    Ok(RationalMeasure {
        probs,
        event_prob: denom,
    })
}

/// The same law straight from the definition: enumerate every prefix tree
/// (nodes above level n carry pmf factors, level-n nodes none), keep those
/// with Z_n = k, group by pruned shape, normalize. No decomposition theory
/// is used anywhere in this path.
pub fn exact_conditional_bruteforce(
    d: &OffspringDistribution,
    n: usize,
    k: usize,
    max_children: usize,
) -> Result<RationalMeasure> {
    let p = rational_pmf(d)?;
    if let Some(sup) = d.support_max() {
        if sup > max_children {
            return Err(Error::Domain(format!(
                "max_children = {max_children} truncates the pmf support {sup}"
            )));
        }
    }
    // count prefix trees level by level
    let c = max_children.min(p.len() - 1);
    let mut counts: Vec<u128> = vec![1];
    for _ in 0..n {
        let prev = counts[counts.len() - 1];
        let mut tot: u128 = 0;
        for r in 0..=c {
            tot = tot.saturating_add(prev.saturating_pow(r as u32));
        }
        counts.push(tot);
    }
    if counts[n] > ENUM_BUDGET {
        return Err(Error::Budget(format!(
            "{} prefix trees exceed the enumeration budget",
            counts[n]
        )));
    }
    // levels[m] = all subtrees with m levels of pmf-weighted nodes:
    // (counts, probability, number of level-n descendants)
    let mut level: Vec<(Vec<u32>, BigRational, u64)> = vec![(vec![0], BigRational::one(), 1)];
    for _ in 0..n {
        let mut next: Vec<(Vec<u32>, BigRational, u64)> = Vec::new();
        for r in 0..=c {
            if p[r].is_zero() {
                continue;
            }
            let mut stack: Vec<(usize, Vec<u32>, BigRational, u64)> =
                vec![(0, vec![r as u32], p[r].clone(), 0)];
            while let Some((filled, cnts, prob, z)) = stack.pop() {
                if filled == r {
                    next.push((cnts, prob, z));
                    continue;
                }
                for (sc, sp, sz) in &level {
                    let mut cnts2 = cnts.clone();
                    cnts2.extend_from_slice(sc);
                    stack.push((filled + 1, cnts2, &prob * sp, z + sz));
                }
            }
        }
        level = next;
    }
    let mut grouped: BTreeMap<String, BigRational> = BTreeMap::new();
    let mut event = BigRational::zero();
    for (cnts, prob, z) in level {
        if z != k as u64 {
            continue;
        }
        event += &prob;
        let pruned = PlanarTree::from_counts(cnts)?.prune(n);
        *grouped
            .entry(pruned.serialize())
            .or_insert_with(BigRational::zero) += prob;
    }
    if event.is_zero() {
        return Err(Error::Domain(format!(
            "conditioning event Z_{n} = {k} has probability zero"
        )));
    }
    let probs = grouped
        .into_iter()
        .map(|(key, v)| (key, v / &event))
        .collect();
    Ok(RationalMeasure {
        probs,
        event_prob: event,
    })
}

impl RationalMeasure {
    pub fn to_float(&self, label: &str) -> ShapeMeasure {
        let probs: BTreeMap<String, f64> = self
            .probs
            .iter()
            .map(|(k, v)| (k.clone(), rational_to_f64(v)))
            .collect();
        let total: f64 = probs.values().sum();
        ShapeMeasure {
            label: label.to_string(),
            probs,
            residual: (1.0 - total).max(0.0),
        }
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    let numer = r.numer();
    let denom = r.denom();
    // scale down big integers in tandem to stay in f64 range
    let nb = numer.bits().max(denom.bits());
    if nb > 500 {
        let shift = (nb - 500) as usize;
        let n2 = numer >> shift;
        let d2 = denom >> shift;
        bigint_to_f64(&n2) / bigint_to_f64(&d2)
    } else {
        bigint_to_f64(numer) / bigint_to_f64(denom)
    }
}

fn bigint_to_f64(x: &BigInt) -> f64 {
    let mut acc = 0.0f64;
    let (sign, digits) = x.to_u32_digits();
    for &d in digits.iter().rev() {
        acc = acc * 4_294_967_296.0 + d as f64;
    }
    if sign == num_bigint::Sign::Minus {
        -acc
    } else {
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::make_offspring;
    use approx::assert_abs_diff_eq;

    #[test]
    fn enumeration_small_cases() {
        assert_eq!(enumerate_pruned(2, 2, 2).unwrap().len(), 2);
        let one = enumerate_pruned(1, 3, 4).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].serialize(), "3,0,0,0");
        let path = enumerate_pruned(1, 1, 2).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path[0].serialize(), "1,0");
        // n=30, k=2: one shape per branch height
        assert_eq!(enumerate_pruned(30, 2, 2).unwrap().len(), 30);
    }

    #[test]
    fn pgw_geometric_hand_values() {
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 8, 4).unwrap();
        let m = exact_pgw(&t, 2, 2, 2).unwrap();
        assert_abs_diff_eq!(m.probs["1,2,0,0"], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(m.probs["2,1,0,1,0"], 0.25, epsilon = 1e-12);
        assert!(m.residual < 1e-12);
        // k = 1: the path, with probability 1
        let path = exact_pgw(&t, 3, 1, 2).unwrap();
        assert_eq!(path.probs.len(), 1);
        assert_abs_diff_eq!(path.probs["1,1,1,0"], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn recursion_equals_definition() {
        // the central correctness check: decomposition vs raw definition,
        // exact rational equality, several pmfs and (n, k)
        for spec in ["table:0.5,0.25,0.25", "table:0.3,0.3,0.4", "table:0.6,0.3,0.1"] {
            let d = make_offspring(spec).unwrap();
            for (n, k) in [(1usize, 1usize), (2, 1), (2, 2), (3, 2), (3, 3), (4, 2), (4, 4)] {
                if k > 1 << n {
                    continue;
                }
                let a = exact_pgw_rational(&d, n, k, 2).unwrap();
                let b = exact_conditional_bruteforce(&d, n, k, 2).unwrap();
                assert_eq!(a.probs, b.probs, "{spec} n={n} k={k}");
                assert_eq!(a.event_prob, b.event_prob, "{spec} n={n} k={k}");
                // complete support: probabilities sum to exactly 1
                let total: BigRational = a.probs.values().sum();
                assert!(total.is_one(), "{spec} n={n} k={k}: Σ = {total}");
            }
        }
    }

    #[test]
    fn rational_agrees_with_float_table() {
        let d = make_offspring("table:0.3,0.3,0.4").unwrap();
        let t = TransitionTable::build(&d, 8, 4).unwrap();
        let float_m = exact_pgw(&t, 3, 2, 2).unwrap();
        let rat_m = exact_pgw_rational(&d, 3, 2, 2).unwrap().to_float("r");
        for (key, &p) in &float_m.probs {
            assert_abs_diff_eq!(p, rat_m.probs[key], epsilon = 1e-12);
        }
    }

    #[test]
    fn stem_decomposition_identity_rational() {
        // P(stem of length n−u, then τ) = (P_n(1,1)/P_n(1,k)) ·
        // (P_u(1,k)/P_u(1,1)) · PGW_u(τ), exactly
        let d = make_offspring("table:0.5,0.25,0.25").unwrap();
        let p = rational_pmf(&d).unwrap();
        let (n, u, k) = (4usize, 2usize, 2usize);
        let rows = rational_rows(&p, n, k);
        let big = exact_pgw_rational(&d, n, k, 2).unwrap();
        let small = exact_pgw_rational(&d, u, k, 2).unwrap();
        let factor = &rows[n][1] / &rows[n][k] * &rows[u][k] / &rows[u][1];
        for (key, pu) in &small.probs {
            let stem_key = format!("{}{}", "1,".repeat(n - u), key);
            let lhs = big.probs.get(&stem_key).cloned().unwrap_or_default();
            assert_eq!(lhs, &factor * pu, "shape {key}");
        }
    }

    #[test]
    fn st_truncations() {
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 64, 4).unwrap();
        let m1 = exact_st(&t, 2, 1, 2, 1.0).unwrap();
        assert_eq!(m1.probs.len(), 1);
        assert_abs_diff_eq!(m1.probs["2,0,0"], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m1.residual, 0.5, epsilon = 1e-12);

        // height-u slice mass telescopes: R_u − R_{u−1} over π_k
        let m = exact_st(&t, 2, 10, 2, 1.0).unwrap();
        for u in 1..=10usize {
            let slice: f64 = m
                .probs
                .iter()
                .filter(|(key, _)| {
                    PlanarTree::parse(key).unwrap().height() == u
                })
                .map(|(_, &p)| p)
                .sum();
            let expect = 1.0 / (u as f64 * (u as f64 + 1.0));
            assert_abs_diff_eq!(slice, expect, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(m.total() + m.residual, 1.0, epsilon = 1e-9);

        // deeper truncations differ by at most the residual
        let m15 = exact_st(&t, 2, 15, 2, 1.0).unwrap();
        assert!(tv_distance(&m, &m15) <= m.residual + 1e-12);
    }

    #[test]
    fn st_slice_branching_identity() {
        // the height-u slice of the limit measure, evaluated two ways:
        // enumerated truncation vs the branching product formula
        // (π_1π_1/π_2)(P_{u−1}(1,1)²/P_u(1,1))(f''(q_{u−1})/2)
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 64, 4).unwrap();
        let m = exact_st(&t, 2, 6, 2, 1.0).unwrap();
        for u in 1..=6usize {
            // the cherry at height u: root branches into two unary stems
            let sub = format!("{}0", "1,".repeat(u - 1));
            let key = format!("2,{sub},{sub}");
            let lhs = m.probs.get(&key).copied().unwrap_or(-1.0);
            let fpp_half = d.gf_derivative_over_factorial(2, t.q_u(u - 1)).unwrap();
            let rhs = t.p_one(u - 1, 1).powi(2) / t.p_one(u, 1) * fpp_half;
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn tv_basics() {
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 8, 4).unwrap();
        let a = exact_pgw(&t, 2, 2, 2).unwrap();
        assert_eq!(tv_distance(&a, &a), 0.0);
        let b = exact_pgw(&t, 3, 2, 2).unwrap();
        // disjoint supports (heights differ): TV = 1
        assert_abs_diff_eq!(tv_distance(&a, &b), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn bruteforce_guards() {
        let d = make_offspring("table:0.3,0.3,0.4").unwrap();
        // k beyond reach: Z_2 = 5 > 2² impossible
        assert!(exact_conditional_bruteforce(&d, 2, 5, 2).is_err());
        // truncating the support is refused
        assert!(exact_conditional_bruteforce(&d, 2, 2, 1).is_err());
        let g = make_offspring("geometric:0.5").unwrap();
        assert!(exact_pgw_rational(&g, 2, 2, 2).is_err());
    }
}
