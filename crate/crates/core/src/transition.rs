//! Transition probabilities P_n(i,j) of the generation-size chain and the
//! ratio-limit data π_j, v_j.
//!
//! Row u of the table holds the power-series coefficients of the iterate f_u
//! truncated at degree J, so P_u(1,j) = rows[u][j] and q_u = rows[u][0].
//! Composition is degree-local: dropping coefficients above J never perturbs
//! the ones at or below J, so table entries carry only rounding error.

use crate::error::{Error, Result};
use crate::offspring::{Family, OffspringDistribution};
use crate::stats::neville_to_zero;
use serde::Serialize;

#[derive(Clone, Debug)]
pub struct TransitionTable {
    offspring: OffspringDistribution,
    u_max: usize,
    j_max: usize,
    /// rows[u][j] = P_u(1, j), row length j_max + 1.
    rows: Vec<Vec<f64>>,
    /// Per-row mass above degree J: 1 − Σ_j rows[u][j].
    deficit: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioLimits {
    /// π_1..π_J (index 0 holds π_1 = 1).
    pub pi: Vec<f64>,
    /// v_1..v_J, empty in the critical case.
    pub v: Vec<f64>,
    pub gamma: f64,
    pub q: f64,
    pub n_used: usize,
    pub convergence_gap: f64,
}

impl RatioLimits {
    pub fn pi(&self, j: usize) -> f64 {
        self.pi[j - 1]
    }

    pub fn v(&self, j: usize) -> f64 {
        self.v[j - 1]
    }
}

/// Builds the transition table for generations 0..=U and populations 0..=J.
pub fn build_table(d: &OffspringDistribution, u_max: usize, j_max: usize) -> Result<TransitionTable> {
    TransitionTable::build(d, u_max, j_max)
}

impl TransitionTable {
    pub fn build(d: &OffspringDistribution, u_max: usize, j_max: usize) -> Result<Self> {
        if u_max < 1 || j_max < 1 {
            return Err(Error::Domain("need U ≥ 1 and J ≥ 1".into()));
        }
        let mut rows = Vec::with_capacity(u_max + 1);
        let mut deficit = Vec::with_capacity(u_max + 1);
        let mut row0 = vec![0.0; j_max + 1];
        if j_max >= 1 {
            row0[1] = 1.0;
        }
        rows.push(row0);
        deficit.push(0.0);
        for u in 0..u_max {
            let next = compose(d, &rows[u], j_max)?;
            let covered: f64 = next.iter().sum();
            deficit.push((1.0 - covered).max(0.0));
            rows.push(next);
        }
        Ok(Self {
            offspring: d.clone(),
            u_max,
            j_max,
            rows,
            deficit,
        })
    }

    pub fn offspring(&self) -> &OffspringDistribution {
        &self.offspring
    }

    pub fn u_max(&self) -> usize {
        self.u_max
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    /// P_u(1, j).
    pub fn p_one(&self, u: usize, j: usize) -> f64 {
        self.rows[u][j]
    }

    /// q_u = P_u(1, 0).
    pub fn q_u(&self, u: usize) -> f64 {
        self.rows[u][0]
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.rows[u]
    }

    pub fn deficit(&self, u: usize) -> f64 {
        self.deficit[u]
    }

    /// P_u(i, j): i independent ancestor lines, i-fold convolution of row u.
    pub fn transition_multi(&self, i: usize, u: usize, j: usize) -> Result<f64> {
        if i < 1 {
            return Err(Error::Domain("need i ≥ 1".into()));
        }
        if i > 32 {
            return Err(Error::Budget(format!(
                "multi-ancestor convolution capped at i = 32, got {i}"
            )));
        }
        if j > self.j_max {
            return Err(Error::Budget(format!(
                "population {j} exceeds table width {}",
                self.j_max
            )));
        }
        if u > self.u_max {
            return Err(Error::Budget(format!(
                "generation {u} exceeds table depth {}",
                self.u_max
            )));
        }
        let mut acc = vec![0.0; j + 1];
        acc[0] = 1.0;
        for _ in 0..i {
            acc = convolve_trunc(&acc, &self.rows[u], j);
        }
        Ok(acc[j])
    }

    /// R_n = P_n(1,k)/P_n(1,1) for n = 0..=U.
    pub fn ratio_seq(&self, k: usize) -> Vec<f64> {
        (0..=self.u_max)
            .map(|n| {
                if n == 0 {
                    if k == 1 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    self.rows[n][k] / self.rows[n][1]
                }
            })
            .collect()
    }

    /// The increment sequence (n, R_n, R_n − R_{n−1}) for n = 1..=U.
    ///
    /// The difference is evaluated by the cancellation-free identity
    ///   R_n − R_{n−1} = Σ_{r=2}^{k} (f^{(r)}(q_{n−1})/r!) · W_r(n−1, k) / P_n(1,1),
    /// where W_r(u, j) is the j-th coefficient of (row_u minus its constant
    /// term)^r. Direct subtraction underflows catastrophically once the two
    /// ratios agree to more digits than the difference carries.
    pub fn ratio_diff(&self, k: usize) -> Result<Vec<(usize, f64, f64)>> {
        if k < 2 {
            return Err(Error::Domain("ratio differences need k ≥ 2".into()));
        }
        if k > self.j_max {
            return Err(Error::Budget(format!(
                "k = {k} exceeds table width {}",
                self.j_max
            )));
        }
        let rs = self.ratio_seq(k);
        let mut out = Vec::with_capacity(self.u_max);
        for n in 1..=self.u_max {
            let q_prev = self.rows[n - 1][0];
            let w = positive_part_powers(&self.rows[n - 1], k);
            let mut num = 0.0;
            for r in 2..=k {
                let dr = self.offspring.gf_derivative_over_factorial(r, q_prev)?;
                num += dr * w[r][k];
            }
            let diff = num / self.rows[n][1];
            out.push((n, rs[n], diff));
        }
        Ok(out)
    }

    /// Largest n with P_n(1,1) above the underflow guard.
    pub fn deepest_usable(&self, floor: f64) -> usize {
        let mut n = self.u_max;
        while n > 1 && self.rows[n][1] < floor {
            n -= 1;
        }
        n
    }

    /// Ratio limits π_j (and v_j when m ≠ 1).
    ///
    /// Without Richardson acceleration the value is the ratio at the deepest
    /// usable row and the pre-condition is that the last relative increment is
    /// below `tol`. Critical ratios converge like 1/n, so deep tables alone
    /// cannot reach tight tolerances; `richardson` switches to Neville
    /// extrapolation in 1/n over a dyadic ladder of rows and applies `tol` to
    /// the gap between the two nested extrapolations.
    pub fn ratio_limits(&self, j_max: usize, tol: f64, richardson: bool) -> Result<RatioLimits> {
        if j_max > self.j_max {
            return Err(Error::Budget(format!(
                "requested J = {j_max} exceeds table width {}",
                self.j_max
            )));
        }
        let ext = self.offspring.extinction(1e-14)?;
        let n_used = self.deepest_usable(1e-280);
        // Monotonicity of P_n(1,j)/P_n(1,1) in n, with rounding slack.
        for j in 1..=j_max {
            let mut prev = -1.0;
            for n in 1..=n_used {
                let r = self.rows[n][j] / self.rows[n][1];
                if r < prev * (1.0 - 1e-12) - 1e-13 {
                    return Err(Error::Numeric(format!(
                        "ratio P_n(1,{j})/P_n(1,1) decreased at n = {n}: {r} < {prev}"
                    )));
                }
                prev = r;
            }
        }
        let (pi, gap) = if richardson {
            let mut ladder = Vec::new();
            let mut n = n_used;
            while ladder.len() < 6 && n >= 4 {
                ladder.push(n);
                n /= 2;
            }
            if ladder.len() < 3 {
                return Err(Error::Budget(
                    "table too shallow for Richardson extrapolation".into(),
                ));
            }
            ladder.reverse();
            let xs: Vec<f64> = ladder.iter().map(|&n| 1.0 / n as f64).collect();
            let mut pi = Vec::with_capacity(j_max);
            let mut gap = 0.0f64;
            for j in 1..=j_max {
                let ys: Vec<f64> = ladder
                    .iter()
                    .map(|&n| self.rows[n][j] / self.rows[n][1])
                    .collect();
                let full = neville_to_zero(&xs, &ys);
                let nested = neville_to_zero(&xs[1..], &ys[1..]);
                pi.push(full);
                gap = gap.max((full - nested).abs() / full.abs().max(1e-300));
            }
            (pi, gap)
        } else {
            let mut pi = Vec::with_capacity(j_max);
            let mut gap = 0.0f64;
            for j in 1..=j_max {
                let last = self.rows[n_used][j] / self.rows[n_used][1];
                let prev = self.rows[n_used - 1][j] / self.rows[n_used - 1][1];
                pi.push(last);
                gap = gap.max((last - prev).abs() / last.abs().max(1e-300));
            }
            (pi, gap)
        };
        if gap > tol {
            return Err(Error::Budget(format!(
                "ratio limits not converged: gap {gap:.3e} above tolerance {tol:.3e}; deepen the table"
            )));
        }
        let v = if self.offspring.is_critical() {
            Vec::new()
        } else {
            let ln_g = ext.gamma.ln();
            (1..=j_max)
                .map(|j| self.rows[n_used][j] * (-(n_used as f64) * ln_g).exp())
                .collect()
        };
        Ok(RatioLimits {
            pi,
            v,
            gamma: ext.gamma,
            q: ext.q,
            n_used,
            convergence_gap: gap,
        })
    }
}

/// Coefficients j = 0..=j_max of f(P(s)) where P is given by `row`.
fn compose(d: &OffspringDistribution, row: &[f64], j_max: usize) -> Result<Vec<f64>> {
    match d.family() {
        Family::Table(p) => {
            // Horner in the polynomial argument.
            let mut acc = vec![0.0; j_max + 1];
            acc[0] = *p.last().unwrap();
            for &c in p.iter().rev().skip(1) {
                acc = convolve_trunc(&acc, row, j_max);
                acc[0] += c;
            }
            Ok(acc)
        }
        Family::Geometric(a) => {
            // G = α / (1 − (1−α)P): series division, degree-local and exact.
            let b = 1.0 - a;
            let den0 = 1.0 - b * row[0];
            let mut g = vec![0.0; j_max + 1];
            g[0] = a / den0;
            for j in 1..=j_max {
                let mut s = 0.0;
                for i in 1..=j {
                    s += row[i] * g[j - i];
                }
                g[j] = b * s / den0;
            }
            Ok(g)
        }
        Family::Poisson(l) => {
            // G = exp(λ(P−1)): G' = λP'G gives j·g_j = λ Σ i·p_i·g_{j−i}.
            let mut g = vec![0.0; j_max + 1];
            g[0] = (l * (row[0] - 1.0)).exp();
            for j in 1..=j_max {
                let mut s = 0.0;
                for i in 1..=j {
                    s += i as f64 * row[i] * g[j - i];
                }
                g[j] = l * s / j as f64;
            }
            Ok(g)
        }
    }
}

fn convolve_trunc(a: &[f64], b: &[f64], j_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; j_max + 1];
    for (i, &ai) in a.iter().enumerate().take(j_max + 1) {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate().take(j_max + 1 - i) {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// w[r][j] = coefficient j of (row − row[0])^r, for r = 0..=k, j = 0..=k.
/// These are the composition weights over ordered all-surviving parts:
/// w[r][j] = Σ_{k_1+..+k_r = j, k_i ≥ 1} Π P_u(1, k_i).
pub fn positive_part_powers(row: &[f64], k: usize) -> Vec<Vec<f64>> {
    let mut pos = vec![0.0; k + 1];
    for j in 1..=k.min(row.len() - 1) {
        pos[j] = row[j];
    }
    let mut w = Vec::with_capacity(k + 1);
    let mut unit = vec![0.0; k + 1];
    unit[0] = 1.0;
    w.push(unit);
    for r in 1..=k {
        w.push(convolve_trunc(&w[r - 1], &pos, k));
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::make_offspring;
    use approx::assert_abs_diff_eq;

    fn geometric_p(n: usize, k: usize) -> f64 {
        let n = n as f64;
        n.powi(k as i32 - 1) / (n + 1.0).powi(k as i32 + 1)
    }

    #[test]
    fn geometric_closed_form_rows() {
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 50, 10).unwrap();
        for n in 1..=50 {
            for k in 1..=10 {
                assert_abs_diff_eq!(t.p_one(n, k), geometric_p(n, k), epsilon = 1e-12);
            }
            // q_n = 1 − 1/(n+1)
            assert_abs_diff_eq!(t.q_u(n), 1.0 - 1.0 / (n as f64 + 1.0), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(t.p_one(2, 3), 4.0 / 81.0, epsilon = 1e-14);
    }

    #[test]
    fn first_row_is_pmf() {
        for spec in ["geometric:0.5", "poisson:0.8", "table:0.3,0.3,0.4"] {
            let d = make_offspring(spec).unwrap();
            let t = TransitionTable::build(&d, 3, 8).unwrap();
            for j in 0..=8 {
                assert_abs_diff_eq!(t.p_one(1, j), d.pmf(j), epsilon = 1e-14);
            }
            assert_eq!(t.p_one(0, 1), 1.0);
            assert_eq!(t.p_one(0, 0), 0.0);
        }
    }

    #[test]
    fn rows_match_gf_iterates_pointwise() {
        // row_u evaluated at s must reproduce f_u(s) up to the tracked deficit
        for spec in ["geometric:0.5", "poisson:1.0", "table:0.3,0.3,0.4"] {
            let d = make_offspring(spec).unwrap();
            let t = TransitionTable::build(&d, 30, 40).unwrap();
            for u in 0..=30 {
                for i in 1..=9 {
                    let s = 0.1 * i as f64;
                    let poly: f64 = t
                        .row(u)
                        .iter()
                        .enumerate()
                        .map(|(j, &c)| c * s.powi(j as i32))
                        .sum();
                    let exact = d.gf_iterate(u, s).unwrap();
                    assert!(exact - poly >= -1e-10);
                    assert!(exact - poly <= t.deficit(u) + 1e-10);
                }
                assert_abs_diff_eq!(t.q_u(u), d.gf_iterate(u, 0.0).unwrap(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hand_composed_coefficient() {
        let d = make_offspring("table:0.3,0.3,0.4").unwrap();
        let t = TransitionTable::build(&d, 2, 4).unwrap();
        assert_abs_diff_eq!(t.p_one(2, 2), 0.252, epsilon = 1e-14);
    }

    #[test]
    fn multi_line_convolution() {
        let d = make_offspring("table:0.3,0.3,0.4").unwrap();
        let t = TransitionTable::build(&d, 2, 4).unwrap();
        assert_abs_diff_eq!(t.transition_multi(2, 1, 2).unwrap(), 0.33, epsilon = 1e-14);
        // all i lines extinct by generation u
        for i in 1..=3 {
            for u in 0..=2 {
                assert_abs_diff_eq!(
                    t.transition_multi(i, u, 0).unwrap(),
                    t.q_u(u).powi(i as i32),
                    epsilon = 1e-13
                );
            }
        }
        let g = make_offspring("geometric:0.5").unwrap();
        let tg = TransitionTable::build(&g, 1, 2).unwrap();
        assert_abs_diff_eq!(tg.transition_multi(1, 1, 1).unwrap(), 0.25, epsilon = 1e-15);
        assert!(t.transition_multi(33, 1, 2).is_err());
        assert!(t.transition_multi(2, 1, 9).is_err());
    }

    #[test]
    fn derivative_ratio_identity() {
        // f'(q_{n−1}) = P_n(1,1)/P_{n−1}(1,1)
        for spec in ["geometric:0.5", "table:0.3,0.3,0.4", "table:0.5,0.3,0.2"] {
            let d = make_offspring(spec).unwrap();
            let t = TransitionTable::build(&d, 40, 4).unwrap();
            for n in 1..=40 {
                let lhs = d.gf_derivative(1, t.q_u(n - 1)).unwrap();
                let rhs = t.p_one(n, 1) / t.p_one(n - 1, 1);
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn ratio_diff_geometric_closed_form() {
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 200, 4).unwrap();
        let seq = t.ratio_diff(2).unwrap();
        for &(n, rn, diff) in &seq {
            let nf = n as f64;
            assert_abs_diff_eq!(rn, nf / (nf + 1.0), epsilon = 1e-12);
            assert_abs_diff_eq!(diff, 1.0 / (nf * (nf + 1.0)), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(seq[9].2, 1.0 / 110.0, epsilon = 1e-15);
        // first ratio is p(k)/p(1)
        assert_abs_diff_eq!(seq[0].1, d.pmf(2) / d.pmf(1), epsilon = 1e-15);
    }

    #[test]
    fn ratio_diff_matches_direct_subtraction_when_safe() {
        for spec in ["table:0.3,0.3,0.4", "poisson:1.0", "table:0.5,0.3,0.2"] {
            let d = make_offspring(spec).unwrap();
            let t = TransitionTable::build(&d, 30, 6).unwrap();
            for k in 2..=4 {
                let seq = t.ratio_diff(k).unwrap();
                let rs = t.ratio_seq(k);
                for &(n, _, diff) in &seq {
                    let direct = rs[n] - rs[n - 1];
                    assert_abs_diff_eq!(diff, direct, epsilon = 1e-9 * (1.0 + direct.abs()));
                }
            }
        }
    }

    #[test]
    fn ratios_monotone_and_pi_one() {
        for spec in ["geometric:0.5", "table:0.3,0.3,0.4", "table:0.5,0.3,0.2"] {
            let d = make_offspring(spec).unwrap();
            let t = TransitionTable::build(&d, 400, 6).unwrap();
            let crit = d.is_critical();
            let rl = t
                .ratio_limits(6, if crit { 1e-4 } else { 1e-9 }, false)
                .unwrap();
            assert_eq!(rl.pi(1), 1.0);
            for j in 1..=6 {
                assert!(rl.pi(j) > 0.0);
            }
        }
    }

    #[test]
    fn geometric_pi_all_one_via_richardson() {
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 2048, 6).unwrap();
        let rl = t.ratio_limits(6, 1e-9, true).unwrap();
        for j in 1..=6 {
            assert_abs_diff_eq!(rl.pi(j), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn subcritical_v_limits_and_functional_equation() {
        let d = make_offspring("table:0.5,0.3,0.2").unwrap();
        let t = TransitionTable::build(&d, 400, 24).unwrap();
        let rl = t.ratio_limits(24, 1e-9, false).unwrap();
        assert_abs_diff_eq!(rl.gamma, 0.7, epsilon = 1e-13);
        assert_abs_diff_eq!(rl.v(1), 0.17841393, epsilon = 1e-7);
        assert_abs_diff_eq!(rl.v(2), 0.16331164, epsilon = 1e-7);
        // Q(f(s)) = γ Q(s) with Q(s) = v_0 + Σ_{j≥1} v_j s^j, Q(q) = 0
        let v0: f64 = -(1..=24).map(|j| rl.v(j) * rl.q.powi(j as i32)).sum::<f64>();
        let q_of = |s: f64| v0 + (1..=24).map(|j| rl.v(j) * s.powi(j as i32)).sum::<f64>();
        for i in 0..=18 {
            let s = 0.05 * i as f64;
            let resid = q_of(d.gf_eval(s).unwrap()) - rl.gamma * q_of(s);
            assert!(
                resid.abs() < 1e-6,
                "functional equation residual {resid:.3e} at s = {s}"
            );
        }
        // Q'(q) = 1 normalization
        let qp: f64 = (1..=24).map(|j| j as f64 * rl.v(j)).sum();
        assert_abs_diff_eq!(qp, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn shifted_ratio_approaches_gamma_pi() {
        // P_{n+1}(1,j)/P_n(1,1) → γ·π_j
        for spec in ["geometric:0.5", "table:0.3,0.3,0.4"] {
            let d = make_offspring(spec).unwrap();
            let deep = if d.is_critical() { 16_384 } else { 300 };
            let t = TransitionTable::build(&d, deep, 5).unwrap();
            let rl = t.ratio_limits(5, 1e-3, d.is_critical()).unwrap();
            let n = t.u_max() - 1;
            for j in 1..=5 {
                let lhs = t.p_one(n + 1, j) / t.p_one(n, 1);
                let rhs = rl.gamma * rl.pi(j);
                assert!(
                    (lhs / rhs - 1.0).abs() < 1e-3,
                    "{spec} j={j}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn critical_row_decay_constant() {
        // n² P_n(1,j) → 2π_j / (σ²_var Σ_k π_k p(0)^k); equals 1 for j = 1
        // under geometric:0.5.
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 20_000, 3).unwrap();
        let n = 20_000.0;
        assert!((n * n * t.p_one(20_000, 1) - 1.0).abs() < 1e-3);

        let dt = make_offspring("table:0.4,0.2,0.4").unwrap();
        let tt = TransitionTable::build(&dt, 16_384, 24).unwrap();
        let rl = tt.ratio_limits(24, 1e-6, true).unwrap();
        let p0 = dt.pmf(0);
        // p0^k damps the series; width 24 puts the tail below 1e-9
        let series: f64 = (1..=24).map(|k| rl.pi(k) * p0.powi(k as i32)).sum();
        let sigma2 = dt.variance();
        for j in 1..=3 {
            // the finite-n correction is O(log n / n); extrapolating in n
            // removes the 1/n part and leaves O(1/n)
            let f = |n: usize| (n * n) as f64 * tt.p_one(n, j);
            let lhs = 2.0 * f(16_384) - f(8_192);
            let rhs = 2.0 * rl.pi(j) / (sigma2 * series);
            assert!(
                (lhs / rhs - 1.0).abs() < 5e-4,
                "j={j}: {lhs:.6} vs {rhs:.6}"
            );
        }
    }

    #[test]
    fn table_width_and_depth_guards() {
        let d = make_offspring("geometric:0.5").unwrap();
        let t = TransitionTable::build(&d, 10, 4).unwrap();
        assert!(t.ratio_diff(5).is_err());
        assert!(t.ratio_diff(1).is_err());
        assert!(t.ratio_limits(5, 1.0, false).is_err());
        assert!(TransitionTable::build(&d, 0, 4).is_err());
    }
}
