//! Offspring distributions and their generating-function calculus.
//!
//! An offspring law must satisfy p(0) > 0, p(1) > 0 and p(0) + p(1) < 1,
//! and have finite mean and second moment. Three families are supported:
//! finite tables, geometric(α) with p(k) = α(1−α)^k, and poisson(λ).

use crate::error::{Error, Result};
use serde::Serialize;

const PMF_SUM_TOL: f64 = 1e-12;
const CRITICAL_TOL: f64 = 1e-12;
/// Tail budget for truncated series evaluation of parametric families.
const SERIES_TAIL: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// Explicit pmf p(0), p(1), ..., p(K).
    Table(Vec<f64>),
    /// p(k) = α(1−α)^k; "geometric:0.5" is the law with p(k) = 2^{−k−1}.
    Geometric(f64),
    /// p(k) = e^{−λ} λ^k / k!.
    Poisson(f64),
}

#[derive(Clone, Debug)]
pub struct OffspringDistribution {
    family: Family,
    spec: String,
    mean: f64,
    second_moment: f64,
}

/// Extinction probability data: q_n = P(Z_n = 0), q = lim q_n, γ = f'(q).
#[derive(Clone, Debug, Serialize)]
pub struct ExtinctionData {
    pub q: f64,
    pub gamma: f64,
    /// q_1, q_2, ... up to convergence (|q_n − q| < tol) or an iteration cap.
    pub q_n_sequence: Vec<f64>,
}

/// Which σ² enters the asymptotic constants. The classical variance is the
/// default; the raw second moment is kept available for sensitivity checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SigmaConvention {
    Variance,
    SecondMoment,
}

/// Parses "geometric:α", "poisson:λ" or "table:p0,p1,...,pK".
pub fn make_offspring(spec: &str) -> Result<OffspringDistribution> {
    OffspringDistribution::parse(spec)
}

impl OffspringDistribution {
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("offspring spec '{spec}' lacks ':'")))?;
        let family = match kind {
            "geometric" => {
                let a: f64 = rest
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad geometric parameter '{rest}'")))?;
                if !(a > 0.0 && a < 1.0) {
                    return Err(Error::InvalidOffspring(format!(
                        "geometric parameter must lie in (0,1), got {a}"
                    )));
                }
                Family::Geometric(a)
            }
            "poisson" => {
                let l: f64 = rest
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad poisson parameter '{rest}'")))?;
                if !(l > 0.0 && l.is_finite()) {
                    return Err(Error::InvalidOffspring(format!(
                        "poisson parameter must be positive and finite, got {l}"
                    )));
                }
                Family::Poisson(l)
            }
            "table" => {
                let probs: Vec<f64> = rest
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad table entry '{t}'")))
                    })
                    .collect::<Result<_>>()?;
                Family::Table(probs)
            }
            other => {
                return Err(Error::Parse(format!(
                    "unknown offspring family '{other}' (expected geometric, poisson or table)"
                )))
            }
        };
        Self::from_family(family, spec.to_string())
    }

    pub fn from_family(family: Family, spec: String) -> Result<Self> {
        let (p0, p1, sum, mean, second_moment) = match &family {
            Family::Table(p) => {
                if p.len() < 3 {
                    return Err(Error::InvalidOffspring(
                        "table needs at least entries p0, p1, p2".into(),
                    ));
                }
                if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                    return Err(Error::InvalidOffspring("table entries must be ≥ 0".into()));
                }
                let sum: f64 = p.iter().sum();
                let mean: f64 = p.iter().enumerate().map(|(k, &x)| k as f64 * x).sum();
                let m2: f64 = p
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| (k * k) as f64 * x)
                    .sum();
                (p[0], p[1], sum, mean, m2)
            }
            Family::Geometric(a) => {
                let r = 1.0 - a;
                // mean r/a, second moment r(1+r)/a².
                (*a, a * r, 1.0, r / a, r * (1.0 + r) / (a * a))
            }
            Family::Poisson(l) => ((-l).exp(), l * (-l).exp(), 1.0, *l, l * (l + 1.0)),
        };
        if (sum - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidOffspring(format!(
                "pmf sums to {sum}, not 1 (tables are not renormalized)"
            )));
        }
        if p0 <= 0.0 {
            return Err(Error::InvalidOffspring("requires p(0) > 0".into()));
        }
        if p1 <= 0.0 {
            return Err(Error::InvalidOffspring("requires p(1) > 0".into()));
        }
        if p0 + p1 >= 1.0 {
            return Err(Error::InvalidOffspring("requires p(0) + p(1) < 1".into()));
        }
        Ok(Self {
            family,
            spec,
            mean,
            second_moment,
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn spec(&self) -> &str {
        &self.spec
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn variance(&self) -> f64 {
        self.second_moment - self.mean * self.mean
    }

    pub fn sigma_sq(&self, conv: SigmaConvention) -> f64 {
        match conv {
            SigmaConvention::Variance => self.variance(),
            SigmaConvention::SecondMoment => self.second_moment,
        }
    }

    pub fn is_critical(&self) -> bool {
        (self.mean - 1.0).abs() <= CRITICAL_TOL
    }

    pub fn pmf(&self, k: usize) -> f64 {
        match &self.family {
            Family::Table(p) => p.get(k).copied().unwrap_or(0.0),
            Family::Geometric(a) => a * (1.0 - a).powi(k as i32),
            Family::Poisson(l) => {
                // e^{−λ} λ^k / k! accumulated in log space for large k.
                let ln = -l + k as f64 * l.ln() - ln_factorial(k);
                ln.exp()
            }
        }
    }

    /// Upper end of the support for finite tables, `None` otherwise.
    pub fn support_max(&self) -> Option<usize> {
        match &self.family {
            Family::Table(p) => Some(p.len() - 1),
            _ => None,
        }
    }

    /// P(offspring > k), used for tail budgeting of truncated sums.
    pub fn tail_mass(&self, k: usize) -> f64 {
        match &self.family {
            Family::Table(p) => p.iter().skip(k + 1).sum(),
            Family::Geometric(a) => (1.0 - a).powi(k as i32 + 1),
            Family::Poisson(_) => {
                let mut acc = 0.0;
                for j in 0..=k {
                    acc += self.pmf(j);
                }
                (1.0 - acc).max(0.0)
            }
        }
    }

    /// f(s) = Σ p(k) s^k for s ∈ [0,1].
    pub fn gf_eval(&self, s: f64) -> Result<f64> {
        check_unit_interval(s)?;
        Ok(match &self.family {
            Family::Table(p) => horner(p, s),
            Family::Geometric(a) => a / (1.0 - (1.0 - a) * s),
            Family::Poisson(l) => (l * (s - 1.0)).exp(),
        })
    }

    /// f^{(r)}(s) = Σ_{ℓ≥r} r! C(ℓ,r) p(ℓ) s^{ℓ−r}.
    pub fn gf_derivative(&self, r: usize, s: f64) -> Result<f64> {
        check_unit_interval(s)?;
        if r == 0 {
            return self.gf_eval(s);
        }
        Ok(match &self.family {
            Family::Table(p) => {
                let mut acc = 0.0;
                for (l, &pl) in p.iter().enumerate().skip(r) {
                    acc += falling_factorial(l, r) * pl * s.powi((l - r) as i32);
                }
                acc
            }
            Family::Geometric(a) => {
                let b = 1.0 - a;
                factorial(r) * b.powi(r as i32) * a / (1.0 - b * s).powi(r as i32 + 1)
            }
            Family::Poisson(l) => l.powi(r as i32) * (l * (s - 1.0)).exp(),
        })
    }

    /// f^{(r)}(s)/r!, the form the conditioned-tree weights use.
    pub fn gf_derivative_over_factorial(&self, r: usize, s: f64) -> Result<f64> {
        check_unit_interval(s)?;
        if r == 0 {
            return self.gf_eval(s);
        }
        Ok(match &self.family {
            Family::Table(p) => {
                let mut acc = 0.0;
                // Pascal-style update of C(ℓ,r) keeps the binomials exact.
                let mut binom = 1.0;
                for (l, &pl) in p.iter().enumerate().skip(r) {
                    if l > r {
                        binom *= l as f64 / (l - r) as f64;
                    }
                    acc += binom * pl * s.powi((l - r) as i32);
                }
                acc
            }
            Family::Geometric(a) => {
                let b = 1.0 - a;
                b.powi(r as i32) * a / (1.0 - b * s).powi(r as i32 + 1)
            }
            Family::Poisson(l) => {
                let ln = r as f64 * l.ln() - ln_factorial(r) + l * (s - 1.0);
                ln.exp()
            }
        })
    }

    /// n-fold iterate f_n(s); f_0(s) = s, q_n = f_n(0).
    pub fn gf_iterate(&self, n: usize, s: f64) -> Result<f64> {
        check_unit_interval(s)?;
        let mut v = s;
        for _ in 0..n {
            v = self.gf_eval(v)?;
        }
        Ok(v)
    }

    /// Smallest fixed point of f on [0,1] and γ = f'(q).
    ///
    /// Critical and subcritical laws short-circuit to q = 1; supercritical q is
    /// found by bisection of f(s) − s, which is robust near the tangent case.
    pub fn extinction(&self, tol: f64) -> Result<ExtinctionData> {
        let q = if self.mean <= 1.0 + CRITICAL_TOL {
            1.0
        } else {
            let mut lo = 0.0f64;
            let mut hi = 1.0 - 1e-9;
            if self.gf_eval(hi)? - hi >= 0.0 {
                hi = 1.0 - 1e-13;
                if self.gf_eval(hi)? - hi >= 0.0 {
                    return Err(Error::Numeric(
                        "could not bracket the extinction fixed point below 1".into(),
                    ));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if self.gf_eval(mid)? - mid > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < tol {
                    break;
                }
            }
            0.5 * (lo + hi)
        };
        let gamma = self.gf_derivative(1, q)?;
        let mut q_n_sequence = Vec::new();
        let mut v = 0.0;
        for _ in 0..10_000 {
            v = self.gf_eval(v)?;
            q_n_sequence.push(v);
            if (q - v).abs() < tol.max(1e-15) {
                break;
            }
        }
        Ok(ExtinctionData {
            q,
            gamma,
            q_n_sequence,
        })
    }

    /// Smallest L with P(offspring > L) < the series tail budget.
    pub fn truncation_len(&self) -> usize {
        match &self.family {
            Family::Table(p) => p.len() - 1,
            _ => {
                let mut l = 1;
                while self.tail_mass(l) >= SERIES_TAIL && l < 10_000 {
                    l += 1;
                }
                l
            }
        }
    }
}

fn check_unit_interval(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("s = {s} outside [0,1]")));
    }
    Ok(())
}

fn horner(p: &[f64], s: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &c| acc * s + c)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

fn falling_factorial(l: usize, r: usize) -> f64 {
    ((l - r + 1)..=l).map(|i| i as f64).product()
}
