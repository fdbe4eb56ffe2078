//! Small numeric helpers: extrapolation, 1-D minimization, weighted least
//! squares and a chi-square goodness-of-fit test.

use crate::error::{Error, Result};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Neville polynomial extrapolation of (x_i, y_i) to x = 0.
///
/// Used with x_i = 1/n_i to accelerate ratio sequences that converge like
/// c₀ + c₁/n + c₂/n² + ...
pub fn neville_to_zero(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let m = xs.len();
    let mut t = ys.to_vec();
    for j in 1..m {
        for i in 0..m - j {
            t[i] = (t[i + 1] * xs[i] - t[i] * xs[i + j]) / (xs[i] - xs[i + j]);
        }
    }
    t[0]
}

/// Golden-section minimum of a unimodal f on [lo, hi].
///
/// Points where f is not finite are treated as +∞, so the bracket may touch a
/// domain boundary as long as the minimum is interior.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let wrap = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let (mut fc, mut fd) = (wrap(c), wrap(d));
    while (b - a).abs() > xtol * (1.0 + a.abs() + b.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = wrap(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = wrap(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, wrap(x))
}

/// Weighted least squares of y against x without an intercept: y ≈ βx.
/// Returns (β, se(β)) where var(y_i) = 1/w_i.
pub fn wls_no_intercept(xs: &[f64], ys: &[f64], ws: &[f64]) -> (f64, f64) {
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * x * x).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * x * y)
        .sum();
    (sxy / sxx, (1.0 / sxx).sqrt())
}

/// Weighted least squares y ≈ a + βx. Returns (a, β, se(β)).
pub fn wls_with_intercept(xs: &[f64], ys: &[f64], ws: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = ws.iter().sum();
    let sx: f64 = xs.iter().zip(ws).map(|(x, w)| w * x).sum();
    let sy: f64 = ys.iter().zip(ws).map(|(y, w)| w * y).sum();
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * x * x).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * x * y)
        .sum();
    let det = sw * sxx - sx * sx;
    let beta = (sw * sxy - sx * sy) / det;
    let a = (sy - beta * sx) / sw;
    (a, beta, (sw / det).sqrt())
}

pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square test of observed counts against expected probabilities.
///
/// Cells with expected count below `min_expected` are pooled into the last
/// cell with mass; probabilities must sum to ≤ 1, any deficit becomes an
/// implicit overflow cell if `overflow_prob` > 0.
pub fn chi_square_test(
    observed: &[u64],
    expected_probs: &[f64],
    n: u64,
    min_expected: f64,
) -> Result<ChiSquare> {
    if observed.len() != expected_probs.len() {
        return Err(Error::Domain("observed/expected length mismatch".into()));
    }
    let nf = n as f64;
    // pool small-expectation cells
    let mut cells: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut pool_obs = 0.0;
    let mut pool_exp = 0.0;
    for (&o, &p) in observed.iter().zip(expected_probs) {
        let e = p * nf;
        if e < min_expected {
            pool_obs += o as f64;
            pool_exp += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if pool_exp > 0.0 {
        if pool_exp >= min_expected || cells.is_empty() {
            cells.push((pool_obs, pool_exp));
        } else {
            let last = cells.last_mut().unwrap();
            last.0 += pool_obs;
            last.1 += pool_exp;
        }
    }
    if cells.len() < 2 {
        return Err(Error::Domain(
            "chi-square needs at least two cells after pooling".into(),
        ));
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len() - 1;
    let dist = ChiSquared::new(dof as f64)
        .map_err(|e| Error::Numeric(format!("chi-square dof {dof}: {e}")))?;
    Ok(ChiSquare {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}
