//! Monte Carlo harness: survival curves of span and gap statistics under
//! the conditioned and limit measures, tail fits with automatic window
//! selection, the exact convergence study, and the gap plateau comparison.

use crate::error::{Error, Result};
use crate::oracle::{exact_pgw, exact_st, tv_distance, ShapeMeasure};
use crate::rng::{batch_sizes, RngStream, BATCHES, PILOT_STREAM_BASE};
use crate::sampler::{sample_pgw, sample_st, PgwContext};
use crate::spatial::{attach, DisplacementDistribution, SpatialTree};
use crate::stats::{wls_with_intercept, ChiSquare};
use crate::transition::TransitionTable;
use rayon::prelude::*;
use serde::Serialize;

/// Survival estimates below this count are censored, not claimed.
pub const CENSOR_COUNT: u64 = 30;
const PILOT_SAMPLES: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Measure {
    /// The limit measure (heights from the exact pmf).
    St,
    /// The conditioned pruned law at a fixed level n.
    Pgw(usize),
}

impl Measure {
    fn label(&self) -> String {
        match self {
            Measure::St => "st".into(),
            Measure::Pgw(n) => format!("pgw(n={n})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistic {
    Span,
    /// Gap i, between ascending order statistics i and i+1 (1-based).
    Gap(usize),
}

impl Statistic {
    fn label(&self) -> String {
        match self {
            Statistic::Span => "span".into(),
            Statistic::Gap(i) => format!("gap{i}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TailConfig {
    pub n_samples: u64,
    pub seed: u64,
    /// 0 = rayon default.
    pub workers: usize,
    /// Explicit grid; None selects one from a pilot run.
    pub grid: Option<Vec<f64>>,
    pub grid_points: usize,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            n_samples: 1_000_000,
            seed: 1,
            workers: 0,
            grid: None,
            grid_points: 32,
        }
    }
}

/// Empirical survival curve of one statistic on a fixed grid.
#[derive(Clone, Debug, Serialize)]
pub struct TailEstimate {
    pub offspring: String,
    pub displacement: String,
    pub measure: String,
    pub statistic: String,
    pub k: usize,
    pub n_samples: u64,
    pub seed: u64,
    pub workers: usize,
    pub xs: Vec<f64>,
    pub counts: Vec<u64>,
    pub p_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub x2_phat: Vec<f64>,
    pub neglog_over_x: Vec<f64>,
    /// First grid index whose count fell below the censoring threshold.
    pub censored_from: Option<usize>,
    #[serde(skip)]
    pub batch_counts: Vec<Vec<u64>>,
    #[serde(skip)]
    pub batch_sizes: Vec<u64>,
}

impl TailEstimate {
    fn from_counts(
        xs: Vec<f64>,
        batch_counts: Vec<Vec<u64>>,
        batch_sizes: Vec<u64>,
        n: u64,
    ) -> Self {
        let g = xs.len();
        let mut counts = vec![0u64; g];
        for b in &batch_counts {
            for (c, &v) in counts.iter_mut().zip(b) {
                *c += v;
            }
        }
        let p_hat: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let stderr = p_hat
            .iter()
            .map(|&p| (p * (1.0 - p) / n as f64).sqrt())
            .collect();
        let x2_phat = xs
            .iter()
            .zip(&p_hat)
            .map(|(&x, &p)| x * x * p)
            .collect();
        let neglog_over_x = xs
            .iter()
            .zip(&p_hat)
            .map(|(&x, &p)| if p > 0.0 { -p.ln() / x } else { f64::NAN })
            .collect();
        let censored_from = counts.iter().position(|&c| c < CENSOR_COUNT);
        Self {
            offspring: String::new(),
            displacement: String::new(),
            measure: String::new(),
            statistic: String::new(),
            k: 0,
            n_samples: n,
            seed: 0,
            workers: 0,
            xs,
            counts,
            p_hat,
            stderr,
            x2_phat,
            neglog_over_x,
            censored_from,
            batch_counts,
            batch_sizes,
        }
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        Ok(f())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

fn draw_tree(ctx: &PgwContext, measure: Measure, rng: &mut RngStream) -> Result<crate::tree::PlanarTree> {
    match measure {
        Measure::St => sample_st(ctx, rng),
        Measure::Pgw(n) => sample_pgw(ctx, n, ctx.k_max(), rng),
    }
}

/// Span and gaps with the decomposition sandwich asserted on every sample.
fn span_gaps_checked(sp: &SpatialTree) -> (f64, Vec<f64>) {
    let (r, gaps) = sp.span_gaps();
    let gap_sum: f64 = gaps.iter().sum();
    assert!(
        (gap_sum - r).abs() <= 1e-9 * (1.0 + r.abs()),
        "gaps must sum to the span: {gap_sum} vs {r}"
    );
    if sp.tree().z_count(1) >= 1 {
        let (rs, rg) = sp.span_decomposition().expect("conditioned trees are uniform-depth");
        assert!(
            rs <= r && r <= rs + 2.0 * rg,
            "span sandwich violated: R_S = {rs}, R = {r}, R_G = {rg}"
        );
    }
    (r, gaps)
}

/// Per-batch exceedance counts of several statistics over a shared grid.
/// Returns [statistic][batch][grid]. Batches are tied to fixed rng streams,
/// so the result does not depend on the worker count.
fn run_sampling(
    ctx: &PgwContext,
    disp: DisplacementDistribution,
    measure: Measure,
    stats: &[Statistic],
    grid: &[f64],
    n_samples: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<Vec<Vec<u64>>>> {
    let sizes = batch_sizes(n_samples);
    let per_batch: Result<Vec<Vec<Vec<u64>>>> = with_pool(workers, || {
        (0..BATCHES)
            .into_par_iter()
            .map(|b| -> Result<Vec<Vec<u64>>> {
                let mut rng = RngStream::new(seed, b);
                let mut hist = vec![vec![0u64; grid.len() + 1]; stats.len()];
                for _ in 0..sizes[b as usize] {
                    let tree = draw_tree(ctx, measure, &mut rng)?;
                    let sp = attach(&tree, disp, &mut rng);
                    let (r, gaps) = span_gaps_checked(&sp);
                    for (s, stat) in stats.iter().enumerate() {
                        let v = match stat {
                            Statistic::Span => r,
                            Statistic::Gap(i) => gaps[*i - 1],
                        };
                        let j = grid.partition_point(|&x| x < v);
                        hist[s][j] += 1;
                    }
                }
                // histogram → exceedance counts per grid point
                Ok(hist
                    .into_iter()
                    .map(|h| {
                        let mut acc = 0u64;
                        let mut ex = vec![0u64; grid.len()];
                        for i in (0..grid.len()).rev() {
                            acc += h[i + 1];
                            ex[i] = acc;
                        }
                        ex
                    })
                    .collect())
            })
            .collect()
    })?;
    let per_batch = per_batch?;
    // reorganize to [stat][batch][grid]
    let mut out = vec![Vec::with_capacity(BATCHES as usize); stats.len()];
    for batch in per_batch {
        for (s, v) in batch.into_iter().enumerate() {
            out[s].push(v);
        }
    }
    Ok(out)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len());
    sorted[idx - 1]
}

/// Pilot-driven grid: geometric spacing with a height-bias cap for the
/// critical x⁻² regime, arithmetic spacing for the exponential regime.
fn auto_grid(
    ctx: &PgwContext,
    disp: DisplacementDistribution,
    measure: Measure,
    stat: Statistic,
    cfg: &TailConfig,
) -> Result<Vec<f64>> {
    let mut vals = Vec::with_capacity(PILOT_SAMPLES as usize);
    let mut rng = RngStream::new(cfg.seed, PILOT_STREAM_BASE);
    for _ in 0..PILOT_SAMPLES {
        let tree = draw_tree(ctx, measure, &mut rng)?;
        let sp = attach(&tree, disp, &mut rng);
        let (r, gaps) = sp.span_gaps();
        vals.push(match stat {
            Statistic::Span => r,
            Statistic::Gap(i) => gaps[i - 1],
        });
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if quantile(&vals, 0.99) <= 0.0 {
        return Err(Error::Numeric("pilot statistic is degenerate".into()));
    }
    let critical = (ctx.table().offspring().mean() - 1.0).abs() < 1e-9;
    let u_cap = match measure {
        Measure::Pgw(n) => n,
        Measure::St => ctx
            .st_height_pmf()?
            .0
            .last()
            .map(|&(u, _)| u)
            .unwrap_or(ctx.n_max()),
    };
    let n = cfg.n_samples as f64;
    let g = cfg.grid_points;
    if critical {
        // plateau scale A from pilot quantiles: p(x) ≈ A/x²
        let mut a_est: Vec<f64> = [0.90, 0.95, 0.98]
            .iter()
            .map(|&q| {
                let x = quantile(&vals, q);
                x * x * (1.0 - q)
            })
            .collect();
        a_est.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let a = a_est[1];
        // deepest x with ≥ 30 expected hits, capped to control the bias
        // from truncating the height distribution (span scale ~ √height)
        let x_hi = (a * n / CENSOR_COUNT as f64)
            .sqrt()
            .min(0.2 * (u_cap as f64).sqrt());
        let mut x_lo = x_hi / 6.0;
        let q75 = quantile(&vals, 0.75);
        if q75 > x_lo {
            x_lo = q75.min(x_hi / 2.0);
        }
        if !(x_lo > 0.0 && x_lo < x_hi) {
            return Err(Error::Numeric(format!(
                "empty tail grid: [{x_lo}, {x_hi}]"
            )));
        }
        Ok((0..g)
            .map(|i| x_lo * (x_hi / x_lo).powf(i as f64 / (g - 1) as f64))
            .collect())
    } else {
        // pilot estimate of the exponential rate from deep quantiles only;
        // the body decays faster than the tail and would cut the grid short
        // of the intended ~30-count depth
        let qs = [0.90, 0.95, 0.98, 0.99];
        let xs: Vec<f64> = qs.iter().map(|&q| quantile(&vals, q)).collect();
        let ys: Vec<f64> = qs.iter().map(|&q| (1.0 - q).ln()).collect();
        let ws = vec![1.0; qs.len()];
        let (_, rate, _) = wls_with_intercept(&xs, &ys, &ws);
        if !(rate < 0.0) {
            return Err(Error::Numeric(
                "pilot tail is not exponentially decaying".into(),
            ));
        }
        let c = -rate;
        let x95 = quantile(&vals, 0.95);
        let x_hi = x95 + (0.05 * n / CENSOR_COUNT as f64).ln() / c;
        let x_lo = quantile(&vals, 0.75);
        if !(x_lo > 0.0 && x_lo < x_hi) {
            return Err(Error::Numeric(format!(
                "empty tail grid: [{x_lo}, {x_hi}]"
            )));
        }
        Ok((0..g)
            .map(|i| x_lo + (x_hi - x_lo) * i as f64 / (g - 1) as f64)
            .collect())
    }
}

/// Survival curve of `stat` under `measure`, sampled in deterministic
/// batches. The sandwich and gap-sum identities are asserted on every
/// sample.
pub fn tail_curve(
    ctx: &PgwContext,
    disp: DisplacementDistribution,
    measure: Measure,
    stat: Statistic,
    cfg: &TailConfig,
) -> Result<TailEstimate> {
    if cfg.n_samples == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    if let Statistic::Gap(i) = stat {
        if i == 0 || i >= ctx.k_max() {
            return Err(Error::Domain(format!(
                "gap index must satisfy 1 ≤ i ≤ k−1 = {}",
                ctx.k_max() - 1
            )));
        }
    }
    let grid = match &cfg.grid {
        Some(g) => g.clone(),
        None => auto_grid(ctx, disp, measure, stat, cfg)?,
    };
    let counts =
        run_sampling(ctx, disp, measure, &[stat], &grid, cfg.n_samples, cfg.seed, cfg.workers)?;
    let mut est = TailEstimate::from_counts(
        grid,
        counts.into_iter().next().unwrap(),
        batch_sizes(cfg.n_samples),
        cfg.n_samples,
    );
    est.offspring = ctx.table().offspring().spec().to_string();
    est.displacement = disp.spec().to_string();
    est.measure = measure.label();
    est.statistic = stat.label();
    est.k = ctx.k_max();
    est.seed = cfg.seed;
    est.workers = cfg.workers;
    Ok(est)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TailModel {
    Power,
    Exponential,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub model: TailModel,
    /// Power exponent or exponential rate (the rate is reported positive).
    pub value: f64,
    pub se: f64,
    /// Only the power model carries an intercept; the exponential tail has
    /// no claimed prefactor, so its fit has no intercept to estimate.
    pub intercept: Option<f64>,
    pub window: (f64, f64),
    pub window_points: usize,
    pub residual_rms: f64,
    /// Weighted mean of x²p̂ over the window (power model).
    pub plateau: Option<f64>,
}

/// Widest run of ≥ 5 uncensored points whose local slopes all sit within
/// z·se of the run's weighted mean slope; then the model fit on that run.
pub fn fit_tail(est: &TailEstimate, model: TailModel, z: f64) -> Result<FitResult> {
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut cs = Vec::new();
    let mut xs = Vec::new();
    for i in 0..est.xs.len() {
        if est.counts[i] >= CENSOR_COUNT && est.p_hat[i] < 1.0 {
            let t = match model {
                TailModel::Power => est.xs[i].ln(),
                TailModel::Exponential => est.xs[i],
            };
            ts.push(t);
            ys.push(est.p_hat[i].ln());
            cs.push(est.counts[i] as f64);
            xs.push(est.xs[i]);
        }
    }
    if ts.len() < 5 {
        return Err(Error::Numeric(format!(
            "only {} uncensored points; no fit window",
            ts.len()
        )));
    }
    let m = ts.len() - 1;
    let mut slopes = Vec::with_capacity(m);
    let mut ses = Vec::with_capacity(m);
    for i in 0..m {
        let dt = ts[i + 1] - ts[i];
        slopes.push((ys[i + 1] - ys[i]) / dt);
        ses.push((1.0 / cs[i] + 1.0 / cs[i + 1]).sqrt() / dt.abs());
    }
    // widest stable window, ties broken by t-extent
    let mut best: Option<(usize, usize)> = None;
    for a in 0..m {
        for b in a + 3..m {
            // points a..=b+1, slopes a..=b
            let w: Vec<f64> = (a..=b).map(|i| 1.0 / (ses[i] * ses[i])).collect();
            let mean: f64 =
                (a..=b).map(|i| w[i - a] * slopes[i]).sum::<f64>() / w.iter().sum::<f64>();
            let ok = (a..=b).all(|i| (slopes[i] - mean).abs() <= z * ses[i]);
            if ok {
                let better = match best {
                    None => true,
                    Some((pa, pb)) => {
                        (b - a) > (pb - pa)
                            || ((b - a) == (pb - pa) && ts[b + 1] - ts[a] > ts[pb + 1] - ts[pa])
                    }
                };
                if better {
                    best = Some((a, b));
                }
            }
        }
    }
    let (a, b) = best.ok_or_else(|| Error::Numeric("no stable fit window".into()))?;
    let pts = b - a + 2;
    let window = (xs[a], xs[b + 1]);
    match model {
        TailModel::Exponential => {
            // rate only: weighted regression of log p̂ through the origin,
            // matching the claimed form exp(−(rate + o(1))·x) with no
            // prefactor; weights are the inverse variances of log p̂
            let mut num = 0.0;
            let mut den = 0.0;
            for i in a..=b + 1 {
                num += cs[i] * xs[i] * (-ys[i]);
                den += cs[i] * xs[i] * xs[i];
            }
            let rate = num / den;
            let sw: f64 = cs[a..=b + 1].iter().sum();
            let rms = ((a..=b + 1)
                .map(|i| cs[i] * (ys[i] + rate * xs[i]).powi(2))
                .sum::<f64>()
                / sw)
                .sqrt();
            Ok(FitResult {
                model,
                value: rate,
                se: den.sqrt().recip(),
                intercept: None,
                window,
                window_points: pts,
                residual_rms: rms,
                plateau: None,
            })
        }
        TailModel::Power => {
            let tw = &ts[a..=b + 1];
            let yw = &ys[a..=b + 1];
            let cw = &cs[a..=b + 1];
            let (alpha, beta, se_beta) = wls_with_intercept(tw, yw, cw);
            let sw: f64 = cw.iter().sum();
            let rms = (tw
                .iter()
                .zip(yw)
                .zip(cw)
                .map(|((t, y), c)| c * (y - alpha - beta * t).powi(2))
                .sum::<f64>()
                / sw)
                .sqrt();
            let mut pw = 0.0;
            let mut psum = 0.0;
            for i in a..=b + 1 {
                pw += cw[i - a];
                psum += cw[i - a] * xs[i] * xs[i] * (ys[i]).exp();
            }
            Ok(FitResult {
                model,
                value: beta,
                se: se_beta,
                intercept: Some(alpha),
                window,
                window_points: pts,
                residual_rms: rms,
                plateau: Some(psum / pw),
            })
        }
    }
}

/// Exact distance between the conditioned law pushed through the cut
/// operation and the truncated limit measure, per conditioning level.
pub fn convergence_study(
    table: &TransitionTable,
    k: usize,
    n_list: &[usize],
    pi_k: f64,
) -> Result<Vec<(usize, f64)>> {
    let u_cap = n_list.iter().copied().max().unwrap_or(1);
    let ratios = table.ratio_seq(k);
    let slices: Vec<ShapeMeasure> = (1..=u_cap)
        .map(|u| {
            if table.p_one(u, k) <= 0.0 {
                // unreachable height: an empty slice, not an error
                Ok(ShapeMeasure {
                    label: format!("pgw(n={u}, k={k})"),
                    probs: std::collections::BTreeMap::new(),
                    residual: 0.0,
                })
            } else {
                exact_pgw(table, u, k, k)
            }
        })
        .collect::<Result<_>>()?;
    let st = exact_st(table, k, u_cap, k, pi_k)?;
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        if n == 0 || n > u_cap {
            return Err(Error::Domain(format!("level {n} out of range")));
        }
        // cut pushforward: P(cut height u, shape τ) = (R_u/R_n)·PGW_u(τ)
        // for branching-root shapes τ of height u ≤ n
        let mut probs = std::collections::BTreeMap::new();
        for u in 1..=n {
            let w = ratios[u] / ratios[n];
            for (key, &p) in &slices[u - 1].probs {
                let z1: u32 = key.split(',').next().unwrap().parse().unwrap();
                if z1 >= 2 {
                    probs.insert(key.clone(), w * p);
                }
            }
        }
        let push = ShapeMeasure {
            label: format!("cut∘pgw(n={n})"),
            residual: (1.0 - probs.values().sum::<f64>()).max(0.0),
            probs,
        };
        out.push((n, tv_distance(&push, &st)));
    }
    Ok(out)
}

/// Plateau study for the gap tails: one sampling pass, all gap indices.
#[derive(Clone, Debug, Serialize)]
pub struct GapStudy {
    pub offspring: String,
    pub displacement: String,
    pub k: usize,
    pub n_samples: u64,
    pub seed: u64,
    pub xs: Vec<f64>,
    /// Per gap index i = 1..k−1: (plateau, standard error) of x²p̂ pooled
    /// over the plateau window.
    pub plateaus: Vec<(f64, f64)>,
    /// Pairwise ratios (i, j, ratio, se) from per-batch covariance.
    pub ratios: Vec<(usize, usize, f64, f64)>,
    pub window: (usize, usize),
}

pub fn gap_constant_study(
    ctx: &PgwContext,
    disp: DisplacementDistribution,
    cfg: &TailConfig,
) -> Result<GapStudy> {
    let k = ctx.k_max();
    if k < 3 {
        return Err(Error::Domain("gap comparison needs k ≥ 3".into()));
    }
    if (ctx.table().offspring().mean() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(
            "gap plateaus are a critical-offspring statement".into(),
        ));
    }
    let grid = match &cfg.grid {
        Some(g) => g.clone(),
        None => auto_grid(ctx, disp, Measure::St, Statistic::Gap(1), cfg)?,
    };
    let stats: Vec<Statistic> = (1..k).map(Statistic::Gap).collect();
    let counts = run_sampling(
        ctx,
        disp,
        Measure::St,
        &stats,
        &grid,
        cfg.n_samples,
        cfg.seed,
        cfg.workers,
    )?;
    let sizes = batch_sizes(cfg.n_samples);
    // totals per stat per grid point
    let totals: Vec<Vec<u64>> = counts
        .iter()
        .map(|per_batch| {
            let mut t = vec![0u64; grid.len()];
            for b in per_batch {
                for (slot, &v) in t.iter_mut().zip(b) {
                    *slot += v;
                }
            }
            t
        })
        .collect();
    // plateau window: deepest ≤ 6 grid points where every gap index still
    // has ≥ 100 hits
    let usable: Vec<usize> = (0..grid.len())
        .filter(|&j| totals.iter().all(|t| t[j] >= 100))
        .collect();
    if usable.len() < 2 {
        return Err(Error::Numeric("no common plateau window".into()));
    }
    let win: Vec<usize> = usable.iter().rev().take(6).copied().rev().collect();
    // per-batch plateau means per stat
    let nb = counts[0].len();
    let mut batch_plateau = vec![vec![0.0; nb]; stats.len()];
    for (s, per_batch) in counts.iter().enumerate() {
        for (b, bc) in per_batch.iter().enumerate() {
            let mut acc = 0.0;
            for &j in &win {
                acc += grid[j] * grid[j] * bc[j] as f64 / sizes[b].max(1) as f64;
            }
            batch_plateau[s][b] = acc / win.len() as f64;
        }
    }
    // batch sizes differ by at most one sample, so the batches are treated
    // as exchangeable replicas; errors come from their spread
    let bf = nb as f64;
    let mean = |v: &[f64]| -> f64 { v.iter().sum::<f64>() / bf };
    let cov = |u: &[f64], v: &[f64]| -> f64 {
        let (mu, mv) = (mean(u), mean(v));
        let s: f64 = u
            .iter()
            .zip(v)
            .map(|(x, y)| (x - mu) * (y - mv))
            .sum();
        // covariance of the batch-mean estimator
        s / (bf - 1.0) / bf
    };
    let plateaus: Vec<(f64, f64)> = batch_plateau
        .iter()
        .map(|v| (mean(v), cov(v, v).sqrt()))
        .collect();
    let mut ratios = Vec::new();
    for i in 0..stats.len() {
        for j in i + 1..stats.len() {
            let (pi, pj) = (plateaus[i].0, plateaus[j].0);
            let r = pi / pj;
            let var = r * r
                * (cov(&batch_plateau[i], &batch_plateau[i]) / (pi * pi)
                    + cov(&batch_plateau[j], &batch_plateau[j]) / (pj * pj)
                    - 2.0 * cov(&batch_plateau[i], &batch_plateau[j]) / (pi * pj));
            ratios.push((i + 1, j + 1, r, var.max(0.0).sqrt()));
        }
    }
    Ok(GapStudy {
        offspring: ctx.table().offspring().spec().to_string(),
        displacement: disp.spec().to_string(),
        k,
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        xs: grid,
        plateaus,
        ratios,
        window: (win[0], win[win.len() - 1]),
    })
}

/// χ² of empirical shape frequencies against an exact measure, pooling all
/// shapes outside the exact support (and the residual mass) into one cell.
pub fn shape_chi_square(
    empirical: &std::collections::BTreeMap<String, u64>,
    exact: &ShapeMeasure,
    n: u64,
    min_expected: f64,
) -> Result<ChiSquare> {
    let mut obs: Vec<u64> = Vec::new();
    let mut probs: Vec<f64> = Vec::new();
    let mut seen = 0u64;
    for (key, &p) in &exact.probs {
        obs.push(empirical.get(key).copied().unwrap_or(0));
        seen += obs.last().unwrap();
        probs.push(p);
    }
    // everything else: unlisted shapes vs residual mass
    obs.push(n - seen);
    probs.push(exact.residual.max(0.0));
    crate::stats::chi_square_test(&obs, &probs, n, min_expected)
}
