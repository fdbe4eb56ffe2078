//! Command line front end: exact tables and constants, conditioned-tree
//! sampling, and tail experiments, emitted as CSV or JSON.

use clap::{Parser, Subcommand, ValueEnum};
use gw_span_core::constants::LimitConstants;
use gw_span_core::error::{Error, Result};
use gw_span_core::experiments::{
    convergence_study, fit_tail, tail_curve, FitResult, Measure, Statistic, TailConfig,
    TailEstimate, TailModel,
};
use gw_span_core::offspring::{make_offspring, OffspringDistribution, SigmaConvention};
use gw_span_core::oracle::{exact_conditional_bruteforce, exact_pgw, exact_pgw_rational};
use gw_span_core::rng::RngStream;
use gw_span_core::sampler::{sample_pgw, sample_st, PgwContext};
use gw_span_core::spatial::{attach, DisplacementDistribution};
use gw_span_core::transition::{build_table, RatioLimits, TransitionTable};
use serde::Serialize;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "gw-span",
    about = "Span and gap statistics of branching random walks on conditioned Galton-Watson trees",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Offspring law: geometric:a, poisson:l, or table:p0,p1,...
    #[arg(long, global = true, default_value = "geometric:0.5")]
    offspring: String,

    /// Displacement law: gaussian, rademacher, or uniform
    #[arg(long, global = true, default_value = "gaussian")]
    displacement: String,

    /// Conditioned generation size
    #[arg(short, global = true, default_value_t = 2)]
    k: usize,

    /// Gap index (1 ≤ i ≤ k−1)
    #[arg(short, global = true)]
    i: Option<usize>,

    /// Generation level; selects the finite-n law instead of the limit
    #[arg(short, global = true)]
    n: Option<usize>,

    /// Monte Carlo sample count
    #[arg(short = 'N', global = true, default_value_t = 100_000)]
    samples: u64,

    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads (0 = all cores); output never depends on this
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Output path (default stdout)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Limit constants c1..c5 for the chosen laws
    Constants,
    /// Conditioned transition probabilities P_u(1 → j)
    Transition,
    /// Ratio sequence R_n(k) and its increments
    RatioDiff,
    /// Draw trees and report their span and gaps
    Sample,
    /// Survival curve of the span, with a tail fit
    SpanTail,
    /// Survival curve of gap i, with a tail fit
    GapTail,
    /// Exact distance between the finite-n law (cut) and the limit law
    Converge,
    /// Fast self-checks of the exact machinery
    Verify,
}

/// JSON output wraps the payload with the full configuration so a result
/// file is reproducible on its own.
#[derive(Serialize)]
struct Envelope<T: Serialize> {
    command: &'static str,
    offspring: String,
    displacement: String,
    k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    i: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    n_samples: u64,
    seed: u64,
    workers: usize,
    data: T,
}

impl Cli {
    fn envelope<T: Serialize>(&self, command: &'static str, data: T) -> Envelope<T> {
        Envelope {
            command,
            offspring: self.offspring.clone(),
            displacement: self.displacement.clone(),
            k: self.k,
            i: self.i,
            n: self.n,
            n_samples: self.samples,
            seed: self.seed,
            workers: self.workers,
            data,
        }
    }

    fn emit(&self, content: String) -> Result<()> {
        match &self.out {
            None => {
                std::io::stdout()
                    .write_all(content.as_bytes())
                    .map_err(|e| Error::Numeric(format!("stdout: {e}")))?;
            }
            Some(path) => {
                std::fs::write(path, content)
                    .map_err(|e| Error::Numeric(format!("write {}: {e}", path.display())))?;
            }
        }
        Ok(())
    }

    fn emit_json<T: Serialize>(&self, command: &'static str, data: T) -> Result<()> {
        let env = self.envelope(command, data);
        let mut s = serde_json::to_string_pretty(&env)
            .map_err(|e| Error::Numeric(format!("json: {e}")))?;
        s.push('\n');
        self.emit(s)
    }
}

/// Table deep enough for the limit measure: the critical height pmf has a
/// polynomial tail, so the cap trades truncation residual against memory.
fn st_depth(d: &OffspringDistribution) -> usize {
    if d.is_critical() {
        40_000
    } else {
        2_000
    }
}

fn table_width(k: usize) -> usize {
    (k + 2).max(8)
}

fn build_pipeline(spec: &str, k: usize, depth: usize) -> Result<(Arc<TransitionTable>, RatioLimits)> {
    let d = make_offspring(spec)?;
    let table = build_table(&d, depth, table_width(k))?;
    let width = table_width(k);
    let limits = if d.is_critical() {
        table.ratio_limits(width, 1e-6, true)?
    } else {
        table.ratio_limits(width, 1e-9, false)?
    };
    Ok((Arc::new(table), limits))
}

fn st_context(spec: &str, k: usize) -> Result<(PgwContext, RatioLimits)> {
    let d = make_offspring(spec)?;
    let depth = st_depth(&d);
    let (table, limits) = build_pipeline(spec, k, depth)?;
    let n_max = table.deepest_usable(1e-280).min(depth);
    let ctx = PgwContext::new(table, n_max, k)?.with_st(limits.pi(k), 1e-4)?;
    Ok((ctx, limits))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn run_constants(cli: &Cli) -> Result<()> {
    if cli.k < 2 {
        return Err(Error::Domain("constants need k ≥ 2".into()));
    }
    let i = cli.i.unwrap_or(1);
    let d = make_offspring(&cli.offspring)?;
    let disp = DisplacementDistribution::parse(&cli.displacement)?;
    let depth = if d.is_critical() { 16_384 } else { 600 };
    // the p0-weighted series inside c1 needs π well past k
    let width = table_width(cli.k).max(24);
    let table = build_table(&d, depth, width)?;
    let limits = if d.is_critical() {
        table.ratio_limits(width, 1e-6, true)?
    } else {
        table.ratio_limits(width, 1e-9, false)?
    };
    let c = LimitConstants::compute(
        &d,
        Some(disp),
        &limits,
        cli.k,
        Some(i),
        SigmaConvention::Variance,
    )?;
    match cli.format {
        Format::Json => cli.emit_json("constants", c),
        Format::Csv => {
            let mut s = String::from(
                "offspring,displacement,k,i,mean,gamma,q,sigma_sq,c1,c2,c3,c4,c5\n",
            );
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                c.offspring,
                c.displacement.as_deref().unwrap_or(""),
                c.k,
                c.i.map(|v| v.to_string()).unwrap_or_default(),
                c.mean,
                c.gamma,
                c.q,
                c.sigma_sq,
                fmt_opt(c.c1),
                fmt_opt(c.c2),
                fmt_opt(c.c3),
                fmt_opt(c.c4),
                fmt_opt(c.c5),
            ));
            cli.emit(s)
        }
    }
}

fn run_transition(cli: &Cli) -> Result<()> {
    let depth = cli.n.unwrap_or(30);
    let d = make_offspring(&cli.offspring)?;
    let table = build_table(&d, depth, table_width(cli.k))?;
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for u in 1..=depth {
        for j in 1..=cli.k {
            rows.push((u, j, table.p_one(u, j)));
        }
    }
    match cli.format {
        Format::Json => cli.emit_json("transition", rows),
        Format::Csv => {
            let mut s = String::from("u,j,p\n");
            for (u, j, p) in rows {
                s.push_str(&format!("{u},{j},{p}\n"));
            }
            cli.emit(s)
        }
    }
}

fn run_ratio_diff(cli: &Cli) -> Result<()> {
    let depth = cli.n.unwrap_or(200);
    let d = make_offspring(&cli.offspring)?;
    let table = build_table(&d, depth, table_width(cli.k))?;
    let rows = table.ratio_diff(cli.k)?;
    match cli.format {
        Format::Json => cli.emit_json("ratio-diff", rows),
        Format::Csv => {
            let mut s = String::from("n,ratio,increment\n");
            for (n, r, dd) in rows {
                s.push_str(&format!("{n},{r},{dd}\n"));
            }
            cli.emit(s)
        }
    }
}

#[derive(Serialize)]
struct SampleRow {
    tree: String,
    span: f64,
    gaps: Vec<f64>,
}

fn run_sample(cli: &Cli) -> Result<()> {
    let disp = DisplacementDistribution::parse(&cli.displacement)?;
    let (ctx, _) = match cli.n {
        Some(n) => {
            let (table, limits) = build_pipeline(&cli.offspring, cli.k, n.max(2))?;
            (PgwContext::new(table, n.max(1), cli.k)?, limits)
        }
        None => st_context(&cli.offspring, cli.k)?,
    };
    let mut rng = RngStream::new(cli.seed, 0);
    let mut rows = Vec::with_capacity(cli.samples as usize);
    for _ in 0..cli.samples {
        let tree = match cli.n {
            Some(n) => sample_pgw(&ctx, n, cli.k, &mut rng)?,
            None => sample_st(&ctx, &mut rng)?,
        };
        let sp = attach(&tree, disp, &mut rng);
        let (span, gaps) = sp.span_gaps();
        rows.push(SampleRow {
            tree: tree.serialize(),
            span,
            gaps,
        });
    }
    match cli.format {
        Format::Json => cli.emit_json("sample", rows),
        Format::Csv => {
            let mut s = String::from("tree,span,gaps\n");
            for r in rows {
                let gaps = r
                    .gaps
                    .iter()
                    .map(|g| g.to_string())
                    .collect::<Vec<_>>()
                    .join("|");
                s.push_str(&format!("\"{}\",{},{}\n", r.tree, r.span, gaps));
            }
            cli.emit(s)
        }
    }
}

fn tail_csv(est: &TailEstimate) -> String {
    let mut s = String::from("x,n_exceed,N,p_hat,stderr,x2_phat,neglog_over_x\n");
    for idx in 0..est.xs.len() {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            est.xs[idx],
            est.counts[idx],
            est.n_samples,
            est.p_hat[idx],
            est.stderr[idx],
            est.x2_phat[idx],
            est.neglog_over_x[idx],
        ));
    }
    s
}

#[derive(Serialize)]
struct TailReport {
    estimate: TailEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<FitResult>,
}

fn run_tail(cli: &Cli, stat: Statistic) -> Result<()> {
    let disp = DisplacementDistribution::parse(&cli.displacement)?;
    let d = make_offspring(&cli.offspring)?;
    let (ctx, measure) = match cli.n {
        Some(n) => {
            let (table, _) = build_pipeline(&cli.offspring, cli.k, n.max(2))?;
            (PgwContext::new(table, n.max(1), cli.k)?, Measure::Pgw(n))
        }
        None => (st_context(&cli.offspring, cli.k)?.0, Measure::St),
    };
    let cfg = TailConfig {
        n_samples: cli.samples,
        seed: cli.seed,
        workers: cli.workers,
        ..Default::default()
    };
    let est = tail_curve(&ctx, disp, measure, stat, &cfg)?;
    let model = if d.is_critical() {
        TailModel::Power
    } else {
        TailModel::Exponential
    };
    let fit = fit_tail(&est, model, 1.0).ok();
    if let Some(f) = &fit {
        let what = match model {
            TailModel::Power => "exponent",
            TailModel::Exponential => "rate",
        };
        eprintln!(
            "fit: {what} {:.6} ± {:.6} on window [{:.3}, {:.3}] ({} points)",
            f.value, f.se, f.window.0, f.window.1, f.window_points
        );
        if let Some(p) = f.plateau {
            eprintln!("fit: x²p̂ plateau {p:.6}");
        }
    }
    let cmd = match stat {
        Statistic::Span => "span-tail",
        Statistic::Gap(_) => "gap-tail",
    };
    match cli.format {
        Format::Csv => cli.emit(tail_csv(&est)),
        Format::Json => cli.emit_json(cmd, TailReport { estimate: est, fit }),
    }
}

fn run_converge(cli: &Cli) -> Result<()> {
    let n_max = cli.n.unwrap_or(30);
    // the TV study reads rows up to n_max; the ratio limit π_k needs depth
    let (table, limits) = build_pipeline(&cli.offspring, cli.k, n_max.max(4096))?;
    let ns: Vec<usize> = (1..=n_max).collect();
    let tv = convergence_study(&table, cli.k, &ns, limits.pi(cli.k))?;
    match cli.format {
        Format::Json => cli.emit_json("converge", tv),
        Format::Csv => {
            let mut s = String::from("n,tv\n");
            for (n, v) in tv {
                s.push_str(&format!("{n},{v}\n"));
            }
            cli.emit(s)
        }
    }
}

fn run_verify(cli: &Cli) -> Result<()> {
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("{} - {name}", if ok { "ok  " } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // closed-form transition probabilities for the geometric law
    let d = make_offspring("geometric:0.5")?;
    let table = build_table(&d, 50, 10)?;
    let mut worst: f64 = 0.0;
    for n in 1..=50usize {
        for k in 1..=10usize {
            let exact = (n as f64).powi(k as i32 - 1) / ((n + 1) as f64).powi(k as i32 + 1);
            worst = worst.max((table.p_one(n, k) - exact).abs());
        }
    }
    check("geometric transition table matches closed form", worst < 1e-12);

    // exact measure agreement, float vs bruteforce, on a small case
    let dt = make_offspring("table:0.5,0.25,0.25")?;
    let tt = build_table(&dt, 8, 6)?;
    let a = exact_pgw(&tt, 3, 2, 2)?;
    let b = exact_conditional_bruteforce(&dt, 3, 2, 2)?.to_float("bf");
    let mut agree = (a.residual - b.residual).abs() < 1e-12;
    for (key, p) in &a.probs {
        agree &= (b.probs.get(key).copied().unwrap_or(-1.0) - p).abs() < 1e-12;
    }
    check("shape measure agrees with bruteforce enumeration", agree);

    // rational identity on the same case
    let r1 = exact_pgw_rational(&dt, 3, 2, 2)?;
    let r2 = exact_conditional_bruteforce(&dt, 3, 2, 2)?;
    check(
        "rational recursion equals rational enumeration",
        r1.probs == r2.probs && r1.event_prob == r2.event_prob,
    );

    // sampler sanity: root degree of the limit law, geometric k=2, u=1
    let (ctx, _) = st_context("geometric:0.5", 2)?;
    let mut rng = RngStream::new(cli.seed, 0);
    let mut cherry = 0u64;
    let n = 20_000u64;
    let mut sandwich_ok = true;
    let disp = DisplacementDistribution::parse(&cli.displacement)?;
    for _ in 0..n {
        let t = sample_st(&ctx, &mut rng)?;
        if t.serialize() == "2,0,0" {
            cherry += 1;
        }
        let sp = attach(&t, disp, &mut rng);
        let (r, gaps) = sp.span_gaps();
        let (rs, rg) = sp.span_decomposition()?;
        sandwich_ok &= rs <= r && r <= rs + 2.0 * rg;
        sandwich_ok &= (gaps.iter().sum::<f64>() - r).abs() <= 1e-9 * (1.0 + r.abs());
    }
    // P(height 1) = 1/2 for k=2 and the height-1 shape is unique
    let p_cherry = cherry as f64 / n as f64;
    check(
        "limit-law sampler hits the height-1 mass",
        (p_cherry - 0.5).abs() < 0.02,
    );
    check("span sandwich and gap sum hold on every sample", sandwich_ok);

    if failures > 0 {
        Err(Error::Numeric(format!("{failures} verify check(s) failed")))
    } else {
        println!("all checks passed");
        Ok(())
    }
}

fn run(cli: &Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Constants => run_constants(cli),
        Cmd::Transition => run_transition(cli),
        Cmd::RatioDiff => run_ratio_diff(cli),
        Cmd::Sample => run_sample(cli),
        Cmd::SpanTail => run_tail(cli, Statistic::Span),
        Cmd::GapTail => {
            let i = cli.i.ok_or_else(|| Error::Domain("gap-tail needs -i".into()))?;
            run_tail(cli, Statistic::Gap(i))
        }
        Cmd::Converge => run_converge(cli),
        Cmd::Verify => run_verify(cli),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
