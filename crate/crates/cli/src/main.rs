//! `rasch-design`: optimal designs for counts models with binary item
//! features.
//!
//! Exit codes: 0 success, 1 unreadable or malformed input, 2 invalid model
//! or arguments, 3 xi0 is not optimal (`check`), 4 the optimizer did not
//! converge (`optimize`).

mod input;

use std::fmt::Write as _;
use std::fs;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use input::{ModelArgs, ParseError};
use rasch_design::optimality::{
    boundary_csv, boundary_curve, d_efficiency, fullfactorial_min_efficiency, indifference_efficiency_xi0,
    kw_certify, lemma1_check, pair_slack, theorem1_check, BoundaryPoint, DEFAULT_KW_TOL,
};
use rasch_design::optimizer::{compare_designs, linear_volume_ratio_report, round_to_exact};
use rasch_design::simulate::{covariance_check, SimConfig};
use rasch_design::{optimize, xi0, CertificationReport, Design, ModelSpec, OptimizeOptions};
use serde::Serialize;
use serde_json::json;

const EXIT_NOT_OPTIMAL: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "rasch-design", version, about = "Locally D-optimal designs for Poisson counts models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format (default: csv for `boundary`, human otherwise).
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
    /// Write to this file instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Human,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the pairwise and vertex conditions and certify xi0.
    Check {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = DEFAULT_KW_TOL)]
        tol: f64,
    },
    /// Compute a locally D-optimal design over all 2^K items.
    Optimize {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = DEFAULT_KW_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-8)]
        prune_threshold: f64,
        /// Starting design (`xi0`, `full-factorial` or JSON).
        #[arg(long)]
        start: Option<String>,
        /// Write the iteration trace as CSV.
        #[arg(long)]
        history: Option<String>,
    },
    /// Boundary curves of the pairwise condition in difficulty multipliers.
    Boundary {
        /// Gamma scale values, one curve each.
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2")]
        b: Vec<f64>,
        /// Range `lo:hi` of the multiplier v = exp(-beta_k); lo must exceed 1.
        #[arg(long, default_value = "1.05:10")]
        v_range: String,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        /// Explicit v values (replace the range).
        #[arg(long, value_delimiter = ',')]
        v: Option<Vec<f64>>,
    },
    /// D-efficiency of a design, or the indifference report.
    Efficiency {
        #[command(flatten)]
        model: ModelArgs,
        /// Design to rate (`xi0`, `full-factorial` or JSON).
        #[arg(long)]
        design: Option<String>,
        /// Reference design (default: the optimizer's output).
        #[arg(long)]
        reference: Option<String>,
        /// Report xi0's efficiency at indifference for this K.
        #[arg(long, conflicts_with_all = ["design", "reference"])]
        indifference: Option<usize>,
    },
    /// Round an approximate design to n items.
    Round {
        /// Design (`xi0`, `full-factorial` or JSON).
        #[arg(long)]
        design: String,
        #[arg(long)]
        n: u64,
        /// Number of features for named designs.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Monte-Carlo check of the predicted estimator covariance.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// Simulation config JSON with design, model, replications and seed.
        #[arg(long)]
        config: Option<String>,
        /// Design (`xi0`, `full-factorial` or JSON); rounded to `--n` items
        /// when approximate.
        #[arg(long)]
        design: Option<String>,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the per-replication estimates as CSV.
        #[arg(long)]
        beta_csv: Option<String>,
    },
    /// Compare designs by log det and D-efficiency.
    Compare {
        #[command(flatten)]
        model: ModelArgs,
        /// `id=source` or `source`; repeatable.
        #[arg(long = "design")]
        designs: Vec<String>,
        /// The two 8-run three-factor designs under constant weights.
        #[arg(long, conflicts_with = "designs")]
        linear_example: bool,
    },
}

struct Out {
    text: String,
    code: u8,
}

impl Out {
    fn ok(text: String) -> Self {
        Out { text, code: 0 }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn model_summary(m: &ModelSpec) -> String {
    let mut s = match m.family() {
        rasch_design::Family::Poisson { theta0 } => format!("model: poisson, theta0 = {theta0}"),
        rasch_design::Family::PoissonGamma { a, b } => format!("model: poisson-gamma, a = {a}, b = {b}"),
    };
    let _ = writeln!(s, ", beta0 = {}", m.beta0());
    let _ = writeln!(s, "{:>8} {:>10} {:>12}", "feature", "beta", "exp(-beta)");
    for (i, e) in m.effects().iter().enumerate() {
        let _ = writeln!(s, "{:>8} {:>10.4} {:>12.4}", i + 1, e, (-e).exp());
    }
    s
}

fn certification_human(c: &CertificationReport) -> String {
    format!(
        "KW certificate: max sensitivity {:.6} at {}, threshold {:.6}\n",
        c.max_sensitivity, c.worst_item, c.threshold
    )
}

fn cmd_check(model: &ModelArgs, tol: f64, format: Format) -> Result<Out> {
    let m = model.build()?;
    let s = m.standardized();
    let k = m.k();
    let theorem1 = theorem1_check(&s)?;
    let lemma1 = lemma1_check(&s)?;
    let cert = kw_certify(&xi0(k)?, &m, tol)?;
    let optimal = cert.optimal;
    let text = match format {
        Format::Json => to_json(&json!({
            "model": m,
            "theorem1": theorem1,
            "lemma1": lemma1,
            "certification": cert,
            "xi0_optimal": optimal,
        }))?,
        Format::Csv => {
            let mut t = String::from("j,k,slack,holds\n");
            for j in 1..=k {
                for l in j + 1..=k {
                    let slack = pair_slack(&s, j, l);
                    let _ = writeln!(t, "{j},{l},{slack},{}", slack <= 0.0);
                }
            }
            t
        }
        Format::Human => {
            let mut t = model_summary(&m);
            let _ = writeln!(
                t,
                "pairwise conditions: {} of {} hold",
                theorem1.checked_count - theorem1.violations.len(),
                theorem1.checked_count
            );
            for j in 1..=k {
                for l in j + 1..=k {
                    let slack = pair_slack(&s, j, l);
                    let verdict = if slack <= 0.0 { "ok" } else { "VIOLATED" };
                    let _ = writeln!(t, "  pair ({j},{l}): slack {slack:>12.6} {verdict}");
                }
            }
            let _ = writeln!(
                t,
                "vertex conditions: {} ({} violations)",
                if lemma1.holds { "hold" } else { "fail" },
                lemma1.violations.len()
            );
            t.push_str(&certification_human(&cert));
            t.push_str(if optimal { "xi0 OPTIMAL\n" } else { "xi0 NOT optimal\n" });
            t
        }
    };
    Ok(Out { text, code: if optimal { 0 } else { EXIT_NOT_OPTIMAL } })
}

fn design_table(d: &Design, cert: Option<&CertificationReport>) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{:<20} {:>12} {:>8} {:>12}", "item", "weight", "count", "sensitivity");
    for (i, p) in d.points().iter().enumerate() {
        let count = p.count.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        let sens = cert.map(|c| format!("{:.6}", c.per_support[i].sensitivity)).unwrap_or_else(|| "-".into());
        let _ = writeln!(t, "{:<20} {:>12.6} {:>8} {:>12}", p.item.to_string(), p.weight, count, sens);
    }
    t
}

fn cmd_optimize(
    model: &ModelArgs,
    opts: OptimizeOptions,
    start: Option<&str>,
    history: Option<&str>,
    format: Format,
) -> Result<Out> {
    let m = model.build()?;
    let start = start.map(|s| input::design(s, Some(m.k()))).transpose()?;
    let opts = OptimizeOptions { start, record_history: history.is_some(), ..opts };
    let report = optimize(&m, &opts)?;
    if let (Some(path), Some(csv)) = (history, report.history_csv()) {
        fs::write(path, csv).with_context(|| format!("writing {path}"))?;
    }
    let text = match format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut t = String::from("item,weight,sensitivity\n");
            for (p, s) in report.design.points().iter().zip(&report.certification.per_support) {
                let _ = writeln!(t, "\"{}\",{},{}", p.item, p.weight, s.sensitivity);
            }
            t
        }
        Format::Human => {
            let mut t = model_summary(&m);
            t.push_str(&design_table(&report.design, Some(&report.certification)));
            let _ = writeln!(t, "log det {:.8} after {} iterations", report.final_log_det, report.iterations);
            t.push_str(&certification_human(&report.certification));
            t.push_str(if report.converged { "converged\n" } else { "NOT converged\n" });
            t
        }
    };
    Ok(Out { text, code: if report.converged { 0 } else { EXIT_NOT_CONVERGED } })
}

fn v_grid(range: &str, step: f64) -> Result<Vec<f64>> {
    let (lo, hi) = range.split_once(':').ok_or_else(|| anyhow!("--v-range must look like lo:hi, got {range:?}"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("bad lower bound in {range:?}"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("bad upper bound in {range:?}"))?;
    if !(lo > 1.0 && hi >= lo && hi.is_finite()) {
        bail!("--v-range needs 1 < lo <= hi, got {range}");
    }
    if !(step > 0.0 && step.is_finite()) {
        bail!("--step must be positive, got {step}");
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| lo + i as f64 * step).collect())
}

fn cmd_boundary(bs: &[f64], v_range: &str, step: f64, v: Option<&[f64]>, format: Format) -> Result<Out> {
    let grid = match v {
        Some(v) => {
            if let Some(bad) = v.iter().find(|&&x| x.is_nan() || x <= 1.0) {
                bail!("v must exceed 1, got {bad}");
            }
            v.to_vec()
        }
        None => v_grid(v_range, step)?,
    };
    let mut points: Vec<BoundaryPoint> = Vec::new();
    for &b in bs {
        points.extend(boundary_curve(b, &grid)?);
    }
    let text = match format {
        Format::Json => to_json(&points)?,
        Format::Csv => boundary_csv(&points),
        Format::Human => {
            let mut t = format!("{:>8} {:>10} {:>12}\n", "b", "v", "u_min");
            for p in &points {
                let _ = writeln!(t, "{:>8} {:>10.4} {:>12.6}", p.b, p.v, p.u_min);
            }
            t
        }
    };
    Ok(Out::ok(text))
}

fn cmd_efficiency(
    model: &ModelArgs,
    design: Option<&str>,
    reference: Option<&str>,
    indifference: Option<usize>,
    format: Format,
) -> Result<Out> {
    if let Some(k) = indifference {
        let report = indifference_efficiency_xi0(k)?;
        let ff_min = fullfactorial_min_efficiency(k)?;
        let text = match format {
            Format::Json => to_json(&json!({ "indifference": report, "full_factorial_min_efficiency": ff_min }))?,
            Format::Csv => format!(
                "k,numeric,determinant_ratio,published_formula,published_value,discrepancy,full_factorial_min\n{},{},{},{},{},{},{}\n",
                report.k,
                report.numeric,
                report.determinant_ratio,
                report.published_formula,
                report.published_value.map(|v| v.to_string()).unwrap_or_default(),
                report.discrepancy,
                ff_min
            ),
            Format::Human => format!("{report}\nK={k}: full factorial minimum efficiency (K+1)/2^K = {ff_min:.4}\n"),
        };
        return Ok(Out::ok(text));
    }
    let design = design.ok_or_else(|| anyhow!("efficiency needs --design or --indifference"))?;
    let m = model.build()?;
    let d = input::design(design, Some(m.k()))?;
    let (reference_design, reference_id) = match reference {
        Some(r) => (input::design(r, Some(m.k()))?, r.to_string()),
        None => {
            let r = optimize(&m, &OptimizeOptions::default())?;
            if !r.converged {
                bail!("optimizer did not converge for the reference design");
            }
            (r.design, "optimal".to_string())
        }
    };
    let e = d_efficiency(&d, &reference_design, &m)?;
    let text = match format {
        Format::Json => to_json(&json!({ "design": design, "reference": reference_id, "efficiency": e }))?,
        Format::Csv => format!("design,reference,efficiency\n{design},{reference_id},{e}\n"),
        Format::Human => format!("{}D-efficiency of {design} against {reference_id}: {e:.4}\n", model_summary(&m)),
    };
    Ok(Out::ok(text))
}

fn cmd_round(design: &str, n: u64, k: Option<usize>, format: Format) -> Result<Out> {
    let exact = round_to_exact(&input::design(design, k)?, n)?;
    let text = match format {
        Format::Json => to_json(&exact)?,
        Format::Csv => {
            let mut t = String::from("item,count\n");
            for p in exact.points() {
                let _ = writeln!(t, "\"{}\",{}", p.item, p.count.unwrap_or(0));
            }
            t
        }
        Format::Human => design_table(&exact, None),
    };
    Ok(Out::ok(text))
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    model: &ModelArgs,
    config: Option<&str>,
    design: Option<&str>,
    n: Option<u64>,
    replications: Option<usize>,
    seed: Option<u64>,
    beta_csv: Option<&str>,
    format: Format,
) -> Result<Out> {
    let base: Option<SimConfig> = config.map(|c| Ok::<_, anyhow::Error>(serde_json::from_value(input::read_json(c)?)?)).transpose()?;
    let m = if !model.is_empty() || base.is_none() {
        model.build()?
    } else {
        base.as_ref().map(|b| b.model.clone()).expect("config present")
    };
    let d = match design {
        Some(src) => input::design(src, Some(m.k()))?,
        None => base
            .as_ref()
            .map(|b| b.design.clone())
            .ok_or_else(|| anyhow!("simulate needs --design or --config"))?,
    };
    let d = match (d.is_exact(), n) {
        (_, Some(n)) => round_to_exact(&d, n)?,
        (true, None) => d,
        (false, None) => bail!("approximate design needs --n to round"),
    };
    let cfg = SimConfig {
        design: d,
        model: m,
        replications: replications.or(base.as_ref().map(|b| b.replications)).unwrap_or(1000),
        seed: seed.or(base.as_ref().map(|b| b.seed)).unwrap_or(0),
    };
    let report = covariance_check(&cfg)?;
    if let Some(path) = beta_csv {
        fs::write(path, report.beta_hat_csv()).with_context(|| format!("writing {path}"))?;
    }
    let text = match format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut t = String::from("i,j,empirical,predicted\n");
            for (i, row) in report.empirical_cov.iter().enumerate() {
                for (j, e) in row.iter().enumerate() {
                    let _ = writeln!(t, "{i},{j},{e},{}", report.predicted_cov[i][j]);
                }
            }
            t
        }
        Format::Human => {
            let mut t = model_summary(&cfg.model);
            let _ = writeln!(
                t,
                "{} replications ({} failed fits), n = {}, seed {}",
                report.replications, report.failures, report.n, cfg.seed
            );
            let _ = writeln!(t, "{:>6} {:>14} {:>14} {:>14}", "coef", "mean", "empirical var", "predicted var");
            for i in 0..report.mean_beta_hat.len() {
                let _ = writeln!(
                    t,
                    "{:>6} {:>14.6} {:>14.6e} {:>14.6e}",
                    i, report.mean_beta_hat[i], report.empirical_cov[i][i], report.predicted_cov[i][i]
                );
            }
            let _ = writeln!(t, "max diagonal relative error {:.4}", report.max_rel_error);
            let _ = writeln!(t, "max scaled off-diagonal error {:.4}", report.max_scaled_offdiag_error);
            t
        }
    };
    Ok(Out::ok(text))
}

fn cmd_compare(model: &ModelArgs, designs: &[String], linear_example: bool, format: Format) -> Result<Out> {
    if linear_example {
        let report = linear_volume_ratio_report()?;
        let text = match format {
            Format::Json => to_json(&report)?,
            Format::Csv => rows_csv(&report.rows),
            Format::Human => format!("{report}\n"),
        };
        return Ok(Out::ok(text));
    }
    if designs.is_empty() {
        bail!("compare needs at least one --design (or --linear-example)");
    }
    let m = model.build()?;
    let named = designs
        .iter()
        .map(|spec| {
            let (id, src) = match spec.split_once('=') {
                Some((id, src)) if !id.trim_start().starts_with('{') => (id.to_string(), src),
                _ => (spec.clone(), spec.as_str()),
            };
            Ok((id, input::design(src, Some(m.k()))?))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = compare_designs(&named, &m)?;
    let text = match format {
        Format::Json => to_json(&rows)?,
        Format::Csv => rows_csv(&rows),
        Format::Human => {
            let mut t = model_summary(&m);
            let _ = writeln!(t, "{:<20} {:>14} {:>12}", "design", "logdet", "efficiency");
            for r in &rows {
                let ld = r.log_det.map(|v| format!("{v:.6}")).unwrap_or_else(|| "singular".into());
                let e = r.efficiency.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(t, "{:<20} {:>14} {:>12}", r.id, ld, e);
            }
            t
        }
    };
    Ok(Out::ok(text))
}

fn rows_csv(rows: &[rasch_design::optimizer::CompareRow]) -> String {
    let mut t = String::from("design,logdet,efficiency\n");
    for r in rows {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(t, "{},{},{}", r.id, opt(r.log_det), opt(r.efficiency));
    }
    t
}

fn run(cli: Cli) -> Result<u8> {
    let format = cli.format.unwrap_or(match cli.command {
        Command::Boundary { .. } => Format::Csv,
        _ => Format::Human,
    });
    let out = match &cli.command {
        Command::Check { model, tol } => cmd_check(model, *tol, format)?,
        Command::Optimize { model, tol, max_iter, prune_threshold, start, history } => {
            let opts = OptimizeOptions {
                tol: *tol,
                max_iter: *max_iter,
                prune_threshold: *prune_threshold,
                ..OptimizeOptions::default()
            };
            cmd_optimize(model, opts, start.as_deref(), history.as_deref(), format)?
        }
        Command::Boundary { b, v_range, step, v } => cmd_boundary(b, v_range, *step, v.as_deref(), format)?,
        Command::Efficiency { model, design, reference, indifference } => {
            cmd_efficiency(model, design.as_deref(), reference.as_deref(), *indifference, format)?
        }
        Command::Round { design, n, k } => cmd_round(design, *n, *k, format)?,
        Command::Simulate { model, config, design, n, replications, seed, beta_csv } => cmd_simulate(
            model,
            config.as_deref(),
            design.as_deref(),
            *n,
            *replications,
            *seed,
            beta_csv.as_deref(),
            format,
        )?,
        Command::Compare { model, designs, linear_example } => cmd_compare(model, designs, *linear_example, format)?,
    };
    match &cli.output {
        Some(path) => fs::write(path, &out.text).with_context(|| format!("writing {path}"))?,
        None => print!("{}", out.text),
    }
    Ok(out.code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<ParseError>().is_some() { 1 } else { 2 })
        }
    }
}
