//! The four workflows. Each returns the files to write plus a short summary
//! for the terminal; timing goes to its own files so result files stay
//! byte-identical across runs.

use std::time::Instant;

use aoii_core::ctmc::{ChannelSpec, GeneratorMatrix};
use aoii_core::optimizer::{evaluate_policy, optimize, EvalResult, Family, Optimized, Policy};
use aoii_core::simulator::{run, simulate, SimConfig, SimResult};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Axis, Format, RunConfig, SourceSpec};
use crate::error::CliError;
use crate::output::{self, csv_rows, csv_table, json, num, Artifact};
use crate::policy_io::PolicySpec;

/// Run-time overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub plot_script: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub artifacts: Vec<Artifact>,
    pub summary: String,
}

#[derive(Serialize)]
struct CycleOut {
    cycle: usize,
    d: f64,
    a: f64,
    c: f64,
    p: Vec<f64>,
}

#[derive(Serialize)]
struct AnalyzeOut {
    policy: PolicySpec,
    maoii: f64,
    rate: f64,
    pi: Vec<f64>,
    cycles: Vec<CycleOut>,
}

fn cycle_table(name: &str, eval: &EvalResult) -> Artifact {
    let n = eval.pi.len();
    let mut header: Vec<String> = ["cycle", "pi", "d", "a", "c"].iter().map(|s| s.to_string()).collect();
    header.extend((0..n).map(|i| format!("p_{i}")));
    let rows: Vec<Vec<String>> = eval
        .cycles
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mut r = vec![j.to_string(), num(eval.pi[j]), num(c.d), num(c.a), num(c.c)];
            r.extend(c.p.iter().map(|&x| num(x)));
            r
        })
        .collect();
    csv_table(name, &header, &rows)
}

fn select(format: Format, mut json_files: Vec<Artifact>, csv_files: Vec<Artifact>) -> Vec<Artifact> {
    let mut out = Vec::new();
    if format.json() {
        out.append(&mut json_files);
    }
    if format.csv() {
        out.extend(csv_files);
    }
    out
}

fn format_of(cfg: &RunConfig, o: &Overrides) -> Format {
    o.format.unwrap_or(cfg.output.format)
}

pub fn analyze(cfg: &RunConfig, o: &Overrides) -> Result<Report, CliError> {
    let g = cfg.generator()?;
    let pol = cfg.policy(g.n())?;
    let eval = evaluate_policy(&g, &cfg.channel, &pol)?;
    let out = AnalyzeOut {
        policy: PolicySpec::from_policy(&pol),
        maoii: eval.maoii,
        rate: eval.rate,
        pi: eval.pi.clone(),
        cycles: eval
            .cycles
            .iter()
            .enumerate()
            .map(|(j, c)| CycleOut { cycle: j, d: c.d, a: c.a, c: c.c, p: c.p.clone() })
            .collect(),
    };
    let summary = csv_table("analyze.csv", &["maoii".into(), "rate".into()], &[vec![num(eval.maoii), num(eval.rate)]]);
    let artifacts = select(
        format_of(cfg, o),
        vec![json("analyze.json", &out)],
        vec![summary, cycle_table("analyze_cycles.csv", &eval)],
    );
    Ok(Report { artifacts, summary: format!("MAoII = {}  R = {}", eval.maoii, eval.rate) })
}

#[derive(Serialize)]
struct OptimizeOut {
    family: Family,
    budget: f64,
    policy: PolicySpec,
    maoii: f64,
    rate: f64,
    pi: Vec<f64>,
    /// Present for the Lagrangian families.
    lagrange: Option<LagrangeOut>,
    /// PS only: even the largest intensity stays below the budget.
    saturated: bool,
}

#[derive(Serialize)]
struct LagrangeOut {
    lambda_star: f64,
    binding: bool,
    bisections: usize,
    bracket: (f64, f64),
    iterations: usize,
    converged: bool,
    eta_trace: Vec<f64>,
    value_vector: Vec<f64>,
}

#[derive(Serialize)]
struct OptimizeRow {
    family: Family,
    budget: f64,
    lambda_star: Option<f64>,
    maoii: f64,
    rate: f64,
    iterations: Option<usize>,
    converged: Option<bool>,
    policy: String,
}

#[derive(Serialize)]
struct Timing {
    family: Family,
    seconds: f64,
}

pub fn optimize_cmd(cfg: &RunConfig, o: &Overrides) -> Result<Report, CliError> {
    let g = cfg.generator()?;
    let (family, budget) = (cfg.family()?, cfg.budget()?);
    let start = Instant::now();
    let res = optimize(&g, &cfg.channel, budget, family, &cfg.solver)?;
    let seconds = start.elapsed().as_secs_f64();
    let policy = PolicySpec::from_policy(&res.policy);
    let lagrange = res.lagrange.as_ref().map(|l| LagrangeOut {
        lambda_star: l.outcome.report.lambda_star,
        binding: l.binding,
        bisections: l.bisections,
        bracket: l.bracket,
        iterations: l.outcome.report.iterations,
        converged: l.outcome.report.converged,
        eta_trace: l.outcome.report.eta_trace.clone(),
        value_vector: l.outcome.report.value_vector.clone(),
    });
    let row = OptimizeRow {
        family,
        budget,
        lambda_star: lagrange.as_ref().map(|l| l.lambda_star),
        maoii: res.eval.maoii,
        rate: res.eval.rate,
        iterations: lagrange.as_ref().map(|l| l.iterations),
        converged: lagrange.as_ref().map(|l| l.converged),
        policy: policy.compact(),
    };
    let out = OptimizeOut {
        family,
        budget,
        policy,
        maoii: res.eval.maoii,
        rate: res.eval.rate,
        pi: res.eval.pi.clone(),
        lagrange,
        saturated: res.saturated,
    };
    let mut artifacts = select(
        format_of(cfg, o),
        vec![json("optimize.json", &out)],
        vec![csv_rows("optimize.csv", &[row]), cycle_table("optimize_cycles.csv", &res.eval)],
    );
    artifacts.push(json("optimize_timing.json", &Timing { family, seconds }));
    Ok(Report {
        artifacts,
        summary: format!("{}: MAoII = {}  R = {}  policy = {}", family.name(), res.eval.maoii, res.eval.rate, out.policy.compact()),
    })
}

#[derive(Serialize)]
struct Analytic {
    maoii: f64,
    rate: f64,
}

#[derive(Serialize)]
struct SimulateOut {
    policy: PolicySpec,
    cycles: u64,
    seed: u64,
    result: SimResult,
    /// Absent when the policy has no stationary analysis (e.g. never transmits).
    analytic: Option<Analytic>,
}

#[derive(Serialize)]
struct SimulateRow {
    maoii_hat: f64,
    stderr_maoii: f64,
    rate_hat: f64,
    stderr_rate: f64,
    cycles: u64,
    seed: u64,
    analytic_maoii: Option<f64>,
    analytic_rate: Option<f64>,
}

pub fn simulate_cmd(cfg: &RunConfig, o: &Overrides) -> Result<Report, CliError> {
    let g = cfg.generator()?;
    let pol = cfg.policy(g.n())?;
    let seed = o.seed.unwrap_or(cfg.simulation.seed);
    let mut sim = SimConfig::new(g.clone(), cfg.channel, pol.clone(), cfg.simulation.cycles, seed);
    sim.trace = cfg.simulation.trace;
    let out = run(&sim)?;
    let analytic = evaluate_policy(&g, &cfg.channel, &pol).ok().map(|e| Analytic { maoii: e.maoii, rate: e.rate });
    let r = &out.result;
    let row = SimulateRow {
        maoii_hat: r.maoii_hat,
        stderr_maoii: r.stderr_maoii,
        rate_hat: r.rate_hat,
        stderr_rate: r.stderr_rate,
        cycles: r.cycle_count,
        seed,
        analytic_maoii: analytic.as_ref().map(|a| a.maoii),
        analytic_rate: analytic.as_ref().map(|a| a.rate),
    };
    let summary = format!(
        "MAoII = {} ± {}  R = {} ± {}  ({} cycles)",
        r.maoii_hat, r.stderr_maoii, r.rate_hat, r.stderr_rate, r.cycle_count
    );
    let doc = SimulateOut {
        policy: PolicySpec::from_policy(&pol),
        cycles: cfg.simulation.cycles,
        seed,
        result: out.result.clone(),
        analytic,
    };
    let mut artifacts = select(format_of(cfg, o), vec![json("simulate.json", &doc)], vec![csv_rows("simulate.csv", &[row])]);
    if cfg.simulation.trace {
        artifacts.push(csv_rows("trace.csv", &out.trace));
    }
    Ok(Report { artifacts, summary })
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    value: f64,
    family: Family,
    status: String,
    maoii: Option<f64>,
    rate: Option<f64>,
    lambda_star: Option<f64>,
    policy: Option<String>,
    sim_maoii: Option<f64>,
    sim_maoii_se: Option<f64>,
    sim_rate: Option<f64>,
    sim_rate_se: Option<f64>,
}

#[derive(Serialize)]
struct SweepOut<'a> {
    axis: Axis,
    rows: &'a [SweepRow],
}

#[derive(Serialize)]
struct SweepTiming {
    value: f64,
    family: Family,
    seconds: f64,
}

fn uniform_policy(family: Family, n: usize, tau: f64) -> Policy {
    match family {
        Family::Esat => Policy::Esat(vec![vec![tau; n]; n]),
        Family::Eat => Policy::Eat(vec![tau; n]),
        Family::St | Family::Ps => Policy::St(tau),
    }
}

struct Point {
    g: GeneratorMatrix,
    policy: Policy,
    eval: EvalResult,
    lambda: Option<f64>,
}

fn sweep_point(cfg: &RunConfig, axis: Axis, value: f64, family: Family) -> Result<Point, CliError> {
    let ch: ChannelSpec = cfg.channel;
    match axis {
        Axis::Tau => {
            let g = cfg.generator()?;
            let policy = uniform_policy(family, g.n(), value);
            let eval = evaluate_policy(&g, &ch, &policy)?;
            Ok(Point { g, policy, eval, lambda: None })
        }
        Axis::Budget | Axis::N => {
            let (g, budget) = if axis == Axis::N {
                let src: SourceSpec = cfg.source.with_n(value as usize)?;
                (src.build()?, cfg.budget()?)
            } else {
                (cfg.generator()?, value)
            };
            let Optimized { policy, eval, lagrange, .. } = optimize(&g, &ch, budget, family, &cfg.solver)?;
            let lambda = lagrange.map(|l| l.outcome.report.lambda_star);
            Ok(Point { g, policy, eval, lambda })
        }
    }
}

pub fn sweep(cfg: &RunConfig, o: &Overrides) -> Result<Report, CliError> {
    let spec = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("sweep: section required".into()))?;
    let points = spec.points()?;
    let families = spec.families()?;
    match spec.axis {
        Axis::Tau | Axis::Budget => {
            cfg.generator()?;
        }
        Axis::N => {
            cfg.budget()?;
            cfg.source.with_n(2)?;
        }
    }
    let seed = o.seed.unwrap_or(cfg.simulation.seed);
    let tasks: Vec<(usize, f64, Family)> = points
        .iter()
        .flat_map(|&v| families.iter().map(move |&f| (v, f)))
        .enumerate()
        .map(|(k, (v, f))| (k, v, f))
        .collect();

    let work = |&(k, value, family): &(usize, f64, Family)| -> Result<(SweepRow, f64), CliError> {
        let start = Instant::now();
        let mut row = SweepRow {
            value,
            family,
            status: "ok".into(),
            maoii: None,
            rate: None,
            lambda_star: None,
            policy: None,
            sim_maoii: None,
            sim_maoii_se: None,
            sim_rate: None,
            sim_rate_se: None,
        };
        match sweep_point(cfg, spec.axis, value, family) {
            Ok(p) => {
                row.maoii = Some(p.eval.maoii);
                row.rate = Some(p.eval.rate);
                row.lambda_star = p.lambda;
                row.policy = Some(PolicySpec::from_policy(&p.policy).compact());
                let seconds = start.elapsed().as_secs_f64();
                if spec.simulate {
                    let sim = SimConfig::new(p.g, cfg.channel, p.policy, cfg.simulation.cycles, seed.wrapping_add(k as u64));
                    let s = simulate(&sim)?;
                    row.sim_maoii = Some(s.maoii_hat);
                    row.sim_maoii_se = Some(s.stderr_maoii);
                    row.sim_rate = Some(s.rate_hat);
                    row.sim_rate_se = Some(s.stderr_rate);
                }
                Ok((row, seconds))
            }
            Err(CliError::Core(e)) => {
                row.status = format!("error: {e}");
                Ok((row, start.elapsed().as_secs_f64()))
            }
            Err(e) => Err(e),
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = o.jobs.filter(|&j| j > 0) {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    let results: Vec<(SweepRow, f64)> = pool.install(|| tasks.par_iter().map(work).collect::<Result<_, _>>())?;

    let rows: Vec<SweepRow> = results.iter().map(|(r, _)| r.clone()).collect();
    let timing: Vec<SweepTiming> =
        results.iter().map(|(r, s)| SweepTiming { value: r.value, family: r.family, seconds: *s }).collect();
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let axis_name = match spec.axis {
        Axis::Tau => "tau",
        Axis::Budget => "budget",
        Axis::N => "n",
    };
    let mut artifacts = select(
        format_of(cfg, o),
        vec![json("sweep.json", &SweepOut { axis: spec.axis, rows: &rows })],
        vec![csv_rows("sweep.csv", &rows)],
    );
    artifacts.push(csv_rows("sweep_timing.csv", &timing));
    if o.plot_script {
        let names: Vec<&str> = families.iter().map(|f| f.name()).collect();
        artifacts.push(output::plot_script("sweep.csv", axis_name, &names));
    }
    Ok(Report {
        artifacts,
        summary: format!("{} grid points over {axis_name}, {failed} with errors", rows.len()),
    })
}
