//! One function per subcommand. Each writes fixed file names inside the
//! output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::json;
use stopline::model::{check_assumptions, linspace_points, moment_report, AssumptionReport, MomentReport, DEFAULT_L_MAX};
use stopline::pde::{residual_report, solve_generation_system, solve_scalar, LevelResiduals};
use stopline::reward::mc_value;
use stopline::verify::{branching_property_test, cross_validate, default_sweep, dpp_consistency};
use stopline::{simulate_forest, Label, McEstimate, RuleKind, RuleSpec, ValueGrid};

use crate::config::{RunConfig, UsageError};

/// Process exit status of a command that ran to completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Failed,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn require_seed(cfg: &RunConfig) -> anyhow::Result<()> {
    if !cfg.has_seed {
        bail!(UsageError(anyhow::anyhow!("mc.seed must be set explicitly")));
    }
    Ok(())
}

fn start(cfg: &RunConfig, x: &[f64]) -> anyhow::Result<(Label, Vec<f64>)> {
    if x.len() != cfg.model.dimension {
        bail!(stopline::Error::Invalid(format!(
            "start has {} coordinates, the model has dimension {}",
            x.len(),
            cfg.model.dimension
        )));
    }
    Ok((Label::root(), x.to_vec()))
}

fn solve(cfg: &RunConfig) -> anyhow::Result<ValueGrid> {
    let grid = if cfg.model.reward.depth > 0 {
        solve_generation_system(&cfg.model, &cfg.solver)?
    } else {
        solve_scalar(&cfg.model, &cfg.solver)?
    };
    Ok(grid)
}

fn uses_grid(rule: &RuleSpec) -> bool {
    match rule {
        RuleSpec::ContactSet { .. } => true,
        RuleSpec::Min { first, second } => uses_grid(first) || uses_grid(second),
        _ => false,
    }
}

#[derive(Serialize)]
struct CheckOutput<'a> {
    model_fingerprint: String,
    moments: &'a MomentReport,
    assumptions: &'a AssumptionReport,
    passed: bool,
}

pub fn check(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let s = &cfg.solver;
    let points = linspace_points(s.x_lo, s.x_hi, 201, cfg.model.dimension);
    let assumptions = check_assumptions(&cfg.model, &points);
    let moments = moment_report(&cfg.model, 0.0, &points, DEFAULT_L_MAX)?;
    let passed = assumptions.passed();
    write_json(
        out,
        "check.json",
        &CheckOutput {
            model_fingerprint: cfg.model.fingerprint(),
            moments: &moments,
            assumptions: &assumptions,
            passed,
        },
    )?;
    println!(
        "M = {}, M_bar = {} (order {}), gamma threshold {}",
        moments.m, moments.m_bar, moments.m_bar_order, moments.gamma_threshold
    );
    if !moments.unique_below_bound {
        println!("warning: gamma = {} is below the uniqueness threshold", moments.gamma);
    }
    for w in &assumptions.warnings {
        println!("warning: {w}");
    }
    for v in &assumptions.hard_violations {
        println!("violation: {v}");
    }
    println!("{}", if passed { "assumptions hold" } else { "assumptions violated" });
    Ok(if passed { Outcome::Ok } else { Outcome::Failed })
}

#[derive(Serialize)]
struct SolveLog<'a> {
    #[serde(flatten)]
    log: &'a stopline::pde::SolverLog,
    residuals: Vec<LevelResiduals>,
}

pub fn solve_cmd(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let grid = solve(cfg)?;
    grid.write_csv(create(out, "grid.csv")?)?;
    let log = grid.log.as_ref().context("solver returned no log")?;
    write_json(
        out,
        "solver_log.json",
        &SolveLog {
            log,
            residuals: residual_report(&grid)?,
        },
    )?;
    for w in &log.warnings {
        println!("warning: {w}");
    }
    println!("solved {} level(s) on {} cells", grid.levels.len(), grid.n_cells);
    Ok(Outcome::Ok)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    require_seed(cfg)?;
    let initial = vec![start(cfg, &cfg.simulate.start)?];
    let rec = simulate_forest(
        &cfg.model,
        &initial,
        cfg.simulate.horizon,
        &cfg.mc.sim_options(),
        cfg.mc.seed,
    )?;
    rec.write_forest_csv(create(out, "forest.csv")?)?;
    rec.write_paths_csv(create(out, "paths.csv")?)?;
    println!("simulated {} particles", rec.particles.len());
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct ValueOutput {
    model_fingerprint: String,
    rule: String,
    start: Vec<f64>,
    estimate: McEstimate,
}

pub fn value(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    require_seed(cfg)?;
    let grid = if uses_grid(&cfg.value.rule) {
        Some(Arc::new(solve(cfg)?))
    } else {
        None
    };
    let kind = cfg.value.rule.resolve(grid.as_ref())?;
    let rule = cfg.mc.rule(&cfg.model, kind);
    let x = start(cfg, &cfg.value.start)?;
    let estimate = mc_value(&cfg.model, &rule, &x, &cfg.mc)?;
    println!("{}: {} ± {}", rule.kind.name(), estimate.mean, estimate.stderr);
    write_json(
        out,
        "value.json",
        &ValueOutput {
            model_fingerprint: cfg.model.fingerprint(),
            rule: rule.kind.name(),
            start: x.1,
            estimate,
        },
    )?;
    Ok(Outcome::Ok)
}

pub fn verify(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    require_seed(cfg)?;
    let v = &cfg.verify;
    let grid = Arc::new(solve(cfg)?);
    let sweep: Vec<RuleKind> = match &v.sweep {
        Some(rules) => rules
            .iter()
            .map(|r| r.resolve(Some(&grid)))
            .collect::<stopline::Result<_>>()?,
        None => default_sweep(),
    };
    let mut report = cross_validate(&cfg.model, &grid, &v.points, v.epsilon, &sweep, &cfg.mc, &v.thresholds)?;
    for theta in &v.dpp_theta {
        let theta = theta.resolve(Some(&grid))?;
        for &x in &v.points {
            report
                .dpp
                .push(dpp_consistency(&cfg.model, &grid, &theta, x, v.epsilon, &cfg.mc, &v.thresholds)?);
        }
    }
    if let Some(b) = &v.branching {
        let x = start(cfg, &b.start)?;
        let (test, samples) = branching_property_test(&cfg.model, &x.1, b.s, b.window, &cfg.mc, &v.thresholds)?;
        report.branching = Some(test);
        report.samples.extend(samples);
    }
    report.update_pass();
    write_json(out, "verification.json", &report)?;
    if v.samples_csv {
        report.write_samples_csv(create(out, "samples.csv")?)?;
    }
    for p in &report.points {
        println!("x = {}: z = {:.3} {}", p.x, p.z_score, if p.pass { "ok" } else { "FAIL" });
    }
    println!("verification {}", if report.pass { "passed" } else { "failed" });
    Ok(if report.pass { Outcome::Ok } else { Outcome::Failed })
}

/// Timestamps and host details, kept apart from the result files.
pub fn write_meta(out: &Path, command: &str, started: u64, finished: u64, threads: usize) -> anyhow::Result<()> {
    write_json(
        out,
        &format!("{command}.meta.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix": started,
            "finished_unix": finished,
            "threads": threads,
            "os": std::env::consts::OS,
            "arch": std::env::consts::ARCH,
        }),
    )
}
