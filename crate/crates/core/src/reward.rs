//! Multiplicative rewards along stopping lines and their Monte Carlo means.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Label;
use crate::model::{ModelSpec, DEFAULT_K_MAX};
use crate::pde::ValueGrid;
use crate::rng::replication_seed;
use crate::simulator::{simulate_forest, SimOptions};
use crate::stats::summarize;
use crate::stopping::{evaluate_line, evaluate_pair, CutPolicy, LineOutcome, RuleKind, StopSource, StoppingRule};

/// How time is discounted along a line.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discounting {
    /// `Π_j e^{−γ τ_j} g(X_{τ_j})`: each stop is discounted by its own
    /// absolute stopping time.
    PerStop,
    /// `e^{−γ Λ} Π_j g(X_{τ_j})` with `Λ` the total lifetime of the pruned
    /// tree. This is the reward whose value function solves the obstacle
    /// problem in [`crate::pde`].
    #[default]
    TreeLength,
}

/// Truncation used when the caller does not set one.
pub fn default_t_cut(spec: &ModelSpec, discounting: Discounting) -> f64 {
    match discounting {
        Discounting::PerStop => spec.k_g.ln() / spec.gamma,
        // Remaining discount below 1e-4 of the reward bound.
        Discounting::TreeLength => (spec.k_g.ln() + 1e4f64.ln()) / spec.gamma,
    }
}

/// Reward of an outcome under `discounting`. Continuation stops read `grid`.
pub fn reward_value(
    spec: &ModelSpec,
    outcome: &LineOutcome,
    discounting: Discounting,
    grid: Option<&ValueGrid>,
) -> Result<f64> {
    let mut ln_total = match discounting {
        Discounting::PerStop => -spec.gamma * outcome.stops.iter().map(|s| s.tau).sum::<f64>(),
        Discounting::TreeLength => -spec.gamma * outcome.tree_length,
    };
    for s in &outcome.stops {
        let factor = match s.source {
            StopSource::Reward | StopSource::Cut => spec.reward(s.generation, &s.position),
            StopSource::Continuation => grid
                .ok_or_else(|| Error::invalid("continuation stop needs a value grid"))?
                .value(s.generation, s.position[0]),
        };
        if factor <= 0.0 {
            return Ok(0.0);
        }
        ln_total += factor.ln();
    }
    Ok(ln_total.exp())
}

/// Per-stop reward: `Π_j e^{−γ τ_j} g_{gen(j)}(X_{τ_j})`, empty product 1.
pub fn reward_of_outcome(spec: &ModelSpec, outcome: &LineOutcome) -> Result<f64> {
    reward_value(spec, outcome, Discounting::PerStop, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSettings {
    pub reps: usize,
    pub dt: f64,
    pub seed: u64,
    /// `None` selects [`default_t_cut`].
    pub t_cut: Option<f64>,
    pub cut_policy: CutPolicy,
    pub discounting: Discounting,
    pub k_max: u32,
    pub stride: usize,
    pub max_particles: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        let sim = SimOptions::default();
        McSettings {
            reps: 10_000,
            dt: sim.dt,
            seed: 0,
            t_cut: None,
            cut_policy: CutPolicy::Abandon,
            discounting: Discounting::TreeLength,
            k_max: DEFAULT_K_MAX,
            stride: sim.stride,
            max_particles: sim.max_particles,
        }
    }
}

impl McSettings {
    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            dt: self.dt,
            k_max: self.k_max,
            stride: self.stride,
            max_particles: self.max_particles,
        }
    }

    pub fn t_cut_for(&self, spec: &ModelSpec) -> f64 {
        self.t_cut
            .unwrap_or_else(|| default_t_cut(spec, self.discounting))
    }

    pub fn rule(&self, spec: &ModelSpec, kind: RuleKind) -> StoppingRule {
        StoppingRule::new(kind, self.t_cut_for(spec), self.cut_policy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub reps: usize,
    pub seed: u64,
    pub t_cut: f64,
    pub cut_policy: CutPolicy,
    pub discounting: Discounting,
}

impl McEstimate {
    /// Count-weighted mean and pooled variance of two batches.
    pub fn merge(&self, other: &McEstimate) -> McEstimate {
        let (n1, n2) = (self.reps as f64, other.reps as f64);
        let n = n1 + n2;
        let mean = (n1 * self.mean + n2 * other.mean) / n;
        // sums of squared deviations
        let ss1 = self.stderr * self.stderr * n1 * (n1 - 1.0);
        let ss2 = other.stderr * other.stderr * n2 * (n2 - 1.0);
        let delta = other.mean - self.mean;
        let ss = ss1 + ss2 + delta * delta * n1 * n2 / n;
        let stderr = (ss / (n - 1.0) / n).sqrt();
        McEstimate {
            mean,
            stderr,
            reps: self.reps + other.reps,
            ..self.clone()
        }
    }

    fn from_values(values: &[f64], seed: u64, rule: &StoppingRule, discounting: Discounting) -> Self {
        let (mean, stderr) = summarize(values);
        McEstimate {
            mean,
            stderr,
            reps: values.len(),
            seed,
            t_cut: rule.t_cut,
            cut_policy: rule.cut_policy,
            discounting,
        }
    }
}

/// Latest time at which `kind` can still leave a particle unresolved.
fn resolved_by(kind: &RuleKind) -> Option<f64> {
    match kind {
        RuleKind::TrivialRoot => Some(0.0),
        RuleKind::FixedTime(t) => Some(*t),
        RuleKind::ExitBall { cap_t, .. } => Some(*cap_t),
        RuleKind::Min(a, b) => match (resolved_by(a), resolved_by(b)) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        },
        _ => None,
    }
}

/// Shortest simulation that yields the same outcome as running to `t_cut`.
fn effective_cut(rule: &StoppingRule, extra: Option<&RuleKind>, dt: f64) -> (f64, f64) {
    let bound = [Some(&rule.kind), extra]
        .into_iter()
        .flatten()
        .filter_map(resolved_by)
        .fold(f64::INFINITY, f64::min);
    let t_cut = rule.t_cut.min(bound + dt);
    (t_cut, t_cut.max(2.0 * dt))
}

fn check_start(spec: &ModelSpec, start: &(Label, Vec<f64>), reps: usize) -> Result<()> {
    if reps < 2 {
        return Err(Error::invalid("Monte Carlo needs at least 2 replications"));
    }
    if start.1.len() != spec.dimension {
        return Err(Error::invalid("start position has the wrong dimension"));
    }
    Ok(())
}

/// Per-replication rewards of `rule` started from `start`.
pub fn mc_samples(
    spec: &ModelSpec,
    rule: &StoppingRule,
    start: &(Label, Vec<f64>),
    settings: &McSettings,
) -> Result<Vec<f64>> {
    check_start(spec, start, settings.reps)?;
    let opts = settings.sim_options();
    let (t_cut, horizon) = effective_cut(rule, None, opts.dt);
    let run_rule = StoppingRule::new(rule.kind.clone(), t_cut, rule.cut_policy);
    let initial = vec![start.clone()];
    (0..settings.reps as u64)
        .into_par_iter()
        .map(|r| {
            let rec = simulate_forest(spec, &initial, horizon, &opts, replication_seed(settings.seed, r))?;
            let out = evaluate_line(&rec, &run_rule)?;
            reward_value(spec, &out, settings.discounting, None)
        })
        .collect()
}

pub fn mc_value(
    spec: &ModelSpec,
    rule: &StoppingRule,
    start: &(Label, Vec<f64>),
    settings: &McSettings,
) -> Result<McEstimate> {
    let values = mc_samples(spec, rule, start, settings)?;
    Ok(McEstimate::from_values(&values, settings.seed, rule, settings.discounting))
}

/// Monte Carlo estimate of the right-hand side of the dynamic programming
/// identity: `v`-factors on particles claimed by `theta`, `g`-factors on
/// those claimed first by `tau`.
pub fn dpp_rhs(
    spec: &ModelSpec,
    theta: &RuleKind,
    tau: &StoppingRule,
    grid: &ValueGrid,
    start: &(Label, Vec<f64>),
    settings: &McSettings,
) -> Result<McEstimate> {
    check_start(spec, start, settings.reps)?;
    let fp = spec.fingerprint();
    if grid.model_fingerprint != fp {
        return Err(Error::ModelMismatch {
            grid: grid.model_fingerprint.clone(),
            model: fp,
        });
    }
    let opts = settings.sim_options();
    let (t_cut, horizon) = effective_cut(tau, Some(theta), opts.dt);
    let run_tau = StoppingRule::new(tau.kind.clone(), t_cut, tau.cut_policy);
    let initial = vec![start.clone()];
    let values = (0..settings.reps as u64)
        .into_par_iter()
        .map(|r| {
            let rec = simulate_forest(spec, &initial, horizon, &opts, replication_seed(settings.seed, r))?;
            let out = evaluate_pair(&rec, theta, &run_tau)?;
            reward_value(spec, &out, settings.discounting, Some(grid))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(McEstimate::from_values(&values, settings.seed, tau, settings.discounting))
}
