//! Stopping lines as per-particle rules evaluated on recorded forests.
//!
//! A rule fires for a particle at the first stored sample in
//! `[birth, min(end, t_cut))` where its predicate holds (fixed times fire at
//! exactly `t`, interpolating the path). A stopped particle prunes its whole
//! subtree, which makes the stops an antichain by construction.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{is_antichain, Label};
use crate::pde::ValueGrid;
use crate::simulator::{GenealogyRecord, ParticleRecord};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutPolicy {
    /// Unresolved particles leave the line and contribute a factor 1.
    #[default]
    Abandon,
    /// Unresolved particles are stopped at `t_cut`.
    ForceStop,
}

/// Serializable rule description; `contact_set` is bound to a grid by
/// [`RuleSpec::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleSpec {
    TrivialRoot,
    FixedTime {
        t: f64,
    },
    FirstBranch,
    ExitBall {
        center: Vec<f64>,
        radius: f64,
        cap_t: f64,
    },
    ContactSet {
        epsilon: f64,
    },
    Never,
    Min {
        first: Box<RuleSpec>,
        second: Box<RuleSpec>,
    },
}

impl RuleSpec {
    pub fn resolve(&self, grid: Option<&Arc<ValueGrid>>) -> Result<RuleKind> {
        Ok(match self {
            RuleSpec::TrivialRoot => RuleKind::TrivialRoot,
            RuleSpec::FixedTime { t } => {
                if !(*t >= 0.0) {
                    return Err(Error::invalid(format!("fixed_time needs t >= 0, got {t}")));
                }
                RuleKind::FixedTime(*t)
            }
            RuleSpec::FirstBranch => RuleKind::FirstBranch,
            RuleSpec::ExitBall {
                center,
                radius,
                cap_t,
            } => {
                if !(*radius >= 0.0 && *cap_t >= 0.0) {
                    return Err(Error::invalid("exit_ball needs radius >= 0 and cap_t >= 0"));
                }
                RuleKind::ExitBall {
                    center: center.clone(),
                    radius: *radius,
                    cap_t: *cap_t,
                }
            }
            RuleSpec::ContactSet { epsilon } => {
                let grid = grid.ok_or_else(|| Error::invalid("contact_set rule needs a solved grid"))?;
                contact_kind(grid, *epsilon)?
            }
            RuleSpec::Never => RuleKind::Never,
            RuleSpec::Min { first, second } => RuleKind::Min(
                Box::new(first.resolve(grid)?),
                Box::new(second.resolve(grid)?),
            ),
        })
    }
}

#[derive(Clone, Debug)]
pub enum RuleKind {
    /// Stops every initial particle at its birth.
    TrivialRoot,
    FixedTime(f64),
    /// Initial particles run until their first event, children stop at birth.
    FirstBranch,
    ExitBall {
        center: Vec<f64>,
        radius: f64,
        cap_t: f64,
    },
    ContactSet {
        grid: Arc<ValueGrid>,
        epsilon: f64,
    },
    Never,
    /// Whichever fires first; ties go to the first rule.
    Min(Box<RuleKind>, Box<RuleKind>),
}

impl RuleKind {
    pub fn spec(&self) -> RuleSpec {
        match self {
            RuleKind::TrivialRoot => RuleSpec::TrivialRoot,
            RuleKind::FixedTime(t) => RuleSpec::FixedTime { t: *t },
            RuleKind::FirstBranch => RuleSpec::FirstBranch,
            RuleKind::ExitBall {
                center,
                radius,
                cap_t,
            } => RuleSpec::ExitBall {
                center: center.clone(),
                radius: *radius,
                cap_t: *cap_t,
            },
            RuleKind::ContactSet { epsilon, .. } => RuleSpec::ContactSet { epsilon: *epsilon },
            RuleKind::Never => RuleSpec::Never,
            RuleKind::Min(a, b) => RuleSpec::Min {
                first: Box::new(a.spec()),
                second: Box::new(b.spec()),
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            RuleKind::TrivialRoot => "trivial_root".into(),
            RuleKind::FixedTime(t) => format!("fixed_time({t})"),
            RuleKind::FirstBranch => "first_branch".into(),
            RuleKind::ExitBall { radius, cap_t, .. } => format!("exit_ball(r={radius}, cap={cap_t})"),
            RuleKind::ContactSet { epsilon, .. } => format!("contact_set(eps={epsilon})"),
            RuleKind::Never => "never".into(),
            RuleKind::Min(a, b) => format!("min({}, {})", a.name(), b.name()),
        }
    }

    fn check_grids(&self, fingerprint: &str) -> Result<()> {
        match self {
            RuleKind::ContactSet { grid, .. } if grid.model_fingerprint != fingerprint => {
                Err(Error::ModelMismatch {
                    grid: grid.model_fingerprint.clone(),
                    model: fingerprint.to_string(),
                })
            }
            RuleKind::Min(a, b) => {
                a.check_grids(fingerprint)?;
                b.check_grids(fingerprint)
            }
            _ => Ok(()),
        }
    }

    /// First firing time in `[birth, window_end)` and the position there.
    pub fn fire(&self, p: &ParticleRecord, window_end: f64) -> Option<(f64, Vec<f64>)> {
        if p.birth_time >= window_end {
            return None;
        }
        match self {
            RuleKind::TrivialRoot => p
                .parent
                .is_none()
                .then(|| (p.birth_time, p.initial_position().to_vec())),
            RuleKind::FirstBranch => p
                .parent
                .is_some()
                .then(|| (p.birth_time, p.initial_position().to_vec())),
            RuleKind::FixedTime(t) => fixed_time(p, *t, window_end),
            RuleKind::ExitBall {
                center,
                radius,
                cap_t,
            } => {
                let end = window_end.min(*cap_t);
                let exit = first_sample(p, end, |x| {
                    let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                    r2 >= radius * radius
                });
                exit.or_else(|| fixed_time(p, *cap_t, window_end))
            }
            RuleKind::ContactSet { grid, epsilon } => {
                let level = p.label.generation();
                first_sample(p, window_end, |x| grid.contact_gap(level, x[0]) <= *epsilon)
            }
            RuleKind::Never => None,
            RuleKind::Min(a, b) => match (a.fire(p, window_end), b.fire(p, window_end)) {
                (Some(fa), Some(fb)) => Some(if fb.0 < fa.0 { fb } else { fa }),
                (fa, fb) => fa.or(fb),
            },
        }
    }
}

fn fixed_time(p: &ParticleRecord, t: f64, window_end: f64) -> Option<(f64, Vec<f64>)> {
    (p.birth_time <= t && t < window_end).then(|| (t, p.position_at_age(t - p.birth_time)))
}

fn first_sample(
    p: &ParticleRecord,
    end: f64,
    pred: impl Fn(&[f64]) -> bool,
) -> Option<(f64, Vec<f64>)> {
    (0..p.sample_count())
        .take_while(|&i| p.time(i) < end)
        .find(|&i| pred(p.position(i)))
        .map(|i| (p.time(i), p.position(i).to_vec()))
}

fn contact_kind(grid: &Arc<ValueGrid>, epsilon: f64) -> Result<RuleKind> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !grid.is_solved() {
        return Err(Error::Unsolved);
    }
    Ok(RuleKind::ContactSet {
        grid: Arc::clone(grid),
        epsilon,
    })
}

#[derive(Clone, Debug)]
pub struct StoppingRule {
    pub kind: RuleKind,
    pub t_cut: f64,
    pub cut_policy: CutPolicy,
}

impl StoppingRule {
    pub fn new(kind: RuleKind, t_cut: f64, cut_policy: CutPolicy) -> Self {
        StoppingRule {
            kind,
            t_cut,
            cut_policy,
        }
    }
}

/// First hitting of `{v ≤ g + epsilon}` along each particle.
pub fn contact_set_rule(grid: &Arc<ValueGrid>, epsilon: f64, t_cut: f64) -> Result<StoppingRule> {
    Ok(StoppingRule::new(contact_kind(grid, epsilon)?, t_cut, CutPolicy::Abandon))
}

/// Which factor a stop contributes to a reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopSource {
    /// `g` at the stop.
    Reward,
    /// `v` at the stop (the intermediate line of a DPP pair).
    Continuation,
    /// Forced at `t_cut`; contributes `g`.
    Cut,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stop {
    pub label: Label,
    pub tau: f64,
    pub position: Vec<f64>,
    pub generation: usize,
    pub source: StopSource,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutParticle {
    pub label: Label,
    pub birth_time: f64,
    pub position: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineOutcome {
    pub stops: Vec<Stop>,
    /// Particles that ended (branched or died) before being stopped.
    pub passed: Vec<Label>,
    /// Particles still unresolved at `t_cut` under [`CutPolicy::Abandon`].
    pub passed_alive: Vec<CutParticle>,
    /// Strict descendants of stops.
    pub descendants: Vec<Label>,
    /// Descendants of particles resolved at the cut.
    pub beyond_cut: Vec<Label>,
    /// Total lifetime of the pruned tree, each particle counted up to its
    /// stop, its death, or `t_cut`.
    pub tree_length: f64,
    pub t_cut: f64,
    pub cut_policy: CutPolicy,
    pub seed: u64,
}

impl LineOutcome {
    /// Columns: label, tau, x..., generation
    pub fn write_csv<W: Write>(&self, w: W, dimension: usize) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string(), "tau".into()];
        header.extend((0..dimension).map(|d| format!("x_{d}")));
        header.push("generation".into());
        out.write_record(&header)?;
        for s in &self.stops {
            let mut row = vec![s.label.to_string(), s.tau.to_string()];
            row.extend(s.position.iter().map(|x| x.to_string()));
            row.push(s.generation.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_pre(record: &GenealogyRecord, t_cut: f64) -> Result<()> {
    if !(t_cut >= 0.0 && t_cut <= record.horizon) {
        return Err(Error::invalid(format!(
            "t_cut = {t_cut} must lie in [0, horizon = {}]",
            record.horizon
        )));
    }
    Ok(())
}

fn collect_subtree(record: &GenealogyRecord, p: &ParticleRecord, out: &mut Vec<Label>) {
    let mut stack: Vec<&ParticleRecord> = record.children(p).collect();
    while let Some(q) = stack.pop() {
        out.push(q.label.clone());
        stack.extend(record.children(q));
    }
}

/// Depth-first resolution of every particle; `decide` returns a stop.
fn walk<F>(record: &GenealogyRecord, t_cut: f64, policy: CutPolicy, decide: F) -> LineOutcome
where
    F: Fn(&ParticleRecord, f64) -> Option<(f64, Vec<f64>, StopSource)>,
{
    let mut out = LineOutcome {
        stops: Vec::new(),
        passed: Vec::new(),
        passed_alive: Vec::new(),
        descendants: Vec::new(),
        beyond_cut: Vec::new(),
        tree_length: 0.0,
        t_cut,
        cut_policy: policy,
        seed: record.seed,
    };
    let mut stack: Vec<&ParticleRecord> = record
        .initial
        .iter()
        .rev()
        .filter_map(|(l, _)| record.get(l))
        .collect();
    while let Some(p) = stack.pop() {
        let window_end = p.end_time.min(t_cut);
        if let Some((tau, position, source)) = decide(p, window_end) {
            out.tree_length += tau - p.birth_time;
            out.stops.push(Stop {
                label: p.label.clone(),
                tau,
                position,
                generation: p.label.generation(),
                source,
            });
            collect_subtree(record, p, &mut out.descendants);
        } else if p.end_time <= t_cut {
            out.tree_length += p.end_time - p.birth_time;
            out.passed.push(p.label.clone());
            let mut kids: Vec<&ParticleRecord> = record.children(p).collect();
            kids.reverse();
            stack.extend(kids);
        } else {
            let age = (t_cut - p.birth_time).max(0.0);
            out.tree_length += age;
            let position = p.position_at_age(age);
            match policy {
                CutPolicy::Abandon => out.passed_alive.push(CutParticle {
                    label: p.label.clone(),
                    birth_time: p.birth_time,
                    position,
                }),
                CutPolicy::ForceStop => out.stops.push(Stop {
                    label: p.label.clone(),
                    tau: t_cut.max(p.birth_time),
                    position,
                    generation: p.label.generation(),
                    source: StopSource::Cut,
                }),
            }
            collect_subtree(record, p, &mut out.beyond_cut);
        }
    }
    out
}

pub fn evaluate_line(record: &GenealogyRecord, rule: &StoppingRule) -> Result<LineOutcome> {
    check_pre(record, rule.t_cut)?;
    rule.kind.check_grids(&record.model_fingerprint)?;
    Ok(walk(record, rule.t_cut, rule.cut_policy, |p, end| {
        rule.kind
            .fire(p, end)
            .map(|(t, x)| (t, x, StopSource::Reward))
    }))
}

/// Joint line of an intermediate rule `theta` and a terminal rule `tau`:
/// each particle goes to whichever fires first, ties to `theta`.
/// Cut handling follows `tau`.
pub fn evaluate_pair(
    record: &GenealogyRecord,
    theta: &RuleKind,
    tau: &StoppingRule,
) -> Result<LineOutcome> {
    check_pre(record, tau.t_cut)?;
    theta.check_grids(&record.model_fingerprint)?;
    tau.kind.check_grids(&record.model_fingerprint)?;
    Ok(walk(record, tau.t_cut, tau.cut_policy, |p, end| {
        match (theta.fire(p, end), tau.kind.fire(p, end)) {
            (Some((tt, xt)), Some((ts, xs))) => Some(if ts < tt {
                (ts, xs, StopSource::Reward)
            } else {
                (tt, xt, StopSource::Continuation)
            }),
            (Some((tt, xt)), None) => Some((tt, xt, StopSource::Continuation)),
            (None, Some((ts, xs))) => Some((ts, xs, StopSource::Reward)),
            (None, None) => None,
        }
    }))
}

pub fn validate_line_property(outcome: &LineOutcome) -> bool {
    is_antichain(outcome.stops.iter().map(|s| &s.label))
}
