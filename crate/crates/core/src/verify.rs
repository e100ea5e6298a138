//! Monte Carlo checks of a solved grid: the value of the contact-set line,
//! suboptimality of other rules, the dynamic programming identity, and the
//! branching property.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Label;
use crate::model::ModelSpec;
use crate::pde::ValueGrid;
use crate::reward::{dpp_rhs, mc_samples, McEstimate, McSettings};
use crate::rng::{derive_seed, replication_seed};
use crate::simulator::{simulate_forest, EndKind, GenealogyRecord};
use crate::stats::{ks_two_sample, summarize};
use crate::stopping::{contact_set_rule, RuleKind, StoppingRule};

/// Stream tag for the independent sample of the branching test.
const FRESH_TAG: u64 = 0xB4A2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Largest accepted `|z|` for equality checks and `−z` for margins.
    pub z_max: f64,
    pub ks_p_min: f64,
    pub min_branch_samples: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            z_max: 3.0,
            ks_p_min: 0.01,
            min_branch_samples: 100,
        }
    }
}

/// Suboptimality sweep used when none is given.
pub fn default_sweep() -> Vec<RuleKind> {
    vec![
        RuleKind::TrivialRoot,
        RuleKind::Never,
        RuleKind::FixedTime(0.25),
        RuleKind::FixedTime(1.0),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointCheck {
    pub x: f64,
    pub v_pde: f64,
    /// Linear interpolation error estimate of `v_pde`.
    pub pde_error: f64,
    pub j_mc: McEstimate,
    pub gap: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCheck {
    pub rule: String,
    pub x: f64,
    pub v_pde: f64,
    pub estimate: McEstimate,
    /// `v_pde − mean`; no admissible line should beat `v`.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DppCheck {
    pub theta: String,
    pub x: f64,
    pub v_pde: f64,
    pub pde_error: f64,
    pub estimate: McEstimate,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchingStatus {
    Pass,
    Fail,
    /// Fewer root branch events than required.
    Insufficient,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchingTest {
    pub s: f64,
    pub branch_window: f64,
    pub reps: usize,
    pub seed: u64,
    pub samples: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub status: BranchingStatus,
    /// Re-simulating each subtree from its own streams reproduced sample A
    /// exactly.
    pub control_identical: bool,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// Per-replication values behind one check.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub check: String,
    pub x: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub model_fingerprint: String,
    pub model_hash: String,
    pub epsilon: f64,
    pub settings: McSettings,
    pub thresholds: Thresholds,
    pub points: Vec<PointCheck>,
    pub suboptimal: Vec<SweepCheck>,
    pub dpp: Vec<DppCheck>,
    pub branching: Option<BranchingTest>,
    pub pass: bool,
    #[serde(skip)]
    pub samples: Vec<SampleSet>,
}

impl VerificationReport {
    pub fn update_pass(&mut self) {
        self.pass = self.points.iter().all(|p| p.pass)
            && self.suboptimal.iter().all(|s| s.pass)
            && self.dpp.iter().all(|d| d.pass)
            && self
                .branching
                .as_ref()
                .map_or(true, |b| b.status != BranchingStatus::Fail);
    }

    /// Columns: check, x, rep, value
    pub fn write_samples_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["check", "x", "rep", "value"])?;
        for set in &self.samples {
            let x = set.x.to_string();
            for (r, v) in set.values.iter().enumerate() {
                out.write_record([set.check.as_str(), &x, &r.to_string(), &v.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn z_score(gap: f64, stderr: f64, pde_error: f64) -> f64 {
    let scale = stderr.hypot(pde_error);
    if scale > 0.0 {
        gap / scale
    } else if gap == 0.0 {
        0.0
    } else {
        gap.signum() * f64::INFINITY
    }
}

/// `h²|v''|/8` from the nearest second difference, the error bound of
/// linear interpolation between nodes.
fn interpolation_error(grid: &ValueGrid, x: f64) -> f64 {
    let v = &grid.level(0).values;
    let h = grid.step();
    let i = (((x - grid.x_lo) / h).round() as usize).clamp(1, grid.n_cells - 1);
    (v[i + 1] - 2.0 * v[i] + v[i - 1]).abs() / 8.0
}

fn check_grid(spec: &ModelSpec, grid: &ValueGrid, points: &[f64]) -> Result<()> {
    if !grid.is_solved() {
        return Err(Error::Unsolved);
    }
    let fp = spec.fingerprint();
    if grid.model_fingerprint != fp {
        return Err(Error::ModelMismatch {
            grid: grid.model_fingerprint.clone(),
            model: fp,
        });
    }
    if let Some(x) = points.iter().find(|x| !(**x >= grid.x_lo && **x <= grid.x_hi)) {
        return Err(Error::invalid(format!(
            "point {x} lies outside the grid [{}, {}]",
            grid.x_lo, grid.x_hi
        )));
    }
    Ok(())
}

fn estimate(values: &[f64], rule: &StoppingRule, settings: &McSettings) -> McEstimate {
    let (mean, stderr) = summarize(values);
    McEstimate {
        mean,
        stderr,
        reps: values.len(),
        seed: settings.seed,
        t_cut: rule.t_cut,
        cut_policy: rule.cut_policy,
        discounting: settings.discounting,
    }
}

/// Runs the contact-set line at each point and every rule of `sweep`
/// against the level-0 values of `grid`.
pub fn cross_validate(
    spec: &ModelSpec,
    grid: &Arc<ValueGrid>,
    points: &[f64],
    epsilon: f64,
    sweep: &[RuleKind],
    settings: &McSettings,
    thresholds: &Thresholds,
) -> Result<VerificationReport> {
    check_grid(spec, grid, points)?;
    let mut tau = contact_set_rule(grid, epsilon, settings.t_cut_for(spec))?;
    tau.cut_policy = settings.cut_policy;
    let mut report = VerificationReport {
        model_fingerprint: grid.model_fingerprint.clone(),
        model_hash: grid.model_hash.clone(),
        epsilon,
        settings: settings.clone(),
        thresholds: thresholds.clone(),
        points: Vec::new(),
        suboptimal: Vec::new(),
        dpp: Vec::new(),
        branching: None,
        pass: false,
        samples: Vec::new(),
    };
    for &x in points {
        let start = (Label::root(), vec![x]);
        let v_pde = grid.value(0, x);
        let pde_error = interpolation_error(grid, x);
        let values = mc_samples(spec, &tau, &start, settings)?;
        let j_mc = estimate(&values, &tau, settings);
        let gap = v_pde - j_mc.mean;
        let z = z_score(gap, j_mc.stderr, pde_error);
        report.points.push(PointCheck {
            x,
            v_pde,
            pde_error,
            j_mc,
            gap,
            z_score: z,
            pass: z.abs() <= thresholds.z_max,
        });
        report.samples.push(SampleSet {
            check: tau.kind.name(),
            x,
            values,
        });
        for kind in sweep {
            let rule = settings.rule(spec, kind.clone());
            let values = mc_samples(spec, &rule, &start, settings)?;
            let est = estimate(&values, &rule, settings);
            let margin = v_pde - est.mean;
            report.suboptimal.push(SweepCheck {
                rule: kind.name(),
                x,
                v_pde,
                margin,
                pass: margin >= -thresholds.z_max * est.stderr.hypot(pde_error),
                estimate: est,
            });
            report.samples.push(SampleSet {
                check: kind.name(),
                x,
                values,
            });
        }
    }
    report.update_pass();
    Ok(report)
}

/// Dynamic programming identity at `x`: continuation values on the line
/// `theta`, rewards on the contact-set line where it comes first.
pub fn dpp_consistency(
    spec: &ModelSpec,
    grid: &Arc<ValueGrid>,
    theta: &RuleKind,
    x: f64,
    epsilon: f64,
    settings: &McSettings,
    thresholds: &Thresholds,
) -> Result<DppCheck> {
    check_grid(spec, grid, &[x])?;
    match theta {
        RuleKind::FixedTime(_) | RuleKind::FirstBranch | RuleKind::ExitBall { .. } => {}
        other => {
            return Err(Error::invalid(format!(
                "DPP check takes fixed_time, first_branch or exit_ball, got {}",
                other.name()
            )))
        }
    }
    let mut tau = contact_set_rule(grid, epsilon, settings.t_cut_for(spec))?;
    tau.cut_policy = settings.cut_policy;
    let start = (Label::root(), vec![x]);
    let estimate = dpp_rhs(spec, theta, &tau, grid, &start, settings)?;
    let v_pde = grid.value(0, x);
    let pde_error = interpolation_error(grid, x);
    let z = z_score(v_pde - estimate.mean, estimate.stderr, pde_error);
    Ok(DppCheck {
        theta: theta.name(),
        x,
        v_pde,
        pde_error,
        estimate,
        z_score: z,
        pass: z.abs() <= thresholds.z_max,
    })
}

/// Tree-length reward of the `fixed_time(s)` line on the subtree rooted at
/// `root`, with time measured from the subtree root's birth. Relative
/// birth times are sums of exact lifetimes, so equal subtrees give
/// bit-identical values wherever they sit in a forest.
fn subtree_reward(spec: &ModelSpec, record: &GenealogyRecord, root: &Label, s: f64) -> f64 {
    let mut ln_reward = 0.0;
    let mut length = 0.0;
    let mut stack = vec![(root.clone(), 0.0f64)];
    while let Some((label, birth)) = stack.pop() {
        let Some(p) = record.get(&label) else { continue };
        let death = birth + p.final_age;
        if s < death || p.end_kind == EndKind::AliveAtHorizon {
            length += s - birth;
            let factor = spec.reward(label.generation(), &p.position_at_age(s - birth));
            if factor <= 0.0 {
                return 0.0;
            }
            ln_reward += factor.ln();
            continue;
        }
        length += p.final_age;
        for c in record.children(p) {
            stack.push((c.label.clone(), death));
        }
    }
    (ln_reward - spec.gamma * length).exp()
}

/// First child of the root when the root branches with at least one child
/// inside `window`: its label and birth position.
fn first_child(record: &GenealogyRecord, window: f64) -> Option<(Label, Vec<f64>)> {
    let root = record.get(&Label::root())?;
    match root.end_kind {
        EndKind::Branched(k) if k >= 1 && root.end_time <= window => {
            Some((Label::root().child(0), root.final_position().to_vec()))
        }
        _ => None,
    }
}

/// Two-sample test of the branching property. Sample A: subtrees of the
/// root's first child inside recorded forests. Sample B: fresh forests
/// started from the same label and position with independent streams.
/// A third sample re-uses A's streams and must reproduce A exactly.
pub fn branching_property_test(
    spec: &ModelSpec,
    x: &[f64],
    s: f64,
    branch_window: f64,
    settings: &McSettings,
    thresholds: &Thresholds,
) -> Result<(BranchingTest, Vec<SampleSet>)> {
    if !(s > 0.0 && branch_window > 0.0) {
        return Err(Error::invalid("branching test needs positive s and branch window"));
    }
    if x.len() != spec.dimension {
        return Err(Error::invalid("start position has the wrong dimension"));
    }
    let opts = settings.sim_options();
    let pad = 2.0 * opts.dt;
    let initial = vec![(Label::root(), x.to_vec())];
    let rows = (0..settings.reps as u64)
        .into_par_iter()
        .map(|r| -> Result<Option<(f64, f64, f64)>> {
            let seed = replication_seed(settings.seed, r);
            let record = simulate_forest(spec, &initial, branch_window + s + pad, &opts, seed)?;
            let Some((label, pos)) = first_child(&record, branch_window) else {
                return Ok(None);
            };
            let a = subtree_reward(spec, &record, &label, s);
            let start = vec![(label.clone(), pos)];
            let fresh = simulate_forest(spec, &start, s + pad, &opts, derive_seed(seed, FRESH_TAG))?;
            let b = subtree_reward(spec, &fresh, &label, s);
            let replay = simulate_forest(spec, &start, s + pad, &opts, seed)?;
            let c = subtree_reward(spec, &replay, &label, s);
            Ok(Some((a, b, c)))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<(f64, f64, f64)> = rows.into_iter().flatten().collect();
    let a: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let control_identical = rows.iter().all(|r| r.0.to_bits() == r.2.to_bits());
    let ks = ks_two_sample(&a, &b);
    let status = if a.len() < thresholds.min_branch_samples {
        BranchingStatus::Insufficient
    } else if ks.p_value >= thresholds.ks_p_min {
        BranchingStatus::Pass
    } else {
        BranchingStatus::Fail
    };
    let test = BranchingTest {
        s,
        branch_window,
        reps: settings.reps,
        seed: settings.seed,
        samples: a.len(),
        statistic: ks.statistic,
        p_value: ks.p_value,
        status,
        control_identical,
        mean_a: summarize(&a).0,
        mean_b: summarize(&b).0,
    };
    let sets = vec![
        SampleSet {
            check: "branching_subtree".into(),
            x: x[0],
            values: a,
        },
        SampleSet {
            check: "branching_fresh".into(),
            x: x[0],
            values: b,
        },
    ];
    Ok((test, sets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Coefficient, Offspring, RateFn, RewardFamily, RewardFn};
    use crate::pde::{solve_scalar, SolverSettings};

    fn model(g: RewardFn, k_g: f64) -> ModelSpec {
        ModelSpec {
            dimension: 1,
            drift: Coefficient::Constant { value: 0.0 },
            diffusion: Coefficient::Constant { value: 1.0 },
            branch_rate: RateFn::Constant { value: 1.0 },
            alpha_bar: 1.0,
            offspring: Offspring::Binary { p0: 0.5, p2: 0.5 },
            gamma: 1.0,
            reward: RewardFamily::single(g),
            k_g,
        }
    }

    fn small_settings(reps: usize) -> McSettings {
        McSettings {
            reps,
            dt: 0.02,
            seed: 11,
            ..McSettings::default()
        }
    }

    #[test]
    fn constant_reward_stops_at_birth() {
        let spec = model(RewardFn::Constant { value: 1.0 }, 1.0);
        let grid = Arc::new(solve_scalar(&spec, &SolverSettings::on(-4.0, 4.0, 80)).unwrap());
        let report = cross_validate(
            &spec,
            &grid,
            &[-1.0, 0.3],
            1e-6,
            &[RuleKind::FixedTime(0.5)],
            &small_settings(50),
            &Thresholds::default(),
        )
        .unwrap();
        for p in &report.points {
            assert_eq!(p.j_mc.mean, 1.0);
            assert_eq!(p.j_mc.stderr, 0.0);
            assert_eq!(p.z_score, 0.0);
        }
        assert!(report.pass);
        let mut buf = Vec::new();
        report.write_samples_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 50);
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let spec = model(RewardFn::Constant { value: 1.0 }, 1.0);
        let grid = Arc::new(solve_scalar(&spec, &SolverSettings::on(-4.0, 4.0, 40)).unwrap());
        let mut other = spec.clone();
        other.gamma = 2.0;
        let err = cross_validate(&other, &grid, &[0.0], 1e-6, &[], &small_settings(10), &Thresholds::default());
        assert!(matches!(err, Err(Error::ModelMismatch { .. })));
        let outside = cross_validate(&spec, &grid, &[9.0], 1e-6, &[], &small_settings(10), &Thresholds::default());
        assert!(outside.is_err());
        let bad_theta = dpp_consistency(
            &spec,
            &grid,
            &RuleKind::Never,
            0.0,
            1e-6,
            &small_settings(10),
            &Thresholds::default(),
        );
        assert!(bad_theta.is_err());
    }

    #[test]
    fn dpp_at_time_zero_reads_the_grid() {
        let spec = model(
            RewardFn::Bump {
                amplitude: 2.0,
                center: 0.0,
                width: 1.0,
            },
            2.0,
        );
        let grid = Arc::new(solve_scalar(&spec, &SolverSettings::on(-6.0, 6.0, 240)).unwrap());
        let check = dpp_consistency(
            &spec,
            &grid,
            &RuleKind::FixedTime(0.0),
            0.4,
            1e-4,
            &small_settings(20),
            &Thresholds::default(),
        )
        .unwrap();
        assert_eq!(check.estimate.stderr, 0.0);
        assert!((check.estimate.mean - check.v_pde).abs() < 1e-12);
        assert!(check.pass);
    }

    #[test]
    fn frozen_particles_pass_the_branching_test() {
        let mut spec = model(
            RewardFn::Bump {
                amplitude: 2.0,
                center: 0.0,
                width: 1.0,
            },
            2.0,
        );
        spec.diffusion = Coefficient::Constant { value: 0.0 };
        let (test, sets) =
            branching_property_test(&spec, &[0.3], 0.5, 1.0, &small_settings(600), &Thresholds::default()).unwrap();
        assert!(test.control_identical);
        assert!(test.samples > 150, "{}", test.samples);
        assert_eq!(sets[0].values.len(), test.samples);
        assert_ne!(test.status, BranchingStatus::Fail, "{test:?}");
    }

    #[test]
    fn few_branch_events_are_insufficient() {
        let mut spec = model(RewardFn::Constant { value: 1.0 }, 1.0);
        spec.branch_rate = RateFn::Constant { value: 0.01 };
        let (test, _) =
            branching_property_test(&spec, &[0.0], 0.2, 0.5, &small_settings(200), &Thresholds::default()).unwrap();
        assert_eq!(test.status, BranchingStatus::Insufficient);
    }
}
