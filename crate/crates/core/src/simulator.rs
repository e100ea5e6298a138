//! Branching diffusion forests.
//!
//! Each particle runs on its own age clock. Positions follow Euler–Maruyama
//! on the grid `n·dt` of ages; branch events are proposed at rate `ᾱ` and
//! thinned against `α(x)`, so event ages are exact and the step preceding an
//! event is shortened to land on it.
//!
//! Per-particle draw order: one exponential for the first proposal, then per
//! step one standard normal per coordinate, then at each proposal one
//! uniform and (on rejection) one exponential.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{is_antichain, Label};
use crate::model::{linspace_points, moment_report, ModelSpec, DEFAULT_K_MAX, DEFAULT_L_MAX};
use crate::rng::{particle_stream, replication_seed};
use crate::stats::summarize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub dt: f64,
    pub k_max: u32,
    /// Keep every `stride`-th step; samples next to events are always kept.
    pub stride: usize,
    pub max_particles: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: 0.01,
            k_max: DEFAULT_K_MAX,
            stride: 1,
            max_particles: 1_000_000,
        }
    }
}

impl SimOptions {
    pub fn with_dt(dt: f64) -> Self {
        SimOptions {
            dt,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndKind {
    Branched(u32),
    AliveAtHorizon,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleRecord {
    pub label: Label,
    /// `None` for initial particles.
    pub parent: Option<Label>,
    pub birth_time: f64,
    /// Absolute death time, `+∞` when alive at the horizon.
    pub end_time: f64,
    pub end_kind: EndKind,
    /// Age at the last sample: the exact lifetime when branched.
    pub final_age: f64,
    dim: usize,
    ages: Vec<f64>,
    positions: Vec<f64>,
}

impl ParticleRecord {
    pub fn sample_count(&self) -> usize {
        self.ages.len()
    }

    pub fn age(&self, i: usize) -> f64 {
        self.ages[i]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.birth_time + self.ages[i]
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn initial_position(&self) -> &[f64] {
        self.position(0)
    }

    pub fn final_position(&self) -> &[f64] {
        self.position(self.ages.len() - 1)
    }

    pub fn is_alive_at(&self, t: f64) -> bool {
        self.birth_time <= t && t < self.end_time
    }

    pub fn offspring(&self) -> u32 {
        match self.end_kind {
            EndKind::Branched(k) => k,
            EndKind::AliveAtHorizon => 0,
        }
    }

    /// Linear interpolation between stored samples, clamped to the path.
    pub fn position_at_age(&self, age: f64) -> Vec<f64> {
        let idx = self.ages.partition_point(|&a| a <= age);
        if idx == 0 {
            return self.position(0).to_vec();
        }
        if idx >= self.ages.len() {
            return self.final_position().to_vec();
        }
        let (a0, a1) = (self.ages[idx - 1], self.ages[idx]);
        let w = if a1 > a0 { (age - a0) / (a1 - a0) } else { 0.0 };
        let (p0, p1) = (self.position(idx - 1), self.position(idx));
        p0.iter().zip(p1).map(|(&u, &v)| u + w * (v - u)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ThinningStats {
    pub proposals: u64,
    pub accepted: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenealogyRecord {
    pub particles: BTreeMap<Label, ParticleRecord>,
    pub initial: Vec<(Label, Vec<f64>)>,
    pub horizon: f64,
    pub seed: u64,
    pub dt: f64,
    pub dimension: usize,
    pub model_fingerprint: String,
    pub thinning: ThinningStats,
}

impl GenealogyRecord {
    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )))
        }
    }

    pub fn get(&self, label: &Label) -> Option<&ParticleRecord> {
        self.particles.get(label)
    }

    pub fn children<'a>(&'a self, p: &'a ParticleRecord) -> impl Iterator<Item = &'a ParticleRecord> {
        (0..p.offspring()).filter_map(move |k| self.particles.get(&p.label.child(k)))
    }

    pub fn population_count(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        Ok(self.particles.values().filter(|p| p.is_alive_at(t)).count())
    }

    pub fn total_born(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        Ok(self.particles.values().filter(|p| p.birth_time <= t).count())
    }

    pub fn alive_at(&self, t: f64) -> Vec<&Label> {
        self.particles
            .values()
            .filter(|p| p.is_alive_at(t))
            .map(|p| &p.label)
            .collect()
    }

    /// Times at which some particle branches, in increasing order.
    pub fn event_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self
            .particles
            .values()
            .filter(|p| matches!(p.end_kind, EndKind::Branched(_)))
            .map(|p| p.end_time)
            .collect();
        ts.sort_by(f64::total_cmp);
        ts
    }

    /// Columns: label, parent, birth_time, end_time, end_kind, k, x_birth..., x_end...
    pub fn write_forest_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![
            "label".to_string(),
            "parent".into(),
            "birth_time".into(),
            "end_time".into(),
            "end_kind".into(),
            "k".into(),
        ];
        header.extend((0..self.dimension).map(|d| format!("x_birth_{d}")));
        header.extend((0..self.dimension).map(|d| format!("x_end_{d}")));
        out.write_record(&header)?;
        for p in self.particles.values() {
            let (kind, k) = match p.end_kind {
                EndKind::Branched(k) => ("branched", k.to_string()),
                EndKind::AliveAtHorizon => ("alive_at_horizon", String::new()),
            };
            let mut row = vec![
                p.label.to_string(),
                p.parent.as_ref().map(|l| l.to_string()).unwrap_or_default(),
                p.birth_time.to_string(),
                p.end_time.to_string(),
                kind.to_string(),
                k,
            ];
            row.extend(p.initial_position().iter().map(|x| x.to_string()));
            row.extend(p.final_position().iter().map(|x| x.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Columns: label, t, x...
    pub fn write_paths_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string(), "t".into()];
        header.extend((0..self.dimension).map(|d| format!("x_{d}")));
        out.write_record(&header)?;
        for p in self.particles.values() {
            let label = p.label.to_string();
            for i in 0..p.sample_count() {
                let mut row = vec![label.clone(), p.time(i).to_string()];
                row.extend(p.position(i).iter().map(|x| x.to_string()));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

struct Pending {
    label: Label,
    parent: Option<Label>,
    birth: f64,
    x: Vec<f64>,
}

/// Simulate the forest started from `initial` up to `horizon`.
pub fn simulate_forest(
    spec: &ModelSpec,
    initial: &[(Label, Vec<f64>)],
    horizon: f64,
    opts: &SimOptions,
    seed: u64,
) -> Result<GenealogyRecord> {
    spec.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    if !(opts.dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {}", opts.dt)));
    }
    if opts.dt >= horizon {
        return Err(Error::invalid(format!(
            "dt = {} must be smaller than the horizon {horizon}",
            opts.dt
        )));
    }
    if opts.k_max == 0 || opts.stride == 0 {
        return Err(Error::invalid("k_max and stride must be at least 1"));
    }
    if !is_antichain(initial.iter().map(|(l, _)| l)) {
        return Err(Error::invalid("initial labels must form an antichain"));
    }
    if let Some((l, x)) = initial.iter().find(|(_, x)| x.len() != spec.dimension) {
        return Err(Error::invalid(format!(
            "initial position of {l} has dimension {}, model has {}",
            x.len(),
            spec.dimension
        )));
    }

    let mut particles = BTreeMap::new();
    let mut thinning = ThinningStats::default();
    let mut stack: Vec<Pending> = initial
        .iter()
        .rev()
        .map(|(l, x)| Pending {
            label: l.clone(),
            parent: None,
            birth: 0.0,
            x: x.clone(),
        })
        .collect();

    while let Some(job) = stack.pop() {
        if particles.len() >= opts.max_particles {
            return Err(Error::PopulationCap(opts.max_particles));
        }
        let rec = simulate_particle(spec, job, horizon, opts, seed, &mut thinning);
        if let EndKind::Branched(k) = rec.end_kind {
            for child in (0..k).rev() {
                stack.push(Pending {
                    label: rec.label.child(child),
                    parent: Some(rec.label.clone()),
                    birth: rec.end_time,
                    x: rec.final_position().to_vec(),
                });
            }
        }
        particles.insert(rec.label.clone(), rec);
    }

    Ok(GenealogyRecord {
        particles,
        initial: initial.to_vec(),
        horizon,
        seed,
        dt: opts.dt,
        dimension: spec.dimension,
        model_fingerprint: spec.fingerprint(),
        thinning,
    })
}

struct PathBuf {
    dim: usize,
    ages: Vec<f64>,
    positions: Vec<f64>,
    pending: Option<f64>,
    pending_x: Vec<f64>,
    since_kept: usize,
    stride: usize,
}

impl PathBuf {
    fn push(&mut self, age: f64, x: &[f64]) {
        self.ages.push(age);
        self.positions.extend_from_slice(x);
    }

    fn step(&mut self, age: f64, x: &[f64]) {
        self.since_kept += 1;
        if self.since_kept >= self.stride {
            self.since_kept = 0;
            self.pending = None;
            self.push(age, x);
        } else {
            self.pending = Some(age);
            self.pending_x.copy_from_slice(x);
        }
    }

    /// Final sample, preceded by the last skipped one.
    fn finish(&mut self, age: f64, x: &[f64]) {
        if let Some(a) = self.pending.take() {
            self.ages.push(a);
            self.positions.extend_from_slice(&self.pending_x);
        }
        self.push(age, x);
        debug_assert_eq!(self.positions.len(), self.ages.len() * self.dim);
    }
}

fn euler_step(spec: &ModelSpec, x: &mut [f64], h: f64, b: &mut [f64], s: &mut [f64], rng: &mut ChaCha8Rng) {
    spec.drift_into(x, b);
    spec.diffusion_into(x, s);
    let sq = h.sqrt();
    for k in 0..x.len() {
        let z: f64 = StandardNormal.sample(rng);
        x[k] += b[k] * h + s[k] * sq * z;
    }
}

fn simulate_particle(
    spec: &ModelSpec,
    job: Pending,
    horizon: f64,
    opts: &SimOptions,
    seed: u64,
    thinning: &mut ThinningStats,
) -> ParticleRecord {
    let dim = spec.dimension;
    let mut rng = particle_stream(seed, &job.label);
    let clock = Exp::new(spec.alpha_bar).expect("alpha_bar validated positive");
    let horizon_age = horizon - job.birth;
    let dt = opts.dt;

    let mut x = job.x;
    let mut path = PathBuf {
        dim,
        ages: Vec::new(),
        positions: Vec::new(),
        pending: None,
        pending_x: vec![0.0; dim],
        since_kept: 0,
        stride: opts.stride,
    };
    path.push(0.0, &x);
    let (mut b, mut s) = (vec![0.0; dim], vec![0.0; dim]);

    let mut age = 0.0;
    let mut n: u64 = 0;
    let mut next_event = clock.sample(&mut rng);

    let end_kind = loop {
        if horizon_age <= 0.0 {
            break EndKind::AliveAtHorizon;
        }
        let grid_age = (n + 1) as f64 * dt;
        let event = next_event < horizon_age && next_event <= grid_age;
        let target = if event {
            next_event
        } else {
            grid_age.min(horizon_age)
        };
        let h = target - age;
        if h > 0.0 {
            euler_step(spec, &mut x, h, &mut b, &mut s, &mut rng);
        }
        age = target;
        if target >= grid_age {
            n += 1;
        }
        if event {
            thinning.proposals += 1;
            let u = rng.random::<f64>() * spec.alpha_bar;
            let a = spec.branch_rate(&x);
            if u < a {
                thinning.accepted += 1;
                let k = spec.offspring_law(&x).sample(u / a, opts.k_max);
                path.finish(age, &x);
                break EndKind::Branched(k);
            }
            next_event += clock.sample(&mut rng);
            path.step(age, &x);
        } else if target >= horizon_age {
            path.finish(age, &x);
            break EndKind::AliveAtHorizon;
        } else {
            path.step(age, &x);
        }
    };

    let end_time = match end_kind {
        EndKind::Branched(_) => job.birth + age,
        EndKind::AliveAtHorizon => f64::INFINITY,
    };
    ParticleRecord {
        label: job.label,
        parent: job.parent,
        birth_time: job.birth,
        end_time,
        end_kind,
        final_age: age,
        dim,
        ages: path.ages,
        positions: path.positions,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentBoundCheck {
    pub empirical_mean: f64,
    pub stderr: f64,
    pub bound: f64,
    pub ln_bound: f64,
    pub m_bar: f64,
    pub reps: usize,
    pub pass: bool,
}

/// Compare the sample mean of `K^{N̄_t}` with `(K ∨ 1)^{exp(ᾱ M̄ t)}`.
pub fn empirical_moment_bound_check(
    spec: &ModelSpec,
    k: f64,
    t: f64,
    reps: usize,
    seed: u64,
    start: &[f64],
    opts: &SimOptions,
) -> Result<MomentBoundCheck> {
    if !(k > 0.0) {
        return Err(Error::invalid(format!("K must be positive, got {k}")));
    }
    if reps < 100 {
        return Err(Error::invalid("moment bound check needs at least 100 replications"));
    }
    let points = linspace_points(start[0] - 10.0, start[0] + 10.0, 201, spec.dimension);
    let m_bar = moment_report(spec, 2.0, &points, DEFAULT_L_MAX)?.m_bar;
    let initial = vec![(Label::root(), start.to_vec())];
    let values = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let rec = simulate_forest(spec, &initial, t, opts, replication_seed(seed, r))?;
            let born = rec.total_born(t)?;
            Ok(k.powi(born as i32))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, stderr) = summarize(&values);
    let ln_k = k.max(1.0).ln();
    // exp(ᾱM̄t) may overflow; with K ≤ 1 the bound is 1 regardless
    let ln_bound = if ln_k == 0.0 { 0.0 } else { (spec.alpha_bar * m_bar * t).exp() * ln_k };
    let pass = mean.ln() <= ln_bound;
    Ok(MomentBoundCheck {
        empirical_mean: mean,
        stderr,
        bound: ln_bound.exp(),
        ln_bound,
        m_bar,
        reps,
        pass,
    })
}
