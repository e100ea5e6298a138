//! One-dimensional obstacle problem
//! `min{−𝓛v, v − g} = 0`, `𝓛v = ½σ²v'' + bv' + αG(w) − (α+γ)v`,
//! where `G` is the offspring generating function evaluated at the value
//! of the next generation (`w = v` for equal rewards).
//!
//! Upwind differences for the drift and central differences for the
//! diffusion give an M-matrix. The equal-reward problem is solved by Picard
//! iteration on `w`; the generation system by backward induction from the
//! deep level.

mod linear;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    fingerprint_of, moment_report, series_tail_bound, Coefficient, ModelSpec, OffspringLaw,
    RewardFn, DEFAULT_K_MAX, DEFAULT_L_MAX,
};
use linear::{policy_iteration, psor, scaled_residual, Tridiag};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Active-set (Howard) iteration with exact tridiagonal solves.
    #[default]
    PolicyIteration,
    /// Projected SOR with relaxation `omega`.
    Psor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Robin condition matching the decaying mode of the operator with
    /// coefficients frozen at the end node.
    #[default]
    FarField,
    /// `v = g` at both ends.
    Obstacle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_cells: usize,
    pub tol_fp: f64,
    pub tol_lin: f64,
    pub k_max: u32,
    pub max_outer: usize,
    pub max_sweeps: usize,
    pub omega: f64,
    pub linear_solver: LinearSolver,
    pub boundary: Boundary,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            x_lo: -5.0,
            x_hi: 5.0,
            n_cells: 400,
            tol_fp: 1e-8,
            tol_lin: 1e-10,
            k_max: DEFAULT_K_MAX,
            max_outer: 200,
            max_sweeps: 100_000,
            omega: 1.5,
            linear_solver: LinearSolver::PolicyIteration,
            boundary: Boundary::FarField,
        }
    }
}

impl SolverSettings {
    pub fn on(x_lo: f64, x_hi: f64, n_cells: usize) -> Self {
        SolverSettings {
            x_lo,
            x_hi,
            n_cells,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.x_lo.is_finite()
            && self.x_hi.is_finite()
            && self.x_lo < self.x_hi
            && self.n_cells >= 2
            && self.tol_fp > 0.0
            && self.tol_lin > 0.0
            && self.k_max >= 1
            && self.max_outer >= 1
            && self.max_sweeps >= 1
            && self.omega > 0.0
            && self.omega < 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad solver settings {self:?}")))
        }
    }

    pub fn step(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.n_cells as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Obstacle,
    FarField,
}

/// Condition used at one end of the grid, with what is needed to
/// extrapolate the value beyond it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryInfo {
    pub x: f64,
    pub kind: BoundaryKind,
    /// Mode written in `ln|x|` rather than `x`.
    pub log_coordinate: bool,
    /// Decay exponent in the chosen coordinate.
    pub exponent: f64,
    /// `v'(x_b) = slope · (v(x_b) − particular)`.
    pub slope: f64,
    pub particular: f64,
    pub value: f64,
}

impl BoundaryInfo {
    fn extrapolate(&self, x: f64) -> f64 {
        let mode = if self.log_coordinate {
            (x / self.x).powf(self.exponent)
        } else {
            (self.slope * (x - self.x)).exp()
        };
        self.particular + (self.value - self.particular) * mode
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridLevel {
    pub generation: usize,
    pub reward: RewardFn,
    pub values: Vec<f64>,
    pub obstacle: Vec<f64>,
    pub contact: Vec<bool>,
    /// `(Av − f)_i / A_ii` with the source evaluated at the converged values.
    pub operator_residual: Vec<f64>,
    /// Last Picard step (zero for levels solved directly).
    pub fp_residual: f64,
    pub boundary: [BoundaryInfo; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// The uniform value bound `V̄`.
    ValueBound,
    /// `max g`.
    RewardMax,
    /// Smallest constant supersolution found by search.
    Supersolution,
    /// The next generation's values (backward induction).
    NextLevel,
    /// The obstacle itself; monotonicity is not guaranteed.
    Obstacle,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelLog {
    pub generation: usize,
    pub init: InitKind,
    pub init_value: f64,
    pub outer_iterations: usize,
    pub steps: Vec<f64>,
    pub ratios: Vec<f64>,
    pub monotone: bool,
    pub linear_iterations: Vec<usize>,
    pub boundary: [BoundaryInfo; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverLog {
    pub model_hash: String,
    pub settings: SolverSettings,
    pub m_bar: f64,
    pub m_bar_attained_interior: bool,
    pub value_bound: f64,
    pub ln_value_bound: f64,
    pub gamma_threshold: f64,
    pub uniqueness_condition_met: bool,
    pub contraction_bound: f64,
    /// Series tail beyond `k_max` at the largest iterate, added to the
    /// residual budget.
    pub tail_budget: f64,
    pub levels: Vec<LevelLog>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_cells: usize,
    pub levels: Vec<GridLevel>,
    pub model_fingerprint: String,
    /// Fingerprint of the model together with the solver settings.
    pub model_hash: String,
    pub k_g: f64,
    pub log: Option<SolverLog>,
}

impl ValueGrid {
    /// Empty grid carrying only the identity of a model and settings.
    pub fn unsolved(spec: &ModelSpec, settings: &SolverSettings) -> Self {
        ValueGrid {
            x_lo: settings.x_lo,
            x_hi: settings.x_hi,
            n_cells: settings.n_cells,
            levels: Vec::new(),
            model_fingerprint: spec.fingerprint(),
            model_hash: fingerprint_of(&(spec, settings)),
            k_g: spec.k_g,
            log: None,
        }
    }

    pub fn is_solved(&self) -> bool {
        !self.levels.is_empty()
    }

    pub fn step(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.n_cells as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.step()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|i| self.node(i)).collect()
    }

    /// Level used for particles of generation `n`.
    pub fn level(&self, n: usize) -> &GridLevel {
        &self.levels[n.min(self.levels.len() - 1)]
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let p = (x - self.x_lo) / self.step();
        let i = (p.floor().max(0.0) as usize).min(self.n_cells - 1);
        (i, p - i as f64)
    }

    fn interpolate(&self, data: &[f64], x: f64) -> f64 {
        let (i, w) = self.locate(x);
        data[i] + w * (data[i + 1] - data[i])
    }

    pub fn reward(&self, n: usize, x: f64) -> f64 {
        self.level(n).reward.eval(&[x], self.k_g)
    }

    /// `v_n(x)`: linear interpolation inside the domain, the boundary
    /// condition's extension outside.
    pub fn value(&self, n: usize, x: f64) -> f64 {
        let lev = self.level(n);
        if x < self.x_lo || x > self.x_hi {
            let b = &lev.boundary[usize::from(x > self.x_hi)];
            return match b.kind {
                BoundaryKind::FarField => b.extrapolate(x).max(self.reward(n, x)),
                BoundaryKind::Obstacle => self.reward(n, x),
            };
        }
        self.interpolate(&lev.values, x)
    }

    /// `v_n − g_n` at `x`, interpolating the nodal gaps. Outside the domain
    /// it is zero under the obstacle condition.
    pub fn contact_gap(&self, n: usize, x: f64) -> f64 {
        if x < self.x_lo || x > self.x_hi {
            return self.value(n, x) - self.reward(n, x);
        }
        let lev = self.level(n);
        let (i, w) = self.locate(x);
        let g0 = lev.values[i] - lev.obstacle[i];
        let g1 = lev.values[i + 1] - lev.obstacle[i + 1];
        g0 + w * (g1 - g0)
    }

    /// Columns: n, x, v, g, contact
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        if !self.is_solved() {
            return Err(Error::Unsolved);
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "x", "v", "g", "contact"])?;
        let xs = self.nodes();
        for lev in &self.levels {
            let n = lev.generation.to_string();
            for (i, x) in xs.iter().enumerate() {
                out.write_record([
                    n.as_str(),
                    &x.to_string(),
                    &lev.values[i].to_string(),
                    &lev.obstacle[i].to_string(),
                    if lev.contact[i] { "1" } else { "0" },
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// `½σ²m + bq + αG(w) − (α+γ)r` at `x`.
pub fn apply_operator(
    spec: &ModelSpec,
    x: f64,
    r: f64,
    q: f64,
    m: f64,
    next_gen_value: f64,
    k_max: u32,
) -> Result<f64> {
    if spec.dimension != 1 {
        return Err(Error::invalid("the operator is implemented for dimension 1"));
    }
    let p = [x];
    let sigma = spec.diffusion.eval(x);
    let alpha = spec.branch_rate(&p);
    let g = spec.generating_function(&p, next_gen_value, k_max)?;
    Ok(0.5 * sigma * sigma * m + spec.drift.eval(x) * q + alpha * g - (alpha + spec.gamma) * r)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum End {
    Left,
    Right,
}

/// Discretized model on the grid.
struct Problem<'a> {
    spec: &'a ModelSpec,
    settings: &'a SolverSettings,
    xs: Vec<f64>,
    h: f64,
    half_s2: Vec<f64>,
    drift: Vec<f64>,
    alpha: Vec<f64>,
    laws: Vec<OffspringLaw>,
    base: Tridiag,
}

struct LevelSolve {
    level: GridLevel,
    log: LevelLog,
    warnings: Vec<String>,
}

impl<'a> Problem<'a> {
    fn new(spec: &'a ModelSpec, settings: &'a SolverSettings) -> Result<Self> {
        spec.validate()?;
        settings.validate()?;
        if spec.dimension != 1 {
            return Err(Error::invalid("the PDE solver handles dimension 1 only"));
        }
        let n = settings.n_cells + 1;
        let h = settings.step();
        let xs: Vec<f64> = (0..n).map(|i| settings.x_lo + i as f64 * h).collect();
        let half_s2: Vec<f64> = xs
            .iter()
            .map(|&x| 0.5 * spec.diffusion.eval(x).powi(2))
            .collect();
        let drift: Vec<f64> = xs.iter().map(|&x| spec.drift.eval(x)).collect();
        let alpha: Vec<f64> = xs.iter().map(|&x| spec.branch_rate(&[x])).collect();
        let laws = xs.iter().map(|&x| spec.offspring_law(&[x])).collect();

        let mut base = Tridiag::zeros(n);
        for i in 1..n - 1 {
            let diff = half_s2[i] / (h * h);
            let l = diff + (-drift[i]).max(0.0) / h;
            let u = diff + drift[i].max(0.0) / h;
            base.sub[i] = -l;
            base.sup[i] = -u;
            base.diag[i] = l + u + alpha[i] + spec.gamma;
        }
        Ok(Problem {
            spec,
            settings,
            xs,
            h,
            half_s2,
            drift,
            alpha,
            laws,
            base,
        })
    }

    fn len(&self) -> usize {
        self.xs.len()
    }

    fn obstacle(&self, g: &RewardFn) -> Vec<f64> {
        self.xs.iter().map(|&x| g.eval(&[x], self.spec.k_g)).collect()
    }

    fn source(&self, w: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                if self.alpha[i] == 0.0 {
                    0.0
                } else {
                    self.alpha[i] * self.laws[i].pgf(w[i], self.settings.k_max)
                }
            })
            .collect()
    }

    /// Far-field value at an end node: the constant solution of
    /// `min{(α+γ)z − αG(z'), z − g} = 0` with coefficients frozen there.
    /// For a self-consistent level `z' = z`, found by iterating downwards
    /// from the current iterate; otherwise `z'` is the next level's
    /// far-field value.
    fn far_value(&self, i: usize, w: f64, g: f64, next: Option<f64>) -> f64 {
        let (alpha, c) = (self.alpha[i], self.alpha[i] + self.spec.gamma);
        let law = &self.laws[i];
        let k_max = self.settings.k_max;
        let map = |z: f64| g.max(alpha * law.pgf(z, k_max) / c);
        if let Some(p) = next {
            return map(p);
        }
        let mut z = w;
        for _ in 0..100_000 {
            let nz = map(z);
            if (nz - z).abs() <= 1e-15 * z.abs().max(1.0) {
                return nz;
            }
            z = nz;
        }
        z
    }

    /// Far-field row data: Robin condition `v' = λ(v − z)` with `λ` the
    /// outward-decaying root for the operator linearized about `z`.
    fn boundary(&self, end: End, w: &[f64], g: &[f64], next: Option<f64>) -> (BoundaryInfo, Option<String>) {
        let i = match end {
            End::Left => 0,
            End::Right => self.len() - 1,
        };
        let x = self.xs[i];
        let obstacle = BoundaryInfo {
            x,
            kind: BoundaryKind::Obstacle,
            log_coordinate: false,
            exponent: 0.0,
            slope: 0.0,
            particular: g[i],
            value: g[i],
        };
        if self.settings.boundary == Boundary::Obstacle {
            return (obstacle, None);
        }
        let particular = self.far_value(i, w[i], g[i], next);
        let frozen = self.alpha[i] + self.spec.gamma;
        let c = match self.alpha[i] * self.laws[i].pgf_derivative(particular, self.settings.k_max) {
            d if frozen - d > 0.0 => frozen - d,
            _ => frozen,
        };
        let log = matches!(self.spec.diffusion, Coefficient::Linear { .. }) && x != 0.0;
        let (a, bb, dydx) = if log {
            (
                self.half_s2[i] / (x * x),
                self.drift[i] / x - self.half_s2[i] / (x * x),
                1.0 / x,
            )
        } else {
            (self.half_s2[i], self.drift[i], 1.0)
        };
        if !(a > 0.0) {
            let msg = format!("no diffusion at x = {x}; using v = g there");
            return (obstacle, Some(msg));
        }
        // roots of a λ² + bb λ − c = 0, one of each sign
        let disc = (bb * bb + 4.0 * a * c).sqrt();
        let q = -0.5 * (bb + bb.signum() * disc);
        let (r1, r2) = if q != 0.0 { (q / a, -c / q) } else { ((c / a).sqrt(), -(c / a).sqrt()) };
        let (pos, neg) = if r1 > 0.0 { (r1, r2) } else { (r2, r1) };
        let outward = match end {
            End::Right => dydx.signum(),
            End::Left => -dydx.signum(),
        };
        let exponent = if outward > 0.0 { neg } else { pos };
        (
            BoundaryInfo {
                x,
                kind: BoundaryKind::FarField,
                log_coordinate: log,
                exponent,
                slope: exponent * dydx,
                particular,
                value: f64::NAN,
            },
            None,
        )
    }

    /// Full system for the iterate `w`: interior rows plus boundary rows.
    fn system(
        &self,
        w: &[f64],
        g: &[f64],
        next: Option<[f64; 2]>,
    ) -> (Tridiag, Vec<f64>, [BoundaryInfo; 2], Vec<String>) {
        let n = self.len();
        let mut m = self.base.clone();
        let mut f = self.source(w);
        let mut warnings = Vec::new();
        let (left, wl) = self.boundary(End::Left, w, g, next.map(|p| p[0]));
        let (right, wr) = self.boundary(End::Right, w, g, next.map(|p| p[1]));
        warnings.extend(wl);
        warnings.extend(wr);
        let h = self.h;
        match left.kind {
            BoundaryKind::Obstacle => {
                m.diag[0] = 1.0;
                m.sup[0] = 0.0;
                f[0] = g[0];
            }
            BoundaryKind::FarField => {
                m.diag[0] = 1.0 + h * left.slope;
                m.sup[0] = -1.0;
                f[0] = h * left.slope * left.particular;
            }
        }
        match right.kind {
            BoundaryKind::Obstacle => {
                m.diag[n - 1] = 1.0;
                m.sub[n - 1] = 0.0;
                f[n - 1] = g[n - 1];
            }
            BoundaryKind::FarField => {
                m.diag[n - 1] = 1.0 - h * right.slope;
                m.sub[n - 1] = -1.0;
                f[n - 1] = -h * right.slope * right.particular;
            }
        }
        (m, f, [left, right], warnings)
    }

    fn linear_solve(&self, m: &Tridiag, f: &[f64], g: &[f64], v: &mut [f64]) -> Result<usize> {
        m.check_monotone()?;
        match self.settings.linear_solver {
            LinearSolver::PolicyIteration => policy_iteration(m, f, g, v, 4 * self.len() + 50),
            LinearSolver::Psor => psor(
                m,
                f,
                g,
                v,
                self.settings.omega,
                self.settings.tol_lin,
                self.settings.max_sweeps,
            ),
        }
    }

    /// Constant `U ≥ max g` with `(α+γ)U ≥ αG(U)` at every node.
    fn is_supersolution(&self, u: f64, g_max: f64) -> bool {
        u.is_finite()
            && u >= g_max
            && (0..self.len()).all(|i| {
                (self.alpha[i] + self.spec.gamma) * u
                    >= self.alpha[i] * self.laws[i].pgf(u, self.settings.k_max)
            })
    }

    fn initial_guess(&self, g: &[f64], v_bar: f64) -> (InitKind, f64) {
        let g_max = g.iter().copied().fold(0.0, f64::max);
        if self.is_supersolution(v_bar, g_max) {
            return (InitKind::ValueBound, v_bar);
        }
        if g_max > 0.0 && self.is_supersolution(g_max, g_max) {
            return (InitKind::RewardMax, g_max);
        }
        let mut u = g_max.max(1e-6);
        while u < 1e6 {
            if self.is_supersolution(u, g_max) {
                return (InitKind::Supersolution, u);
            }
            u *= 1.1;
        }
        (InitKind::Obstacle, g_max)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_level(
        &self,
        generation: usize,
        reward: &RewardFn,
        g: Vec<f64>,
        values: Vec<f64>,
        source_iterate: &[f64],
        next_far: Option<[f64; 2]>,
        fp_residual: f64,
        log: LevelLog,
        warnings: Vec<String>,
    ) -> LevelSolve {
        let (m, f, mut boundary, _) = self.system(source_iterate, &g, next_far);
        let operator_residual = scaled_residual(&m, &f, &values);
        let contact = values
            .iter()
            .zip(&g)
            .map(|(v, gi)| v - gi <= 1e-12 * gi.abs().max(1.0))
            .collect();
        boundary[0].value = values[0];
        boundary[1].value = values[values.len() - 1];
        let mut log = log;
        log.boundary = boundary.clone();
        LevelSolve {
            level: GridLevel {
                generation,
                reward: reward.clone(),
                values,
                obstacle: g,
                contact,
                operator_residual,
                fp_residual,
                boundary,
            },
            log,
            warnings,
        }
    }

    /// Self-consistent level: Picard iteration on the source.
    fn solve_fixed_point(&self, generation: usize, reward: &RewardFn, v_bar: f64) -> Result<LevelSolve> {
        let g = self.obstacle(reward);
        let mut warnings = Vec::new();
        let (init, init_value) = self.initial_guess(&g, v_bar);
        let mut w: Vec<f64> = match init {
            InitKind::Obstacle => {
                warnings.push(format!(
                    "generation {generation}: no constant supersolution found, iterating from g"
                ));
                g.clone()
            }
            _ => vec![init_value; self.len()],
        };
        let mut steps = Vec::new();
        let mut ratios = Vec::new();
        let mut lin_its = Vec::new();
        let mut monotone = true;
        let slack = 10.0 * self.settings.tol_lin;
        let mut converged = false;
        for _ in 0..self.settings.max_outer {
            let (m, f, _, bw) = self.system(&w, &g, None);
            if steps.is_empty() {
                warnings.extend(bw);
            }
            let mut v = w.clone();
            lin_its.push(self.linear_solve(&m, &f, &g, &mut v)?);
            let mut step: f64 = 0.0;
            for (vi, wi) in v.iter().zip(&w) {
                step = step.max((vi - wi).abs());
                if *vi > wi + slack * wi.abs().max(1.0) {
                    monotone = false;
                }
            }
            if let Some(&prev) = steps.last() {
                if prev > 0.0 {
                    ratios.push(step / prev);
                }
            }
            steps.push(step);
            w = v;
            if step < self.settings.tol_fp {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                what: "Picard iteration",
                iterations: self.settings.max_outer,
                residual: steps.last().copied().unwrap_or(f64::NAN),
            });
        }
        if !monotone && init != InitKind::Obstacle {
            warnings.push(format!("generation {generation}: Picard iterates were not monotone"));
        }
        let fp = steps.last().copied().unwrap_or(0.0);
        let log = LevelLog {
            generation,
            init,
            init_value,
            outer_iterations: steps.len(),
            steps,
            ratios,
            monotone,
            linear_iterations: lin_its,
            boundary: placeholder_boundary(),
        };
        let converged_w = w.clone();
        Ok(self.finish_level(generation, reward, g, w, &converged_w, None, fp, log, warnings))
    }

    /// Level coupled to an already solved next generation.
    fn solve_direct(&self, generation: usize, reward: &RewardFn, next: &GridLevel) -> Result<LevelSolve> {
        let next_far = match next.boundary[0].kind {
            BoundaryKind::FarField => Some([next.boundary[0].particular, next.boundary[1].particular]),
            BoundaryKind::Obstacle => None,
        };
        let next = &next.values;
        let g = self.obstacle(reward);
        let (m, f, _, warnings) = self.system(next, &g, next_far);
        let mut v: Vec<f64> = next.iter().zip(&g).map(|(a, b)| a.max(*b)).collect();
        let its = self.linear_solve(&m, &f, &g, &mut v)?;
        let log = LevelLog {
            generation,
            init: InitKind::NextLevel,
            init_value: f64::NAN,
            outer_iterations: 1,
            steps: Vec::new(),
            ratios: Vec::new(),
            monotone: true,
            linear_iterations: vec![its],
            boundary: placeholder_boundary(),
        };
        Ok(self.finish_level(generation, reward, g, v, next, next_far, 0.0, log, warnings))
    }
}

fn placeholder_boundary() -> [BoundaryInfo; 2] {
    let b = BoundaryInfo {
        x: f64::NAN,
        kind: BoundaryKind::Obstacle,
        log_coordinate: false,
        exponent: 0.0,
        slope: 0.0,
        particular: 0.0,
        value: 0.0,
    };
    [b.clone(), b]
}

fn assemble(
    problem: &Problem<'_>,
    solves: Vec<LevelSolve>,
    mut warnings: Vec<String>,
    report: crate::model::MomentReport,
) -> Result<ValueGrid> {
    let spec = problem.spec;
    let settings = problem.settings;
    let top = solves
        .iter()
        .flat_map(|s| s.level.values.iter().copied())
        .fold(1.0, f64::max);
    let tail_budget = series_tail_bound(spec, top, settings.k_max)?.value;
    if !report.unique_below_bound {
        warnings.push(format!(
            "uniqueness condition fails: gamma = {} <= threshold {:e}",
            spec.gamma, report.gamma_threshold
        ));
    }
    let mut levels = Vec::new();
    let mut logs = Vec::new();
    for s in solves {
        warnings.extend(s.warnings);
        levels.push(s.level);
        logs.push(s.log);
    }
    levels.sort_by_key(|l| l.generation);
    logs.sort_by_key(|l| l.generation);
    let mut grid = ValueGrid::unsolved(spec, settings);
    grid.log = Some(SolverLog {
        model_hash: grid.model_hash.clone(),
        settings: settings.clone(),
        m_bar: report.m_bar,
        m_bar_attained_interior: report.m_bar_attained_interior,
        value_bound: report.value_bound,
        ln_value_bound: report.ln_value_bound,
        gamma_threshold: report.gamma_threshold,
        uniqueness_condition_met: report.unique_below_bound,
        contraction_bound: report.contraction_bound,
        tail_budget,
        levels: logs,
        warnings,
    });
    grid.levels = levels;
    Ok(grid)
}

fn moments(problem: &Problem<'_>) -> Result<crate::model::MomentReport> {
    let points: Vec<Vec<f64>> = problem.xs.iter().map(|&x| vec![x]).collect();
    moment_report(problem.spec, 0.0, &points, DEFAULT_L_MAX)
}

/// Equal-reward problem with `g = g_D`; returns a single level.
pub fn solve_scalar(spec: &ModelSpec, settings: &SolverSettings) -> Result<ValueGrid> {
    let problem = Problem::new(spec, settings)?;
    let report = moments(&problem)?;
    let depth = spec.reward.depth;
    let mut warnings = Vec::new();
    if depth > 0 {
        warnings.push(format!("scalar solve of a depth-{depth} model returns the deep level only"));
    }
    let solve = problem.solve_fixed_point(depth, spec.reward.level(depth), report.value_bound)?;
    assemble(&problem, vec![solve], warnings, report)
}

/// Levels `0..=D`: the deep level by Picard iteration, then backward
/// induction, each level sourced by the one above it.
pub fn solve_generation_system(spec: &ModelSpec, settings: &SolverSettings) -> Result<ValueGrid> {
    let problem = Problem::new(spec, settings)?;
    let report = moments(&problem)?;
    let depth = spec.reward.depth;
    let mut solves = vec![problem.solve_fixed_point(depth, spec.reward.level(depth), report.value_bound)?];
    for n in (0..depth).rev() {
        let next = solves.last().expect("deep level solved").level.clone();
        solves.push(problem.solve_direct(n, spec.reward.level(n), &next)?);
    }
    assemble(&problem, solves, Vec::new(), report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelResiduals {
    pub generation: usize,
    pub max_obstacle_violation: f64,
    /// Largest `|residual|` where `v > g`.
    pub max_residual_free: f64,
    /// Smallest residual where `v = g`.
    pub min_residual_contact: f64,
    pub contact_cells: usize,
    pub fp_residual: f64,
}

pub fn residual_report(grid: &ValueGrid) -> Result<Vec<LevelResiduals>> {
    if !grid.is_solved() {
        return Err(Error::Unsolved);
    }
    Ok(grid
        .levels
        .iter()
        .map(|lev| {
            let mut r = LevelResiduals {
                generation: lev.generation,
                max_obstacle_violation: 0.0,
                max_residual_free: 0.0,
                min_residual_contact: f64::INFINITY,
                contact_cells: 0,
                fp_residual: lev.fp_residual,
            };
            for i in 0..lev.values.len() {
                r.max_obstacle_violation = r.max_obstacle_violation.max(lev.obstacle[i] - lev.values[i]);
                if lev.contact[i] {
                    r.contact_cells += 1;
                    r.min_residual_contact = r.min_residual_contact.min(lev.operator_residual[i]);
                } else {
                    r.max_residual_free = r.max_residual_free.max(lev.operator_residual[i].abs());
                }
            }
            r
        })
        .collect())
}

#[cfg(test)]
mod tests;
