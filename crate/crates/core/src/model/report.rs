//! Derived constants and numerical checks of the standing assumptions.

use serde::Serialize;

use super::{ModelSpec, Offspring, OffspringLaw, RateFn};
use crate::error::{Error, Result};

/// Largest moment order scanned when estimating `M̄ = sup_ℓ 2^ℓ M_ℓ`.
pub const DEFAULT_L_MAX: u32 = 20;

const MASS_TOL: f64 = 1e-12;
const MODULUS_K: u32 = 64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lipschitz {
    pub drift: f64,
    pub diffusion: f64,
    pub branch_rate: f64,
    /// Only for the Poisson family.
    pub offspring_mean: Option<f64>,
    /// Per reward level.
    pub reward: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    /// `sup_x Σ k p_k(x)`
    pub m: f64,
    /// `sup_x Σ k^ℓ p_k(x)` for `ℓ = 1..=l_max`.
    pub m_ell: Vec<f64>,
    pub m_bar: f64,
    /// Order attaining `m_bar`.
    pub m_bar_order: u32,
    pub l_max: u32,
    /// False when the supremum sits at the scan cap, i.e. `2^ℓ M_ℓ` is
    /// still growing and `m_bar` is only a truncated estimate.
    pub m_bar_attained_interior: bool,
    pub c: f64,
    pub value_bound: f64,
    pub ln_value_bound: f64,
    pub gamma: f64,
    pub gamma_threshold: f64,
    pub unique_below_bound: bool,
    /// `ᾱ M̄ C / ((ᾱ + γ)(C − 1))`, the Picard step ratio bound.
    pub contraction_bound: f64,
    pub lipschitz: Lipschitz,
    /// Largest change of the branch rate between neighbouring sample points.
    pub alpha_modulus: f64,
    /// Largest total-variation change of the offspring law between
    /// neighbouring sample points.
    pub offspring_modulus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub points: usize,
    pub max_mass_error: f64,
    pub max_branch_rate: f64,
    pub reward_min: f64,
    pub reward_max: f64,
    pub max_poisson_mean: Option<f64>,
    pub hard_violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.hard_violations.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailBound {
    pub value: f64,
    /// Computed from the family's own tail rather than the moment estimate.
    pub exact: bool,
}

/// `n` points evenly spaced on `[lo, hi]`, all coordinates equal.
pub fn linspace_points(lo: f64, hi: f64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![vec![lo; dim]],
        _ => (0..n)
            .map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64; dim])
            .collect(),
    }
}

/// `V̄ = exp(log(K_g) · K_g^{ᾱ M̄ / γ})` and its logarithm.
pub fn value_bound(spec: &ModelSpec, m_bar: f64) -> (f64, f64) {
    let ln_k = spec.k_g.ln();
    let ln_v = ln_k * (spec.alpha_bar * m_bar / spec.gamma * ln_k).exp();
    let ln_v = if ln_v.is_nan() { 0.0 } else { ln_v };
    (ln_v.exp(), ln_v)
}

fn c_ratio(c: f64) -> f64 {
    if c.is_infinite() {
        1.0
    } else if c <= 1.0 {
        f64::INFINITY
    } else {
        c / (c - 1.0)
    }
}

/// Range of offspring laws realised by the model, for sup estimates.
fn law_range(spec: &ModelSpec, points: &[Vec<f64>]) -> Vec<OffspringLaw> {
    match &spec.offspring {
        Offspring::Poisson { mean } => {
            let mut laws: Vec<OffspringLaw> =
                points.iter().map(|p| spec.offspring_law(p)).collect();
            laws.push(OffspringLaw::Poisson(mean.sup()));
            laws
        }
        _ => vec![spec.offspring_law_at(0.0)],
    }
}

/// Moment constants and the uniqueness condition.
///
/// `c = 0` selects `C = V̄`.
pub fn moment_report(
    spec: &ModelSpec,
    c: f64,
    points: &[Vec<f64>],
    l_max: u32,
) -> Result<MomentReport> {
    if points.is_empty() {
        return Err(Error::invalid("moment report needs a nonempty sample grid"));
    }
    if !(c == 0.0 || c > 1.0) {
        return Err(Error::invalid(format!("C must exceed 1 (or be 0), got {c}")));
    }
    let laws = law_range(spec, points);
    let sup = |ell: u32| laws.iter().map(|l| l.moment(ell)).fold(0.0, f64::max);
    let m_ell: Vec<f64> = (1..=l_max).map(sup).collect();
    let m = m_ell.first().copied().unwrap_or(0.0);

    let mut m_bar = 1.0;
    let mut m_bar_order = 0;
    for (i, &mo) in m_ell.iter().enumerate() {
        let ell = i as u32 + 1;
        let scaled = 2f64.powi(ell as i32) * mo;
        if scaled > m_bar {
            m_bar = scaled;
            m_bar_order = ell;
        }
    }

    let (v_bar, ln_v_bar) = value_bound(spec, m_bar);
    let c_used = if c == 0.0 { v_bar } else { c };
    let ratio = c_ratio(c_used);
    let gamma_threshold = spec.alpha_bar * (m_bar * ratio - 1.0);
    let contraction_bound = spec.alpha_bar * m_bar * ratio / (spec.alpha_bar + spec.gamma);

    let (alpha_modulus, offspring_modulus) = moduli(spec, points);

    Ok(MomentReport {
        m,
        m_ell,
        m_bar,
        m_bar_order,
        l_max,
        m_bar_attained_interior: m_bar_order < l_max,
        c: c_used,
        value_bound: v_bar,
        ln_value_bound: ln_v_bar,
        gamma: spec.gamma,
        gamma_threshold,
        unique_below_bound: spec.gamma > gamma_threshold,
        contraction_bound,
        lipschitz: lipschitz(spec),
        alpha_modulus,
        offspring_modulus,
    })
}

fn lipschitz(spec: &ModelSpec) -> Lipschitz {
    Lipschitz {
        drift: spec.drift.lipschitz(),
        diffusion: spec.diffusion.lipschitz(),
        branch_rate: spec.branch_rate.lipschitz(),
        offspring_mean: match &spec.offspring {
            Offspring::Poisson { mean } => Some(mean.lipschitz()),
            _ => None,
        },
        reward: spec.reward.levels.iter().map(|g| g.lipschitz()).collect(),
    }
}

fn moduli(spec: &ModelSpec, points: &[Vec<f64>]) -> (f64, f64) {
    let mut alpha_mod: f64 = 0.0;
    let mut p_mod: f64 = 0.0;
    for w in points.windows(2) {
        alpha_mod = alpha_mod.max((spec.branch_rate(&w[1]) - spec.branch_rate(&w[0])).abs());
        let (a, b) = (spec.offspring_law(&w[0]), spec.offspring_law(&w[1]));
        let tv: f64 = (0..=MODULUS_K).map(|k| (a.pmf(k) - b.pmf(k)).abs()).sum();
        p_mod = p_mod.max(tv);
    }
    (alpha_mod, p_mod)
}

/// Upper bound on `Σ_{k > k_max} p_k(x) R^k`, uniform in `x`.
pub fn series_tail_bound(spec: &ModelSpec, r: f64, k_max: u32) -> Result<TailBound> {
    if !(r > 0.0) {
        return Err(Error::invalid(format!("tail bound needs R > 0, got {r}")));
    }
    let value = match &spec.offspring {
        Offspring::Poisson { mean } => {
            // One-parameter family: scan the attainable means.
            let (lo, hi) = (mean.inf(), mean.sup());
            (0..=128)
                .map(|i| lo + (hi - lo) * f64::from(i) / 128.0)
                .map(|lambda| OffspringLaw::Poisson(lambda).tail(r, k_max))
                .fold(0.0, f64::max)
        }
        _ => spec.offspring_law_at(0.0).tail(r, k_max),
    };
    Ok(TailBound { value, exact: true })
}

/// Moment-only tail estimate from `Σ p_k R'^k ≤ C√R'` with `R' = R²`
/// (or `R' = 4` when `R ≤ 1`): `(R/R')^{k_max} C √R'`.
pub fn chebyshev_tail_estimate(m_bar: f64, r: f64, k_max: u32) -> Result<f64> {
    if !m_bar.is_finite() {
        return Err(Error::invalid("moment estimate unavailable"));
    }
    if !(r > 0.0) {
        return Err(Error::invalid(format!("tail bound needs R > 0, got {r}")));
    }
    let r2 = if r > 1.0 { r * r } else { 4.0 };
    Ok((r / r2).powi(k_max as i32) * m_bar * r2.sqrt())
}

/// Pointwise checks on a sample grid.
pub fn check_assumptions(spec: &ModelSpec, points: &[Vec<f64>]) -> AssumptionReport {
    let mut hard = Vec::new();
    let mut warnings = Vec::new();
    let mut max_mass_error: f64 = 0.0;
    let mut max_rate: f64 = 0.0;
    let mut reward_min = f64::INFINITY;
    let mut reward_max = f64::NEG_INFINITY;
    let mut max_lambda: Option<f64> = None;

    for x in points {
        let law = spec.offspring_law(x);
        max_mass_error = max_mass_error.max((law.total_mass() - 1.0).abs());
        max_rate = max_rate.max(spec.branch_rate(x));
        if let OffspringLaw::Poisson(lambda) = law {
            max_lambda = Some(max_lambda.map_or(lambda, |m: f64| m.max(lambda)));
        }
        for n in 0..spec.levels() {
            let g = spec.reward(n, x);
            reward_min = reward_min.min(g);
            reward_max = reward_max.max(g);
        }
    }

    if max_mass_error > MASS_TOL {
        hard.push(format!(
            "offspring probabilities sum to 1 only within {max_mass_error:e}"
        ));
    }
    if max_rate > spec.alpha_bar {
        hard.push(format!(
            "branch rate reaches {max_rate} above alpha_bar = {}",
            spec.alpha_bar
        ));
    } else if spec.branch_rate.sup() > spec.alpha_bar {
        hard.push(format!(
            "branch rate supremum {} exceeds alpha_bar = {}",
            spec.branch_rate.sup(),
            spec.alpha_bar
        ));
    }
    if reward_min < 0.0 || reward_max > spec.k_g {
        hard.push(format!(
            "rewards span [{reward_min}, {reward_max}], outside [0, {}]",
            spec.k_g
        ));
    }
    if let Offspring::Poisson { mean } = &spec.offspring {
        if mean.sup() > 0.5 {
            warnings.push(format!(
                "Poisson mean reaches {} > 1/2; the moment constant grows with the scan cap",
                mean.sup()
            ));
        }
    }
    if let RateFn::Logistic { .. } = spec.branch_rate {
        if spec.branch_rate.sup() < spec.alpha_bar {
            warnings.push("alpha_bar is not attained; thinning rejects more proposals than needed".into());
        }
    }

    AssumptionReport {
        points: points.len(),
        max_mass_error,
        max_branch_rate: max_rate,
        reward_min,
        reward_max,
        max_poisson_mean: max_lambda,
        hard_violations: hard,
        warnings,
    }
}
